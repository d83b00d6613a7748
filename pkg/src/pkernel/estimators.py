"""Kernel estimators: constrained least squares, relaxed maximum entropy, exact maximum entropy.

All three work on the parameter vector ``(P(0), w_1, ..., w_M)`` of a
:class:`~pkernel.core.CumulativeKernel`, against the exact put design matrix
from :func:`~pkernel.core.put_design`.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .core import CumulativeKernel, Grid, QuoteSet, put_design
from .errors import ConvergenceError, InfeasibleError, InputError, SpecError
from .nnls import natural_residual, nnls

__all__ = [
    "FitOptions",
    "Estimate",
    "fit_cls",
    "fit_rme",
    "fit_me_exact",
    "lambda_schedule",
    "divergence",
]

log = logging.getLogger(__name__)

ENTROPY_FORMS = ("generalized", "paper")

# smallest value an interior iterate may take; keeps log() finite
_FLOOR = 1e-300


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 100_000
    kkt_tol: float = 1e-8
    objective_rel_tol: float = 1e-10
    entropy_form: str = "generalized"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise SpecError("max_iterations must be positive")
        if not (self.kkt_tol > 0 and self.objective_rel_tol > 0):
            raise SpecError("tolerances must be positive")
        if self.entropy_form not in ENTROPY_FORMS:
            raise SpecError(f"entropy_form must be one of {ENTROPY_FORMS}")


@dataclass(eq=False)
class Estimate:
    """A fitted kernel together with its fit diagnostics.

    ``identifiable_upper`` is the largest quoted strike; node values above
    it are not pinned down by put prices (``extrapolated``). ``nonunique``
    marks parameters whose value the data leave undetermined: zero with a
    vanishing multiplier, or a column of zeros.
    """

    method: str
    kernel: CumulativeKernel
    fitted_prices: np.ndarray
    objective: float
    mse_term: float
    entropy_term: float
    iterations: int
    kkt_residual: float
    identifiable_upper: float
    lam: float = 0.0
    nonunique: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)
    history: list[float] = field(default_factory=list)
    runtime_ms: float = 0.0

    @property
    def extrapolated(self) -> np.ndarray:
        g = self.kernel.grid
        return np.arange(g.M + 1) >= g.n_identifiable(self.identifiable_upper)


def lambda_schedule(N: int, lambda0: float = 0.1, gamma: float = 0.5) -> float:
    """Penalty weight ``lambda0 * N**(-gamma)`` for a sample of ``N`` quotes."""
    if N <= 0 or lambda0 <= 0 or gamma <= 0:
        raise SpecError(f"lambda_schedule needs positive N, lambda0, gamma; got {N}, {lambda0}, {gamma}")
    return float(lambda0 * float(N) ** (-gamma))


def divergence(w, w0, form: str = "generalized") -> float:
    """Relative entropy of increments ``w`` against prior increments ``w0``.

    ``generalized`` is ``sum w ln(w/w0) - w + w0``, non-negative and zero
    only at ``w == w0``. ``paper`` drops the ``- w + w0`` correction.
    Cells with ``w0 == 0`` contribute 0 if ``w == 0`` and ``inf`` otherwise.
    """
    w = np.asarray(w, dtype=float)
    w0 = np.asarray(w0, dtype=float)
    pos = w > 0
    if np.any(pos & (w0 <= 0)):
        return float("inf")
    t = np.zeros_like(w)
    t[pos] = w[pos] * (np.log(w[pos]) - np.log(w0[pos]))
    if form == "generalized":
        t = t - w + w0
    elif form != "paper":
        raise SpecError(f"unknown entropy form {form!r}")
    return float(t.sum())


def _check_inputs(quotes: QuoteSet, grid: Grid):
    if quotes is None or len(quotes) == 0:
        raise InputError("no quotes to fit")
    return put_design(grid, quotes.strikes)


def _nonunique_mask(A, x, grad, tol):
    dead = ~np.any(A != 0, axis=0)
    return dead | ((x == 0) & (np.abs(grad) <= tol))


def fit_cls(quotes: QuoteSet, grid: Grid, opts: FitOptions | None = None) -> Estimate:
    """Least squares over the monotone cone ``{P(0) >= 0, w >= 0}``.

    The pricing map is linear in the parameters, so this is an NNLS problem,
    solved by the active-set method. The fitted price curve is convex and
    non-decreasing in the strike by construction.
    """
    opts = opts or FitOptions()
    t0 = time.perf_counter()
    A = _check_inputs(quotes, grid)
    S = quotes.prices
    try:
        x, iters = nnls(A, S, maxiter=opts.max_iterations)
    except ConvergenceError as exc:
        raise ConvergenceError(f"CLS did not converge: {exc}", x=exc.x, residual=exc.residual) from exc
    r = A @ x - S
    grad = 2.0 * (A.T @ r)
    kkt = natural_residual(x, grad)
    if kkt > opts.kkt_tol:
        raise ConvergenceError(f"CLS stopped with KKT residual {kkt:.3g} > {opts.kkt_tol:.3g}", x=x, residual=kkt)
    sse = float(r @ r)
    return Estimate(
        method="cls",
        kernel=CumulativeKernel.from_params(grid, x),
        fitted_prices=A @ x,
        objective=sse,
        mse_term=sse / len(quotes),
        entropy_term=0.0,
        iterations=iters,
        kkt_residual=kkt,
        identifiable_upper=quotes.max_strike,
        nonunique=_nonunique_mask(A, x, grad, opts.kkt_tol),
        history=[sse],
        runtime_ms=1e3 * (time.perf_counter() - t0),
    )


def _prior_params(prior: CumulativeKernel, grid: Grid) -> np.ndarray:
    if prior.grid != grid:
        raise SpecError(f"prior grid {prior.grid} differs from fit grid {grid}")
    return prior.params


def fit_rme(quotes: QuoteSet, prior: CumulativeKernel, lam: float, grid: Grid,
            opts: FitOptions | None = None) -> Estimate:
    """Relaxed maximum relative entropy fit.

    Minimizes ``(1/N) sum_i (S(K_i) - S_i)^2 + lam * D(P || prior)`` over
    the monotone cone, where ``D`` is the divergence of the increments
    (see :func:`divergence`) plus the same term for an atom ``P(0)`` at the
    origin. Parameters whose prior value is zero are held at zero, so a
    prior with ``P(0) = 0`` pins the base.

    Solved by a damped Newton method in the positive orthant with
    affine scaling: the step solves ``(D H D) y = -D g`` with
    ``D = diag(sqrt(x))`` and is cut back to stay strictly interior.
    ``lam == 0`` is the least squares problem and is handed to :func:`fit_cls`.
    """
    opts = opts or FitOptions()
    if not np.isfinite(lam) or lam < 0:
        raise SpecError(f"lambda must be a non-negative number, got {lam}")
    if lam == 0:
        est = fit_cls(quotes, grid, opts)
        est.method = "rme"
        return est
    t0 = time.perf_counter()
    A = _check_inputs(quotes, grid)
    S = quotes.prices
    N = len(quotes)
    x0_full = _prior_params(prior, grid)
    free = x0_full > 0
    if not free.any():
        raise SpecError("prior kernel has no positive parameter to fit")
    Af = A[:, free]
    x0 = x0_full[free]
    G = (2.0 / N) * (Af.T @ Af)
    c = (2.0 / N) * (Af.T @ S)
    shift = 1.0 if opts.entropy_form == "paper" else 0.0

    def objective(x):
        r = Af @ x - S
        ent = x * (np.log(x) - np.log(x0))
        if opts.entropy_form == "generalized":
            ent = ent - x + x0
        mse = float(r @ r) / N
        return mse + lam * float(ent.sum()), mse

    def gradient(x):
        return G @ x - c + lam * (np.log(x / x0) + shift)

    x = x0.copy()
    f, mse = objective(x)
    history = [f]
    converged = False
    it = 0
    kkt = np.inf
    while it < opts.max_iterations:
        it += 1
        g = gradient(x)
        kkt = natural_residual(x, g)
        d_sqrt = np.sqrt(x)
        Hs = d_sqrt[:, None] * G * d_sqrt[None, :]
        Hs[np.diag_indices_from(Hs)] += lam
        try:
            y = cho_solve(cho_factor(Hs, check_finite=False), -d_sqrt * g, check_finite=False)
        except LinAlgError:
            y = np.linalg.lstsq(Hs, -d_sqrt * g, rcond=None)[0]
        d = d_sqrt * y
        slope = float(g @ d)
        if kkt <= opts.kkt_tol and -slope <= opts.objective_rel_tol * max(abs(f), 1e-300):
            converged = True
            break
        neg = d < 0
        alpha = 1.0
        if neg.any():
            alpha = min(1.0, 0.995 * float(np.min(x[neg] / -d[neg])))
        # below this predicted decrease, objective values are pure roundoff
        noise_floor = 1e3 * np.finfo(float).eps * max(abs(f), 1e-300)
        accepted = False
        while alpha > 1e-30:
            x_new = np.maximum(x + alpha * d, _FLOOR)
            f_new, mse_new = objective(x_new)
            if f_new <= f + 1e-4 * alpha * slope or -alpha * slope <= noise_floor:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            converged = kkt <= opts.kkt_tol
            break
        rel = abs(f - f_new) / max(abs(f_new), 1e-300)
        x, f, mse = x_new, f_new, mse_new
        history.append(f)
        if rel <= opts.objective_rel_tol:
            kkt = natural_residual(x, gradient(x))
            if kkt <= opts.kkt_tol:
                converged = True
                break
    if not converged:
        full = np.zeros_like(x0_full)
        full[free] = x
        raise ConvergenceError(
            f"RME did not converge in {it} iterations (KKT residual {kkt:.3g})", x=full, residual=kkt)

    params = np.zeros_like(x0_full)
    params[free] = x
    warnings = []
    # cells the prior rules out but the data would like to fill
    data_grad = (2.0 / N) * (A.T @ (A @ params - S))
    wanted = np.flatnonzero(~free[1:] & (data_grad[1:] < -opts.kkt_tol)) + 1
    if wanted.size:
        msg = (f"divergence-infinite: prior has zero increment in {wanted.size} cell(s) "
               f"where the data ask for mass: {wanted.tolist()}")
        warnings.append(msg)
        log.warning(msg)
    entropy_value = divergence(params, x0_full, opts.entropy_form)
    return Estimate(
        method="rme",
        kernel=CumulativeKernel.from_params(grid, params),
        fitted_prices=A @ params,
        objective=f,
        mse_term=mse,
        entropy_term=entropy_value,
        iterations=it,
        kkt_residual=kkt,
        identifiable_upper=quotes.max_strike,
        lam=float(lam),
        nonunique=np.zeros(grid.M + 1, dtype=bool),
        warnings=warnings,
        history=history,
        runtime_ms=1e3 * (time.perf_counter() - t0),
    )


def fit_me_exact(quotes: QuoteSet, prior: CumulativeKernel, grid: Grid,
                 opts: FitOptions | None = None, max_newton: int = 500) -> Estimate:
    """Minimum divergence from ``prior`` subject to matching every quote exactly.

    The base ``P(0)`` is taken from the prior. The dual is maximized by
    damped Newton; increments are ``w0 * exp(A^T nu - c)`` with ``c = 1``
    for the paper form and ``c = 0`` for the generalized one.

    Raises :class:`InfeasibleError` when no kernel with finite divergence
    reproduces the quotes, which is the generic situation for noisy prices.
    """
    opts = opts or FitOptions()
    t0 = time.perf_counter()
    A = _check_inputs(quotes, grid)
    x0_full = _prior_params(prior, grid)
    base = x0_full[0]
    w0 = x0_full[1:]
    cells = w0 > 0
    Aw = A[:, 1:][:, cells]
    target = quotes.prices - base * A[:, 0]
    scale = max(1.0, float(np.abs(quotes.prices).max()))
    tol = 1e-12 * scale
    c = 1.0 if opts.entropy_form == "paper" else 0.0

    # a monotone kernel must reproduce the quotes before any entropy question
    x_ls, _ = nnls(A, quotes.prices, maxiter=opts.max_iterations)
    ls_res = float(np.max(np.abs(A @ x_ls - quotes.prices)))
    if ls_res > 1e-9 * scale:
        raise InfeasibleError(
            f"no non-decreasing kernel reproduces the quotes (least squares residual {ls_res:.3g})",
            residual=ls_res)

    def primal(nu):
        with np.errstate(over="ignore"):
            return w0[cells] * np.exp(Aw.T @ nu - c)

    def dual(nu, w):
        return float(nu @ target - w.sum())

    nu = np.zeros(len(quotes))
    w = primal(nu)
    psi = dual(nu, w)
    resid = target - Aw @ w
    it = 0
    while np.max(np.abs(resid)) > tol:
        if it >= min(max_newton, opts.max_iterations):
            raise InfeasibleError(
                f"exact maximum entropy failed after {it} Newton steps "
                f"(max constraint residual {np.max(np.abs(resid)):.3g}); "
                "the prices admit no interior solution", residual=float(np.max(np.abs(resid))))
        it += 1
        H = (Aw * w) @ Aw.T
        H[np.diag_indices_from(H)] += 1e-14 * max(np.trace(H), 1e-300)
        try:
            step = cho_solve(cho_factor(H, check_finite=False), resid, check_finite=False)
        except LinAlgError:
            step = np.linalg.lstsq(H, resid, rcond=None)[0]
        gain = float(resid @ step)
        alpha = 1.0
        while alpha > 1e-12:
            nu_new = nu + alpha * step
            w_new = primal(nu_new)
            if np.all(np.isfinite(w_new)):
                psi_new = dual(nu_new, w_new)
                if psi_new >= psi + 1e-4 * alpha * gain:
                    break
            alpha *= 0.5
        else:
            raise InfeasibleError(
                f"dual line search stalled with constraint residual {np.max(np.abs(resid)):.3g}",
                residual=float(np.max(np.abs(resid))))
        nu, w, psi = nu_new, w_new, psi_new
        resid = target - Aw @ w

    params = x0_full.copy()
    params[1:] = 0.0
    params[1:][cells] = w
    fitted = A @ params
    r = fitted - quotes.prices
    ent = divergence(params[1:], w0, opts.entropy_form)
    return Estimate(
        method="me",
        kernel=CumulativeKernel.from_params(grid, params),
        fitted_prices=fitted,
        objective=ent,
        mse_term=float(r @ r) / len(quotes),
        entropy_term=ent,
        iterations=it,
        kkt_residual=float(np.max(np.abs(r))),
        identifiable_upper=quotes.max_strike,
        nonunique=np.zeros(grid.M + 1, dtype=bool),
        history=[ent],
        runtime_ms=1e3 * (time.perf_counter() - t0),
    )
