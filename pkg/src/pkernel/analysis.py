"""Numerical experiments around the estimators.

The instability demo, the empirical delta-entropy of a function family,
executable checks for the continuity bound, the density lemma and the
projection inequality, and the seeded Monte Carlo consistency study.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (
    CumulativeKernel,
    Grid,
    Payoff,
    QuoteSet,
    integrate_nodes,
    l2_distance,
    price_payoff,
    put_design,
    put_family,
    put_payoff,
    sup_distance,
    total_variation,
    validate_payoff_family,
    digital_payoff,
)
from .errors import ConvergenceError, DomainError, InputError, PkernelError, ShapeError, SpecError
from .estimators import FitOptions, fit_cls, fit_rme, lambda_schedule
from .synth import (
    KernelSpec,
    NoiseSpec,
    StrikeDensitySpec,
    generate_quotes,
    make_kernel,
    make_rng,
    random_kernel,
    sample_strikes,
)

__all__ = [
    "IllposedResult",
    "illposed_demo",
    "EntropyReport",
    "empirical_entropy",
    "ContinuityCheck",
    "check_continuity_bound",
    "DensityCheck",
    "check_density_lemma",
    "ProjectionReport",
    "check_projection_inequality",
    "StudyConfig",
    "StudyRow",
    "StudyReport",
    "run_consistency_study",
    "SuiteResult",
    "run_check_suite",
    "put_price_family",
]

log = logging.getLogger(__name__)


# -- instability without the monotone cone ---------------------------------

@dataclass
class IllposedResult:
    alpha: float
    beta: float
    K_bar: float
    input_sup: float
    output_sup: float
    amplification: float
    closed_form_output_sup: float


def illposed_demo(alpha: float, beta: float, K_bar: float = 1.0, grid: Grid | None = None) -> IllposedResult:
    """Push ``alpha cos(beta x)`` through the put operator ``K -> int_0^K``.

    The input keeps sup norm ``alpha`` while its image shrinks to
    ``alpha/beta``, so an inverse defined on all continuous functions
    amplifies perturbations by ``beta``. The image is integrated
    numerically on ``grid`` (default: ``10^4`` cells over ``[0, K_bar]``).
    """
    if alpha < 0 or not beta > 0:
        raise DomainError(f"need alpha >= 0 and beta > 0, got alpha={alpha}, beta={beta}")
    if beta * K_bar < math.pi / 2:
        raise DomainError(f"beta * K_bar = {beta * K_bar:.4g} < pi/2; the sine never reaches its peak")
    grid = grid or Grid(K_bar, 10_000)
    x = grid.nodes[grid.nodes <= K_bar * (1 + 1e-12)]
    f = alpha * np.cos(beta * x)
    image = integrate_nodes(Grid(x[-1], x.size - 1), f) if x.size > 2 else np.zeros_like(x)
    in_sup = float(np.max(np.abs(f)))
    out_sup = float(np.max(np.abs(image)))
    amp = in_sup / out_sup if out_sup > 0 else float("nan")
    return IllposedResult(alpha, beta, K_bar, in_sup, out_sup, amp, alpha / beta)


# -- empirical delta-entropy -------------------------------------------------

@dataclass
class EntropyReport:
    delta: float
    n: int
    M_hat: int
    N_hat: float
    centers: list[int] = field(default_factory=list)


def empirical_entropy(family, delta: float, points=None) -> EntropyReport:
    """Greedy internal ``delta``-covering of a function family.

    ``family`` is an ``(m, n)`` array: ``m`` functions sampled at the same
    ``n`` points (``points`` is informational). Distances are the empirical
    RMS ``sqrt(mean_i (f(x_i) - g(x_i))^2)``. The greedy count ``M_hat`` is
    an upper bound on the minimal covering number by family members, and
    ``N_hat = ln(M_hat) / n``.
    """
    F = np.atleast_2d(np.asarray(family, dtype=float))
    if F.size == 0 or F.shape[0] == 0:
        raise InputError("empty function family")
    if not delta > 0:
        raise InputError(f"delta must be positive, got {delta}")
    if points is not None and np.size(points) != F.shape[1]:
        raise ShapeError(f"{np.size(points)} points for functions sampled at {F.shape[1]}")
    n = F.shape[1]
    uncovered = np.ones(F.shape[0], dtype=bool)
    centers = []
    while uncovered.any():
        c = int(np.argmax(uncovered))
        centers.append(c)
        d = np.sqrt(np.mean((F - F[c]) ** 2, axis=1))
        uncovered &= d > delta
    m_hat = len(centers)
    return EntropyReport(float(delta), n, m_hat, math.log(m_hat) / n, centers)


def put_price_family(n_functions: int, points, grid: Grid, seed: int) -> np.ndarray:
    """Put-price curves of random feasible kernels, sampled at ``points``.

    Each curve is Lipschitz in the strike with constant ``P(B)``, so the
    family is uniformly Lipschitz and bounded.
    """
    rng = make_rng(seed, 3)
    A = put_design(grid, points)
    return np.stack([A @ random_kernel(rng, grid).params for _ in range(n_functions)])


# -- lemma checkers ----------------------------------------------------------

@dataclass
class ContinuityCheck:
    lhs: float
    bound: float
    holds: bool


def check_continuity_bound(P1: CumulativeKernel, P2: CumulativeKernel, F: Payoff) -> ContinuityCheck:
    """``|S(P1) - S(P2)| <= TV(F) * ||P1 - P2||_inf`` for the Stieltjes price."""
    if not (P1.grid == P2.grid == F.grid):
        raise ShapeError("kernels and payoff must share one grid")
    lhs = abs(price_payoff(P1, F) - price_payoff(P2, F))
    bound = total_variation(F.values) * sup_distance(P1, P2)
    return ContinuityCheck(lhs, bound, bool(lhs <= bound + 1e-10))


@dataclass
class DensityCheck:
    empirical_mean: float
    integral: float
    k: float
    tol: float
    bound_holds: bool


def check_density_lemma(f, strikes, k: float, grid: Grid) -> DensityCheck:
    """Compare ``int_0^B f`` with ``mean_i f(K_i) / k`` for strikes of density ``>= k``.

    ``f`` is either a callable or its values at the grid nodes (then
    evaluated at the strikes by linear interpolation). The bound allows the
    Monte Carlo slack ``3 sup(f) / sqrt(N)``.
    """
    strikes = np.asarray(strikes, dtype=float)
    if strikes.size == 0:
        raise InputError("no strikes")
    if not k > 0:
        raise InputError(f"density lower bound must be positive, got {k}")
    if callable(f):
        nodes_f = np.asarray(f(grid.nodes), dtype=float) * np.ones(grid.M + 1)
        at_strikes = np.asarray(f(strikes), dtype=float) * np.ones(strikes.size)
    else:
        nodes_f = np.asarray(f, dtype=float)
        if nodes_f.shape != (grid.M + 1,):
            raise ShapeError(f"f needs {grid.M + 1} node values, got shape {nodes_f.shape}")
        at_strikes = np.interp(strikes, grid.nodes, nodes_f)
    if np.any(nodes_f < 0) or np.any(at_strikes < 0):
        raise InputError("f must be non-negative")
    mean = float(at_strikes.mean())
    integral = float(integrate_nodes(grid, nodes_f)[-1])
    tol = 3.0 * float(max(nodes_f.max(), at_strikes.max())) / math.sqrt(strikes.size)
    return DensityCheck(mean, integral, float(k), tol, bool(integral <= mean / k + tol))


@dataclass
class ProjectionReport:
    slacks: np.ndarray
    worst_slack: float
    tolerance: float
    passed: bool


def check_projection_inequality(quotes: QuoteSet, cls_estimate, trial_kernels: Sequence[CumulativeKernel]) -> ProjectionReport:
    """Pythagorean inequality for the projection onto the convex price cone.

    For every feasible trial kernel ``R``:
    ``|R - S|^2 >= |S_hat - S|^2 + |R - S_hat|^2 - 1e-8 N``.
    Equality holds along the ray through the fit, including ``R = 0``.
    """
    grid = cls_estimate.kernel.grid
    A = put_design(grid, quotes.strikes)
    S = quotes.prices
    S_hat = A @ cls_estimate.kernel.params
    base = float(np.sum((S_hat - S) ** 2))
    slacks = []
    for R in trial_kernels:
        if not isinstance(R, CumulativeKernel):
            raise InputError("trial kernels must be CumulativeKernel instances")
        if np.any(R.increments < 0) or R.base < 0:
            raise InputError("trial kernel is not feasible")
        r = A @ R.params
        slacks.append(float(np.sum((r - S) ** 2) - base - np.sum((r - S_hat) ** 2)))
    slacks = np.asarray(slacks)
    tol = 1e-8 * len(quotes)
    worst = float(slacks.min()) if slacks.size else 0.0
    return ProjectionReport(slacks, worst, tol, bool(worst >= -tol))


# -- consistency study -------------------------------------------------------

@dataclass
class StudyConfig:
    truth: KernelSpec = field(default_factory=KernelSpec)
    prior: KernelSpec = field(default_factory=lambda: KernelSpec("uniform", total_mass=1.0))
    grid: Grid = field(default_factory=Grid)
    N_schedule: tuple[int, ...] = (100, 200, 400, 800, 1600)
    replications: int = 20
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    strike_spec: StrikeDensitySpec = field(default_factory=StrikeDensitySpec)
    methods: tuple[str, ...] = ("cls", "rme")
    master_seed: int = 0
    lambda0: float = 0.1
    gamma: float = 0.5

    def __post_init__(self):
        self.N_schedule = tuple(int(n) for n in self.N_schedule)
        self.methods = tuple(self.methods)
        if not self.N_schedule or any(n < 1 for n in self.N_schedule):
            raise SpecError("N_schedule must hold positive sample sizes")
        if any(b <= a for a, b in zip(self.N_schedule, self.N_schedule[1:])):
            raise SpecError("N_schedule must be strictly increasing")
        if self.replications < 1:
            raise SpecError("replications must be at least 1")
        bad = set(self.methods) - {"cls", "rme"}
        if bad or not self.methods:
            raise SpecError(f"methods must be a non-empty subset of {{cls, rme}}, got {self.methods}")
        make_rng(self.master_seed)
        if self.strike_spec.K_bar > self.grid.B:
            raise SpecError("strikes may not exceed the grid bound")

    def to_dict(self) -> dict:
        return {
            "truth": self.truth.to_dict(),
            "prior": self.prior.to_dict(),
            "grid": {"B": self.grid.B, "M": self.grid.M},
            "N_schedule": list(self.N_schedule),
            "replications": self.replications,
            "noise": {"kind": self.noise.kind, "sigma": self.noise.sigma},
            "strike_spec": self.strike_spec.to_dict(),
            "methods": list(self.methods),
            "master_seed": self.master_seed,
            "lambda0": self.lambda0,
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        d = dict(d)
        kw = {}
        if "truth" in d:
            kw["truth"] = KernelSpec.from_dict(d.pop("truth"))
        if "prior" in d:
            kw["prior"] = KernelSpec.from_dict(d.pop("prior"))
        if "grid" in d:
            kw["grid"] = Grid(**d.pop("grid"))
        if "noise" in d:
            kw["noise"] = NoiseSpec(**d.pop("noise"))
        if "strike_spec" in d:
            kw["strike_spec"] = StrikeDensitySpec(**d.pop("strike_spec"))
        kw.update(d)
        return cls(**kw)


@dataclass
class StudyRow:
    method: str
    N: int
    replication: int
    seed: int
    lam: float
    sup_error: float
    l2_error: float
    objective: float
    iterations: int
    runtime_ms: float = field(default=0.0, compare=False)


@dataclass
class StudyReport:
    config: StudyConfig
    rows: list[StudyRow]
    failures: list[dict] = field(default_factory=list)

    def median(self, method: str, N: int, metric: str = "sup_error") -> float:
        vals = [getattr(r, metric) for r in self.rows if r.method == method and r.N == N]
        return float(np.median(vals)) if vals else float("nan")

    def medians(self) -> list[dict]:
        out = []
        for m in self.config.methods:
            for n in self.config.N_schedule:
                k = sum(1 for r in self.rows if r.method == m and r.N == n)
                out.append({"method": m, "N": n, "n_ok": k,
                            "median_sup_error": self.median(m, n, "sup_error"),
                            "median_l2_error": self.median(m, n, "l2_error")})
        return out

    def trend(self) -> dict:
        """Ratio of median error at the largest ``N`` to the smallest, per method."""
        lo, hi = self.config.N_schedule[0], self.config.N_schedule[-1]
        out = {}
        for m in self.config.methods:
            out[m] = {}
            for metric in ("sup_error", "l2_error"):
                a, b = self.median(m, lo, metric), self.median(m, hi, metric)
                out[m][metric] = b / a if a > 0 else float("nan")
        return out

    def summary(self) -> dict:
        return {"config": self.config.to_dict(), "medians": self.medians(),
                "trend": self.trend(), "n_rows": len(self.rows), "failures": self.failures}


def _replicate(config: StudyConfig, truth: CumulativeKernel, prior: CumulativeKernel,
               N: int, r: int, opts: FitOptions):
    seed = config.master_seed + r
    strikes = sample_strikes(N, config.strike_spec, seed)
    noise = NoiseSpec(config.noise.kind, config.noise.sigma, seed)
    quotes = generate_quotes(truth, strikes, noise, K_bar=config.strike_spec.K_bar)
    upper = quotes.max_strike
    rows, failures = [], []
    for method in config.methods:
        lam = lambda_schedule(N, config.lambda0, config.gamma) if method == "rme" else 0.0
        try:
            if method == "cls":
                est = fit_cls(quotes, config.grid, opts)
            else:
                est = fit_rme(quotes, prior, lam, config.grid, opts)
        except (ConvergenceError, PkernelError) as exc:
            failures.append({"method": method, "N": N, "replication": r, "seed": seed, "error": str(exc)})
            continue
        rows.append(StudyRow(method, N, r, seed, lam,
                             sup_distance(est.kernel, truth, upper),
                             l2_distance(est.kernel, truth, upper),
                             est.objective, est.iterations, est.runtime_ms))
    return rows, failures


def run_consistency_study(config: StudyConfig, opts: FitOptions | None = None,
                          progress: Callable[[str], None] | None = None) -> StudyReport:
    """Monte Carlo over sample sizes and replications; errors vs truth on ``[0, max strike]``.

    Replication ``r`` uses seed ``master_seed + r`` for both its strikes and
    its noise (separate Philox streams). Fit failures are collected, not
    raised, unless more than half of all fits fail.
    """
    opts = opts or FitOptions()
    truth = make_kernel(config.truth, config.grid)
    prior = make_kernel(config.prior, config.grid)
    rows, failures = [], []
    for N in config.N_schedule:
        t0 = time.perf_counter()
        for r in range(config.replications):
            rr, ff = _replicate(config, truth, prior, N, r, opts)
            rows.extend(rr)
            failures.extend(ff)
        if progress:
            progress(f"N={N}: {config.replications} replications in {time.perf_counter() - t0:.2f}s")
    total = len(rows) + len(failures)
    if len(failures) * 2 > total:
        raise ConvergenceError(f"{len(failures)} of {total} fits failed; study aborted")
    rows.sort(key=lambda row: (config.methods.index(row.method), row.N, row.replication))
    return StudyReport(config, rows, failures)


# -- randomized lemma suites -------------------------------------------------

@dataclass
class SuiteResult:
    name: str
    passed: bool
    trials: int
    violations: int
    detail: str


def _random_payoff(rng: np.random.Generator, grid: Grid) -> Payoff:
    kind = rng.integers(3)
    if kind == 0:
        return put_payoff(grid, float(rng.uniform(0, grid.B)))
    if kind == 1:
        return digital_payoff(grid, float(rng.uniform(0, grid.B * (1 - 1e-9))))
    # random walk payoff pinned to zero at B
    v = np.cumsum(rng.standard_normal(grid.M + 1))
    v = v - v[-1]
    return Payoff(grid, v)


def suite_continuity(seed: int, trials: int = 1000, grid: Grid | None = None) -> SuiteResult:
    rng = make_rng(seed, 10)
    grid = grid or Grid(1.0, 200)
    bad, worst = 0, 0.0
    for _ in range(trials):
        P1 = random_kernel(rng, grid, max_mass=float(rng.uniform(0.1, 2.0)), sparsity=float(rng.uniform(0, 0.9)))
        P2 = random_kernel(rng, grid, max_mass=float(rng.uniform(0.1, 2.0)), sparsity=float(rng.uniform(0, 0.9)))
        chk = check_continuity_bound(P1, P2, _random_payoff(rng, grid))
        bad += not chk.holds
        if chk.bound > 0:
            worst = max(worst, chk.lhs / chk.bound)
    return SuiteResult("continuity_bound", bad == 0, trials, bad, f"max lhs/bound = {worst:.6f}")


def suite_projection(seed: int, n_kernels: int = 100, n_quotes: int = 50, grid: Grid | None = None,
                     sigma: float = 0.01) -> SuiteResult:
    grid = grid or Grid()
    truth = make_kernel(KernelSpec(), grid)
    strikes = sample_strikes(n_quotes, StrikeDensitySpec(K_bar=grid.B), seed)
    quotes = generate_quotes(truth, strikes, NoiseSpec(sigma=sigma, seed=seed))
    est = fit_cls(quotes, grid)
    rng = make_rng(seed, 11)
    trials = [random_kernel(rng, grid, max_mass=2.0, sparsity=float(rng.uniform(0, 0.95)))
              for _ in range(n_kernels)]
    rep = check_projection_inequality(quotes, est, trials)
    return SuiteResult("projection_inequality", rep.passed, n_kernels, int(np.sum(rep.slacks < -rep.tolerance)),
                       f"worst slack {rep.worst_slack:.3e} vs tolerance -{rep.tolerance:.1e}")


def suite_density(seed: int, n_seeds: int = 50, N: int = 100_000, grid: Grid | None = None) -> SuiteResult:
    grid = grid or Grid()
    spec = StrikeDensitySpec(K_bar=grid.B)
    bad, worst = 0, -np.inf
    for s in range(seed, seed + n_seeds):
        chk = check_density_lemma(lambda x: x ** 2, sample_strikes(N, spec, s), spec.lower_bound_k, grid)
        bad += not chk.bound_holds
        worst = max(worst, chk.integral - chk.empirical_mean / chk.k - chk.tol)
    return SuiteResult("density_lemma", bad == 0, n_seeds, bad, f"max(integral - mean/k - tol) = {worst:.3e}")


def suite_entropy(seed: int, n_functions: int = 200, delta: float = 0.05, sizes=(100, 1000),
                  grid: Grid | None = None) -> SuiteResult:
    grid = grid or Grid()
    spec = StrikeDensitySpec(K_bar=grid.B)
    reports = []
    for n in sizes:
        pts = sample_strikes(n, spec, seed)
        reports.append(empirical_entropy(put_price_family(n_functions, pts, grid, seed), delta, pts))
    ok = all(b.N_hat < a.N_hat for a, b in zip(reports, reports[1:]))
    detail = ", ".join(f"n={r.n}: M_hat={r.M_hat}, N_hat={r.N_hat:.5f}" for r in reports)
    return SuiteResult("entropic_thinness", ok, len(sizes), 0 if ok else 1, detail)


def suite_illposed(betas=(10.0, 100.0, 1000.0), M: int = 10_000) -> SuiteResult:
    bad, parts = 0, []
    for b in betas:
        res = illposed_demo(1.0, b, 1.0, Grid(1.0, M))
        ratio = res.amplification / b
        bad += not (0.99 <= ratio <= 1.01)
        parts.append(f"beta={b:g}: amplification/beta={ratio:.5f}")
    return SuiteResult("illposed_amplification", bad == 0, len(betas), bad, "; ".join(parts))


def suite_payoff_family(grid: Grid | None = None) -> SuiteResult:
    grid = grid or Grid()
    rep = validate_payoff_family(put_family(grid, [0.2, 0.5, 0.8]))
    ok = rep.passed and rep.worst_lipschitz_ratio <= 1 + 1e-12
    return SuiteResult("put_family_regularity", ok, rep.n_payoffs, len(rep.violations),
                       f"Lipschitz ratio {rep.worst_lipschitz_ratio:.6f}, max variation {rep.max_variation:.6f}")


def run_check_suite(seed: int = 0) -> list[SuiteResult]:
    """All randomized lemma suites at their default sizes."""
    return [
        suite_continuity(seed),
        suite_projection(seed),
        suite_density(seed),
        suite_entropy(seed),
        suite_illposed(),
        suite_payoff_family(),
    ]
