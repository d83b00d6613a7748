"""Grids, cumulative kernels, payoffs and the forward pricing operators.

A cumulative pricing kernel ``P`` lives on a uniform grid over ``[0, B]`` and
is stored as ``P(0)`` plus non-negative increments, so the monotone cone is a
plain sign constraint. ``P`` is the piecewise-linear interpolant of its node
values, which makes the put pricing map ``K -> int_0^K P(x) dx`` an exactly
linear function of the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, InputError, ShapeError, SpecError

__all__ = [
    "Grid",
    "CumulativeKernel",
    "Payoff",
    "QuoteSet",
    "PayoffFamilyReport",
    "put_design",
    "price_put",
    "price_payoff",
    "integrate_nodes",
    "total_variation",
    "sup_distance",
    "l2_distance",
    "put_payoff",
    "put_family",
    "digital_payoff",
    "validate_payoff_family",
]

# slack for strikes that land a few ulps outside [0, B]
_DOMAIN_SLACK = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``x_j = j*B/M`` for ``j = 0..M``."""

    B: float = 1.0
    M: int = 400

    def __post_init__(self):
        if not np.isfinite(self.B) or self.B <= 0:
            raise SpecError(f"grid bound B must be positive, got {self.B}")
        if int(self.M) != self.M or self.M < 2:
            raise SpecError(f"grid needs an integer M >= 2 cells, got {self.M}")
        object.__setattr__(self, "B", float(self.B))
        object.__setattr__(self, "M", int(self.M))

    @property
    def dx(self) -> float:
        return self.B / self.M

    @property
    def nodes(self) -> np.ndarray:
        x = np.arange(self.M + 1, dtype=float) * self.dx
        x[-1] = self.B
        return x

    @property
    def midpoints(self) -> np.ndarray:
        x = self.nodes
        return 0.5 * (x[1:] + x[:-1])

    def n_identifiable(self, upper: float | None) -> int:
        """Number of leading nodes with ``x_j <= upper`` (all nodes if None)."""
        if upper is None:
            return self.M + 1
        return int(np.searchsorted(self.nodes, upper * (1 + 1e-12) + 1e-15, side="right"))


@dataclass(frozen=True, eq=False)
class CumulativeKernel:
    """Non-decreasing, bounded, piecewise-linear cumulative kernel."""

    grid: Grid
    base: float
    increments: np.ndarray

    def __post_init__(self):
        w = _frozen(self.increments)
        if w.shape != (self.grid.M,):
            raise ShapeError(f"expected {self.grid.M} increments, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or not np.isfinite(self.base):
            raise SpecError("kernel parameters must be finite")
        if np.any(w < 0):
            raise SpecError(f"increments must be non-negative (min {w.min():.3g})")
        if self.base < 0:
            raise SpecError(f"base P(0) must be non-negative, got {self.base}")
        object.__setattr__(self, "increments", w)
        object.__setattr__(self, "base", float(self.base))

    @classmethod
    def from_params(cls, grid: Grid, params) -> "CumulativeKernel":
        """Build from the stacked vector ``(base, w_1, ..., w_M)``."""
        params = np.asarray(params, dtype=float)
        return cls(grid, params[0], params[1:])

    @classmethod
    def from_values(cls, grid: Grid, values) -> "CumulativeKernel":
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.M + 1,):
            raise ShapeError(f"expected {grid.M + 1} node values, got shape {values.shape}")
        return cls(grid, values[0], np.diff(values))

    @classmethod
    def zero(cls, grid: Grid) -> "CumulativeKernel":
        return cls(grid, 0.0, np.zeros(grid.M))

    @property
    def params(self) -> np.ndarray:
        return np.concatenate(([self.base], self.increments))

    @property
    def values(self) -> np.ndarray:
        """Node values ``P_j = base + sum_{l<=j} w_l``."""
        return self.base + np.concatenate(([0.0], np.cumsum(self.increments)))

    @property
    def density(self) -> np.ndarray:
        """Cell-wise kernel ``p_j = w_j / dx``."""
        return self.increments / self.grid.dx

    @property
    def total_mass(self) -> float:
        return float(self.increments.sum())

    def __call__(self, x):
        return np.interp(x, self.grid.nodes, self.values)

    def scaled(self, c: float) -> "CumulativeKernel":
        return CumulativeKernel(self.grid, c * self.base, c * self.increments)

    def __add__(self, other: "CumulativeKernel") -> "CumulativeKernel":
        _check_grid(self.grid, other.grid)
        return CumulativeKernel(self.grid, self.base + other.base, self.increments + other.increments)

    def __repr__(self):
        return (f"CumulativeKernel(B={self.grid.B}, M={self.grid.M}, base={self.base:.6g}, "
                f"mass={self.total_mass:.6g})")


@dataclass(frozen=True, eq=False)
class Payoff:
    """Bounded-variation payoff ``F(x, theta)`` sampled at grid nodes."""

    grid: Grid
    values: np.ndarray
    theta: float = float("nan")
    lipschitz_const: float = float("inf")
    variation_bound: float = float("inf")

    def __post_init__(self):
        f = _frozen(self.values)
        if f.shape != (self.grid.M + 1,):
            raise ShapeError(f"payoff needs {self.grid.M + 1} node values, got shape {f.shape}")
        if f[-1] != 0:
            raise SpecError("payoff must vanish at x = B (finite support)")
        tv = total_variation(f)
        if tv > self.variation_bound * (1 + 1e-12) + 1e-15:
            raise SpecError(f"payoff variation {tv:.6g} exceeds declared bound {self.variation_bound:.6g}")
        object.__setattr__(self, "values", f)

    @property
    def variation(self) -> float:
        return total_variation(self.values)


@dataclass(frozen=True, eq=False)
class QuoteSet:
    """Observed put quotes; prices may be negative because noise is not clipped."""

    strikes: np.ndarray
    prices: np.ndarray
    noise_sigma: float | None = None
    seed: int | None = None
    K_bar: float | None = None

    def __post_init__(self):
        k = _frozen(np.atleast_1d(self.strikes))
        s = _frozen(np.atleast_1d(self.prices))
        if k.ndim != 1 or k.size == 0:
            raise InputError("a quote set needs at least one strike")
        if s.shape != k.shape:
            raise InputError(f"{k.size} strikes but {s.size} prices")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(s))):
            raise InputError("quotes must be finite")
        k_bar = float(k.max()) if self.K_bar is None else float(self.K_bar)
        if k.min() < 0 or k.max() > k_bar:
            raise InputError(f"strikes must lie in [0, {k_bar}]")
        object.__setattr__(self, "strikes", k)
        object.__setattr__(self, "prices", s)
        object.__setattr__(self, "K_bar", k_bar)

    def __len__(self):
        return self.strikes.size

    @property
    def max_strike(self) -> float:
        return float(self.strikes.max())


def _check_grid(g1: Grid, g2: Grid):
    if g1 != g2:
        raise ShapeError(f"grid mismatch: {g1} vs {g2}")


def _check_strikes(grid: Grid, strikes: np.ndarray):
    lo, hi = strikes.min(initial=0.0), strikes.max(initial=0.0)
    if lo < -_DOMAIN_SLACK or hi > grid.B * (1 + _DOMAIN_SLACK):
        raise DomainError(f"strikes must lie in [0, {grid.B}], got range [{lo}, {hi}]")


def put_design(grid: Grid, strikes) -> np.ndarray:
    """Matrix ``A`` with ``A @ P.params == price_put(P, strikes)``.

    Column 0 belongs to ``P(0)`` and is simply ``K``. Column ``j`` belongs
    to increment ``w_j``, whose contribution to ``P`` is a unit ramp rising
    over cell ``[x_{j-1}, x_j]``; its exact integral over ``[0, K]`` is
    ``u^2/(2 dx)`` inside the cell and ``u - dx/2`` past it, ``u = K - x_{j-1}``.
    """
    k = np.atleast_1d(np.asarray(strikes, dtype=float))
    _check_strikes(grid, k)
    k = np.clip(k, 0.0, grid.B)
    dx = grid.dx
    u = k[:, None] - grid.nodes[None, :-1]
    ramp = np.where(u <= 0, 0.0, np.where(u < dx, u * u / (2 * dx), u - dx / 2))
    return np.hstack((k[:, None], ramp))


def price_put(P: CumulativeKernel, K):
    """Put price ``int_0^K P(x) dx``; exact for the piecewise-linear ``P``."""
    out = put_design(P.grid, K) @ P.params
    return float(out[0]) if np.ndim(K) == 0 else out


def price_payoff(P: CumulativeKernel, F: Payoff) -> float:
    """Stieltjes price ``-sum_j P(mid_j) (F_{j+1} - F_j)`` with midpoint ``P``."""
    _check_grid(P.grid, F.grid)
    v = P.values
    return float(-np.dot(0.5 * (v[1:] + v[:-1]), np.diff(F.values)))


def integrate_nodes(grid: Grid, values) -> np.ndarray:
    """Cumulative integral of the piecewise-linear interpolant, at every node.

    Unlike :func:`price_put` this accepts any node values, including
    non-monotone ones that are not valid kernels.
    """
    v = np.asarray(values, dtype=float)
    return np.concatenate(([0.0], np.cumsum(0.5 * grid.dx * (v[1:] + v[:-1]))))


def total_variation(values) -> float:
    return float(np.abs(np.diff(np.asarray(values, dtype=float))).sum())


def sup_distance(P1: CumulativeKernel, P2: CumulativeKernel, upper: float | None = None) -> float:
    """Max node gap, optionally restricted to nodes ``x_j <= upper``."""
    _check_grid(P1.grid, P2.grid)
    n = P1.grid.n_identifiable(upper)
    return float(np.max(np.abs(P1.values[:n] - P2.values[:n])))


def l2_distance(P1: CumulativeKernel, P2: CumulativeKernel, upper: float | None = None) -> float:
    """Exact L2 norm of ``P1 - P2`` over ``[0, B]`` (or ``[0, x_J]``, ``x_J <= upper``).

    The difference is piecewise linear, so each cell contributes
    ``dx (a^2 + ab + b^2) / 3`` for end values ``a, b``.
    """
    _check_grid(P1.grid, P2.grid)
    n = P1.grid.n_identifiable(upper)
    d = (P1.values - P2.values)[:n]
    a, b = d[:-1], d[1:]
    return float(np.sqrt(P1.grid.dx * np.sum(a * a + a * b + b * b) / 3.0))


def put_payoff(grid: Grid, K: float, variation_bound: float | None = None) -> Payoff:
    """``max(K - x, 0)``, Lipschitz in ``K`` with constant 1 and variation ``K``."""
    if not 0 <= K <= grid.B:
        raise DomainError(f"strike {K} outside [0, {grid.B}]")
    values = np.maximum(K - grid.nodes, 0.0)
    return Payoff(grid, values, theta=float(K), lipschitz_const=1.0,
                  variation_bound=float(K if variation_bound is None else variation_bound))


def put_family(grid: Grid, strikes: Sequence[float]) -> list[Payoff]:
    """Puts sharing the uniform variation bound ``max(strikes)``."""
    k_bar = float(max(strikes))
    return [put_payoff(grid, k, variation_bound=k_bar) for k in strikes]


def digital_payoff(grid: Grid, K: float) -> Payoff:
    """Cash-or-nothing ``1{x <= K}``; a single unit down-jump after ``K``."""
    if not 0 <= K < grid.B:
        raise DomainError(f"digital strike {K} must lie in [0, {grid.B})")
    values = (grid.nodes <= K * (1 + 1e-12)).astype(float)
    return Payoff(grid, values, theta=float(K), lipschitz_const=float("inf"), variation_bound=1.0)


@dataclass
class PayoffFamilyReport:
    n_payoffs: int
    declared_lipschitz: float
    worst_lipschitz_ratio: float
    worst_pair: tuple[int, int] | None
    max_variation: float
    variation_bound: float
    lipschitz_ok: bool
    variation_ok: bool
    violations: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.lipschitz_ok and self.variation_ok


def validate_payoff_family(payoffs: Sequence[Payoff]) -> PayoffFamilyReport:
    """Check uniform Lipschitz-in-theta and uniform bounded variation.

    The family's Lipschitz constant is the largest one declared by a member,
    and likewise for the variation bound. Violations are reported, never
    raised.
    """
    payoffs = list(payoffs)
    if not payoffs:
        raise InputError("empty payoff family")
    for f in payoffs[1:]:
        _check_grid(payoffs[0].grid, f.grid)
    c1 = max(f.lipschitz_const for f in payoffs)
    vb = max(f.variation_bound for f in payoffs)
    worst, pair = 0.0, None
    for i in range(len(payoffs)):
        for j in range(i + 1, len(payoffs)):
            dtheta = abs(payoffs[i].theta - payoffs[j].theta)
            gap = float(np.max(np.abs(payoffs[i].values - payoffs[j].values)))
            if dtheta == 0:
                ratio = 0.0 if gap == 0 else float("inf")
            else:
                ratio = gap / dtheta
            if ratio > worst:
                worst, pair = ratio, (i, j)
    max_tv = max(f.variation for f in payoffs)
    lip_ok = worst <= c1 * (1 + 1e-12)
    var_ok = max_tv <= vb * (1 + 1e-12)
    violations = []
    if not lip_ok:
        violations.append(f"Lipschitz ratio {worst:.6g} exceeds declared {c1:.6g} for pair {pair}")
    if not var_ok:
        violations.append(f"variation {max_tv:.6g} exceeds bound {vb:.6g}")
    return PayoffFamilyReport(len(payoffs), c1, worst, pair, max_tv, vb, lip_ok, var_ok, violations)
