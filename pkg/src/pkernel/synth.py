"""Synthetic markets: ground-truth kernels, strike designs and noisy quotes.

All randomness goes through numpy's counter-based Philox bit generator keyed
by ``SeedSequence([seed, stream])``, so strikes and noise drawn from the same
seed use independent streams and are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr

from .core import CumulativeKernel, Grid, QuoteSet, put_design
from .errors import SpecError

__all__ = [
    "KernelSpec",
    "StrikeDensitySpec",
    "NoiseSpec",
    "make_rng",
    "make_kernel",
    "strike_density",
    "sample_strikes",
    "generate_quotes",
    "random_kernel",
    "STRIKE_STREAM",
    "NOISE_STREAM",
]

STRIKE_STREAM = 0
NOISE_STREAM = 1

KERNEL_SHAPES = ("uniform", "triangular", "bimodal", "table")


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for ``(seed, stream)``."""
    if seed is None or int(seed) != seed or seed < 0:
        raise SpecError(f"seed must be a non-negative integer, got {seed!r}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass
class KernelSpec:
    """Recipe for a ground-truth or prior kernel.

    ``modes``/``widths`` parameterize the shapes: triangular uses
    ``modes[0]`` as its peak, bimodal places equal-weight Gaussian bumps at
    each mode with the matching width. ``table`` takes explicit increments
    and ignores ``total_mass``.
    """

    shape: str = "bimodal"
    total_mass: float = 0.95
    base: float = 0.0
    modes: tuple[float, ...] = (0.3, 0.7)
    widths: tuple[float, ...] = (0.08, 0.08)
    table: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.shape not in KERNEL_SHAPES:
            raise SpecError(f"unknown kernel shape {self.shape!r}; expected one of {KERNEL_SHAPES}")
        if not np.isfinite(self.total_mass) or self.total_mass < 0:
            raise SpecError(f"total_mass must be non-negative, got {self.total_mass}")
        if not np.isfinite(self.base) or self.base < 0:
            raise SpecError(f"base must be non-negative, got {self.base}")
        self.modes = tuple(float(m) for m in self.modes)
        self.widths = tuple(float(w) for w in self.widths)
        if self.shape == "bimodal":
            if len(self.modes) != len(self.widths) or not self.modes:
                raise SpecError("bimodal kernel needs one width per mode")
            if min(self.widths) <= 0:
                raise SpecError("bump widths must be positive")
        if self.shape == "triangular" and not self.modes:
            raise SpecError("triangular kernel needs a mode")
        if self.shape == "table":
            if self.table is None:
                raise SpecError("table kernel needs explicit increments")
            t = np.asarray(self.table, dtype=float)
            if t.ndim != 1 or not np.all(np.isfinite(t)) or np.any(t < 0):
                raise SpecError("table increments must be finite and non-negative")
            self.table = tuple(float(v) for v in t)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modes"] = list(self.modes)
        d["widths"] = list(self.widths)
        d["table"] = None if self.table is None else list(self.table)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        d = dict(d)
        for key in ("modes", "widths", "table"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def _cell_masses(spec: KernelSpec, grid: Grid) -> np.ndarray:
    x = grid.nodes
    if spec.shape == "uniform":
        return np.full(grid.M, 1.0)
    if spec.shape == "triangular":
        # CDF of the triangular law on [0, B] peaking at the mode
        B, c = grid.B, min(max(spec.modes[0], 0.0), grid.B)
        left = np.where(x <= c, x * x / (B * c) if c > 0 else 0.0, 0.0)
        right = np.where(x > c, 1 - (B - x) ** 2 / (B * (B - c)) if c < B else 1.0, 0.0)
        return np.diff(left + right)
    if spec.shape == "bimodal":
        cdf = sum(ndtr((x - m) / s) for m, s in zip(spec.modes, spec.widths))
        return np.diff(cdf)
    raise AssertionError(spec.shape)


def make_kernel(spec: KernelSpec, grid: Grid) -> CumulativeKernel:
    """Discretize ``spec`` on ``grid`` with exact per-cell masses."""
    if spec.shape == "table":
        w = np.asarray(spec.table, dtype=float)
        if w.size != grid.M:
            raise SpecError(f"table has {w.size} increments but grid has {grid.M} cells")
        return CumulativeKernel(grid, spec.base, w)
    cells = np.clip(_cell_masses(spec, grid), 0.0, None)
    total = cells.sum()
    if total <= 0:
        raise SpecError("kernel shape places no mass on the grid")
    return CumulativeKernel(grid, spec.base, spec.total_mass * cells / total)


def random_kernel(rng: np.random.Generator, grid: Grid, max_mass: float = 1.0,
                  sparsity: float = 0.0) -> CumulativeKernel:
    """A random feasible kernel: Dirichlet-shaped increments with uniform total mass.

    ``sparsity`` is the probability that a cell gets zero mass.
    """
    w = rng.exponential(size=grid.M)
    if sparsity > 0:
        w[rng.random(grid.M) < sparsity] = 0.0
    if w.sum() == 0:
        w[0] = 1.0
    mass = rng.uniform(0.0, max_mass)
    base = rng.uniform(0.0, 0.1 * max_mass)
    return CumulativeKernel(grid, base, mass * w / w.sum())


@dataclass
class StrikeDensitySpec:
    """Strike design density on ``[0, K_bar]`` bounded below by ``lower_bound_k``.

    ``uniform`` is the constant ``1/K_bar`` and needs ``k <= 1/K_bar``.
    ``linear-tilt`` rises linearly from ``k`` at zero so it integrates to one.
    """

    kind: str = "uniform"
    lower_bound_k: float | None = None
    K_bar: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "linear-tilt"):
            raise SpecError(f"unknown strike density {self.kind!r}")
        if not np.isfinite(self.K_bar) or self.K_bar <= 0:
            raise SpecError(f"K_bar must be positive, got {self.K_bar}")
        if self.lower_bound_k is None:
            self.lower_bound_k = 1.0 / self.K_bar if self.kind == "uniform" else 0.5 / self.K_bar
        k = self.lower_bound_k
        if not k > 0:
            raise SpecError(f"strike density lower bound must be positive, got {k}")
        if k * self.K_bar > 1 + 1e-12:
            raise SpecError(f"no density on [0, {self.K_bar}] has minimum {k}")

    @property
    def slope(self) -> float:
        if self.kind == "uniform":
            return 0.0
        return 2.0 * (1.0 - self.lower_bound_k * self.K_bar) / self.K_bar ** 2

    @property
    def intercept(self) -> float:
        return 1.0 / self.K_bar if self.kind == "uniform" else self.lower_bound_k

    def to_dict(self) -> dict:
        return asdict(self)


def strike_density(spec: StrikeDensitySpec, x):
    x = np.asarray(x, dtype=float)
    inside = (x >= 0) & (x <= spec.K_bar)
    return np.where(inside, spec.intercept + spec.slope * x, 0.0)


def _inverse_cdf(spec: StrikeDensitySpec, u: np.ndarray) -> np.ndarray:
    a, s = spec.intercept, spec.slope
    if s == 0:
        return u / a
    # a x + s x^2 / 2 = u, stable root form
    return 2 * u / (a + np.sqrt(a * a + 2 * s * u))


def sample_strikes(n: int, spec: StrikeDensitySpec, seed: int, design: str = "random") -> np.ndarray:
    """Strikes following the density ``spec``.

    ``random`` gives i.i.d. inverse-CDF draws, deterministic given ``seed``.
    ``quantile`` places the strikes at the ``(i + 1/2) / n`` quantiles and
    ignores the seed.
    """
    if int(n) != n or n < 1:
        raise SpecError(f"need at least one strike, got n={n}")
    if design == "random":
        u = make_rng(seed, STRIKE_STREAM).random(int(n))
    elif design == "quantile":
        u = (np.arange(int(n)) + 0.5) / int(n)
    else:
        raise SpecError(f"unknown strike design {design!r}")
    return np.clip(_inverse_cdf(spec, u), 0.0, spec.K_bar)


@dataclass
class NoiseSpec:
    """Additive i.i.d. price noise with mean zero and standard deviation ``sigma``."""

    kind: str = "gaussian"
    sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise SpecError(f"unknown noise kind {self.kind!r}")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise SpecError(f"noise sigma must be non-negative, got {self.sigma}")
        make_rng(self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    def draw(self, n: int) -> np.ndarray:
        if self.sigma == 0:
            return np.zeros(n)
        rng = make_rng(self.seed, NOISE_STREAM)
        if self.kind == "gaussian":
            return self.sigma * rng.standard_normal(n)
        half = np.sqrt(3.0) * self.sigma
        return rng.uniform(-half, half, n)


def generate_quotes(P: CumulativeKernel, strikes, noise: NoiseSpec,
                    K_bar: float | None = None) -> QuoteSet:
    """``S_i = price_put(P, K_i) + eps_i``; prices are not clipped at zero."""
    strikes = np.asarray(strikes, dtype=float)
    prices = put_design(P.grid, strikes) @ P.params + noise.draw(strikes.size)
    return QuoteSet(strikes, prices, noise_sigma=noise.sigma, seed=noise.seed,
                    K_bar=P.grid.B if K_bar is None else K_bar)
