"""Estimate cumulative pricing kernels from noisy put prices."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CumulativeKernel,
    Grid,
    Payoff,
    QuoteSet,
    digital_payoff,
    l2_distance,
    price_payoff,
    price_put,
    put_design,
    put_family,
    put_payoff,
    sup_distance,
    validate_payoff_family,
)
from .errors import (  # noqa: E402
    ConvergenceError,
    DomainError,
    InfeasibleError,
    InputError,
    PkernelError,
    ShapeError,
    SpecError,
)
from .estimators import Estimate, FitOptions, fit_cls, fit_me_exact, fit_rme, lambda_schedule  # noqa: E402
from .synth import KernelSpec, NoiseSpec, StrikeDensitySpec, generate_quotes, make_kernel, sample_strikes  # noqa: E402

__all__ = [
    "CumulativeKernel",
    "Grid",
    "Payoff",
    "QuoteSet",
    "digital_payoff",
    "l2_distance",
    "price_payoff",
    "price_put",
    "put_design",
    "put_family",
    "put_payoff",
    "sup_distance",
    "validate_payoff_family",
    "ConvergenceError",
    "DomainError",
    "InfeasibleError",
    "InputError",
    "PkernelError",
    "ShapeError",
    "SpecError",
    "Estimate",
    "FitOptions",
    "fit_cls",
    "fit_me_exact",
    "fit_rme",
    "lambda_schedule",
    "KernelSpec",
    "NoiseSpec",
    "StrikeDensitySpec",
    "generate_quotes",
    "make_kernel",
    "sample_strikes",
]
