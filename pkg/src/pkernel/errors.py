"""Exception hierarchy shared across the package."""

from __future__ import annotations


class PkernelError(Exception):
    """Base class for all package errors."""


class DomainError(PkernelError, ValueError):
    """An argument lies outside the domain of an operator."""


class ShapeError(PkernelError, ValueError):
    """Two objects live on incompatible grids."""


class SpecError(PkernelError, ValueError):
    """A configuration or spec object is malformed."""


class InputError(PkernelError, ValueError):
    """Input data is empty or otherwise unusable."""


class ConvergenceError(PkernelError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    The last iterate and its optimality residual are attached so callers
    can decide whether the partial answer is still useful.
    """

    def __init__(self, message, x=None, residual=float("nan")):
        super().__init__(message)
        self.x = x
        self.residual = residual


class InfeasibleError(PkernelError, RuntimeError):
    """Exact price constraints admit no kernel with finite divergence."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual
