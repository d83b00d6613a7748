"""Active-set non-negative least squares (Lawson and Hanson, 1974)."""

from __future__ import annotations

import numpy as np
from scipy.linalg import lstsq

from .errors import ConvergenceError

__all__ = ["nnls", "natural_residual"]


def natural_residual(x, grad) -> float:
    """``max_j |min(x_j, grad_j)|``; zero exactly at a KKT point of ``x >= 0``."""
    x = np.asarray(x)
    grad = np.asarray(grad)
    if x.size == 0:
        return 0.0
    return float(np.max(np.abs(np.minimum(x, grad))))


def nnls(A, b, maxiter=None, tol=None, fixed_zero=None):
    """
    Solve ``min ||A x - b||_2`` subject to ``x >= 0``.

    Parameters
    ----------
    A : array_like, shape (m, n)
    b : array_like, shape (m,)
    maxiter : int, optional
        Cap on outer plus inner iterations (default ``3 * n``).
    tol : float, optional
        A zero variable enters the passive set only if its descent
        direction ``A^T (b - A x)`` exceeds ``tol``. The default scales
        machine epsilon by the problem size and data magnitude.
    fixed_zero : array_like of bool, shape (n,), optional
        Variables pinned at zero.

    Returns
    -------
    x : numpy.ndarray, shape (n,)
    iterations : int

    Raises
    ------
    ConvergenceError
        If ``maxiter`` is exhausted. The last iterate is attached.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if maxiter is None:
        maxiter = 3 * n
    if tol is None:
        tol = 10 * np.finfo(float).eps * max(m, n) * np.abs(A).max(initial=1.0) * max(1.0, np.abs(b).max(initial=0.0))
    allowed = np.ones(n, dtype=bool) if fixed_zero is None else ~np.asarray(fixed_zero, dtype=bool)

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ b
    it = 0
    while True:
        candidates = allowed & ~passive & (w > tol)
        if not candidates.any():
            break
        if it >= maxiter:
            raise ConvergenceError(f"NNLS hit maxiter={maxiter}", x=x, residual=float(w[candidates].max()))
        j = int(np.flatnonzero(candidates)[np.argmax(w[candidates])])
        passive[j] = True
        while True:
            it += 1
            idx = np.flatnonzero(passive)
            z = np.zeros(n)
            z[idx] = lstsq(A[:, idx], b, lapack_driver="gelsy", check_finite=False)[0]
            if np.all(z[idx] > 0):
                x = z
                break
            if it >= maxiter:
                raise ConvergenceError(f"NNLS hit maxiter={maxiter}", x=x, residual=float("nan"))
            bad = idx[z[idx] <= 0]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = x[bad] / (x[bad] - z[bad])
            alpha = float(np.min(ratios)) if bad.size else 1.0
            x = x + alpha * (z - x)
            # drop variables that reached the boundary
            leaving = passive & (x <= 10 * np.finfo(float).eps * np.abs(x).max(initial=1.0))
            leaving[bad[np.argmin(ratios)]] = True
            passive &= ~leaving
            x[~passive] = 0.0
            if not passive.any():
                break
        w = A.T @ (b - A @ x)
    return x, it
