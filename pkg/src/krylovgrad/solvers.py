"""Conjugate gradients with an implicit adjoint, and a pivoted-Cholesky preconditioner."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .operator import MatVecOperator

Array = np.ndarray

SPD_TOL = 1e-10


class NotSPDError(ValueError):
    """A remaining diagonal entry went clearly negative."""


@dataclass(frozen=True)
class LowRankFactor:
    """``A ~ L L^T`` with ``diag_residual = diag(A) - diag(L L^T)``."""

    L: Array
    pivot_order: tuple
    diag_residual: Array

    @property
    def rank(self) -> int:
        return self.L.shape[1]


def pivoted_cholesky(op: MatVecOperator, theta: Array, rank: int) -> LowRankFactor:
    """Greedy pivoted Cholesky, largest remaining diagonal first.

    Ties go to the lowest index. Each pivot column costs one matvec with a
    unit vector. Stops early once the remaining diagonal is exhausted.
    """
    n = op.dim
    if rank < 0:
        raise ValueError("rank must be non-negative")
    d = op.diag(theta)
    if d is None:
        d = np.array([op.apply(theta, e)[i] for i, e in enumerate(np.eye(n))])
    d = np.array(d, dtype=float)
    if np.any(d < -SPD_TOL):
        raise NotSPDError(f"negative diagonal entry {d.min():.3e}")
    R = min(rank, n)
    L = np.zeros((n, R))
    pivots = []
    for k in range(R):
        p = int(np.argmax(d))
        if not d[p] > 0.0:
            break
        e = np.zeros(n)
        e[p] = 1.0
        col = op.apply(theta, e) - L[:, :k] @ L[p, :k]
        col = col / np.sqrt(d[p])
        L[:, k] = col
        d = d - col**2
        d[p] = 0.0
        pivots.append(p)
        if np.any(d < -SPD_TOL):
            raise NotSPDError(f"remaining diagonal {d.min():.3e} after {k + 1} steps")
    k = len(pivots)
    return LowRankFactor(L[:, :k].copy(), tuple(pivots), d)


@dataclass
class WoodburyPreconditioner:
    """``(L L^T + sigma2 I)^{-1}`` with the ``R x R`` capacitance factored once."""

    factor: LowRankFactor
    sigma2: float
    _chol: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        L = self.factor.L
        if L.shape[1]:
            cap = self.sigma2 * np.eye(L.shape[1]) + L.T @ L
            self._chol = scipy.linalg.cho_factor(cap, lower=True)

    def __call__(self, b: Array) -> Array:
        b = np.asarray(b, dtype=float)
        if self._chol is None:
            return b / self.sigma2
        L = self.factor.L
        return (b - L @ scipy.linalg.cho_solve(self._chol, L.T @ b)) / self.sigma2


def woodbury_apply(factor: LowRankFactor, sigma2: float, b: Array) -> Array:
    return WoodburyPreconditioner(factor, sigma2)(b)


@dataclass
class CGReport:
    solution: Array
    iterations: int
    final_residual_norm: float
    converged: bool


def _cg(op, theta, b, precond, tol_abs, max_iter, callback):
    x = np.zeros_like(b)
    r = b.copy()
    rnorm = float(np.linalg.norm(r))
    if rnorm <= tol_abs:
        return CGReport(x, 0, rnorm, True)
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = op.apply(theta, p)
        alpha = rz / (p @ Ap)
        x = x + alpha * p
        r = r - alpha * Ap
        rnorm = float(np.linalg.norm(r))
        if callback is not None:
            callback(it, x, r)
        if rnorm <= tol_abs:
            return CGReport(x, it, rnorm, True)
        z = precond(r) if precond is not None else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return CGReport(x, max_iter, rnorm, False)


def pcg_solve(
    op: MatVecOperator,
    theta: Array,
    b: Array,
    precond: Optional[Callable[[Array], Array]] = None,
    tol_abs: float = 1.0,
    max_iter: Optional[int] = None,
    callback: Optional[Callable] = None,
):
    """Preconditioned CG for SPD ``A(theta) x = b`` with an absolute tolerance.

    Returns ``(report, pullback)``. ``pullback(xbar)`` solves ``A lam = xbar``
    with the same settings and returns ``(grad_b, grad_theta) =
    (lam, -vjp_params(theta, x, lam))``. Hitting ``max_iter`` is reported via
    ``converged=False`` rather than raised.
    """
    b = np.asarray(b, dtype=float)
    if b.shape != (op.dim,):
        raise ValueError(f"b must have shape ({op.dim},), got {b.shape}")
    if not tol_abs > 0:
        raise ValueError("tol_abs must be positive")
    if max_iter is None:
        max_iter = op.dim
    report = _cg(op, theta, b, precond, tol_abs, max_iter, callback)

    def pullback(xbar):
        adj = _cg(op, theta, np.asarray(xbar, dtype=float), precond, tol_abs, max_iter, None)
        lam = adj.solution
        return lam, -op.vjp_params(theta, report.solution, lam)

    return report, pullback
