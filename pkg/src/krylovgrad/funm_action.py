"""Differentiable matrix-function-vector products.

Decompose with Lanczos/Arnoldi, apply the function to the small matrix, and
reconstruct. Pullbacks chain the small-matrix pullback into the Krylov
adjoints, so gradients differentiate the K-step approximation itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import arnoldi, lanczos
from .dense_funm import (
    ScalarFunction,
    expm_hessenberg_e1,
    funm_sym_e1,
    hessenberg_project,
    tridiag_cotangents,
    tridiagonal,
)
from .operator import MatVecOperator

Array = np.ndarray


class PullbackConsumedError(RuntimeError):
    """A single-use pullback was called twice."""


@dataclass
class FunmResult:
    """Value of ``f(A) v`` plus a single-use pullback ``ybar -> (grad_v, grad_theta)``."""

    value: Array
    _pullback: Optional[Callable] = field(repr=False)
    num_steps: int
    breakdown_step: Optional[int] = None

    def pullback(self, ybar):
        if self._pullback is None:
            raise PullbackConsumedError("pullback already used; forward state was released")
        fn, self._pullback = self._pullback, None
        return fn(np.asarray(ybar, dtype=float))


class _SymmetricKrylov:
    """Symmetric Krylov factorization ``A X^T ~ X^T T`` with a pullback.

    With ``adjoint="arnoldi"`` the factorization comes from the Arnoldi code and
    gradients from its re-projected adjoint (the three-term Lanczos adjoint has
    no projection constraint to re-enforce and amplifies rounding errors by
    roughly ``|A| / b_k`` per step). ``T`` is then built from the diagonal and
    subdiagonal of ``H``, which is exactly what Lanczos computes. With
    ``adjoint="lanczos"`` the native recursion is used in both directions.
    """

    def __init__(self, op, theta, v, num_steps, reorthogonalize, adjoint):
        if not op.is_symmetric:
            raise lanczos.ContractError("symmetric matrix functions require a symmetric operator")
        if adjoint == "auto":
            adjoint = "arnoldi" if reorthogonalize else "lanczos"
        if adjoint not in ("lanczos", "arnoldi"):
            raise ValueError(f"unknown adjoint {adjoint!r}")
        self.op, self.theta, self.adjoint = op, theta, adjoint
        self.reorthogonalize = reorthogonalize
        if adjoint == "lanczos":
            fact = lanczos.lanczos_forward(
                op, theta, v, num_steps, reorthogonalize=reorthogonalize, allow_breakdown=True
            )
            self.basis = fact.vectors[: fact.num_steps]
            self.T = fact.tridiagonal()
            self.init_norm = fact.init_norm
        else:
            fact = arnoldi.arnoldi_forward(
                op, theta, v, num_steps, reorthogonalize=reorthogonalize, allow_breakdown=True
            )
            self.basis = fact.Q.T
            H = fact.H
            self.T = tridiagonal(np.diag(H), np.diag(H, -1))
            self.init_norm = 1.0 / fact.c
        self.fact = fact
        self.num_steps = self.basis.shape[0]
        self.breakdown_step = fact.breakdown_step

    def backprop(self, grad_basis, Tbar):
        """Chain cotangents of ``(basis, T)`` back to ``(v, theta)``."""
        da, db = tridiag_cotangents(Tbar)
        K = self.num_steps
        if self.adjoint == "lanczos":
            fact = self.fact
            gx = np.zeros_like(fact.vectors)
            gx[:K] = grad_basis
            gb = np.zeros(K)
            gb[: K - 1] = db
            cot = lanczos.LanczosCotangents(gx, da, gb)
            grad_v, grad_theta, _ = lanczos.lanczos_adjoint(
                self.op, self.theta, fact, cot, keep_state=False
            )
            return grad_v, grad_theta
        gH = np.diag(da)
        if K > 1:
            gH += np.diag(db, -1)
        cot = arnoldi.ArnoldiCotangents(
            grad_Q=np.ascontiguousarray(grad_basis.T),
            grad_H=gH,
            grad_r=np.zeros(self.op.dim),
            grad_c=0.0,
        )
        grad_v, grad_theta, _ = arnoldi.arnoldi_adjoint(
            self.op, self.theta, self.fact, cot, reproject=self.reorthogonalize
        )
        return grad_v, grad_theta


def funm_lanczos(
    op: MatVecOperator,
    theta: Array,
    v: Array,
    num_steps: int,
    f: ScalarFunction,
    reorthogonalize: bool = True,
    adjoint: str = "auto",
) -> FunmResult:
    """``f(A) v ~ |v| X_K f(T) e_1`` for symmetric ``A``.

    A breakdown before ``num_steps`` means an invariant subspace was found; the
    result is then exact with fewer steps and ``breakdown_step`` is set.
    ``adjoint`` picks the gradient path: ``"arnoldi"`` (re-projected, the
    default when reorthogonalising), ``"lanczos"`` (three-term recursion, the
    default otherwise), or ``"auto"``.
    """
    kry = _SymmetricKrylov(op, theta, v, num_steps, reorthogonalize, adjoint)
    y_small, small_pullback = funm_sym_e1(f, kry.T)
    Xk = kry.basis
    nv = kry.init_norm
    base = Xk.T @ y_small
    value = nv * base

    def pullback(ybar):
        Tbar = small_pullback(nv * (Xk @ ybar))
        grad_v, grad_theta = kry.backprop(nv * np.outer(y_small, ybar), Tbar)
        # value depends on |v| directly as well
        grad_v = grad_v + (base @ ybar) * Xk[0]
        return grad_v, grad_theta

    return FunmResult(value, pullback, kry.num_steps, kry.breakdown_step)


def funm_arnoldi_exp(
    op: MatVecOperator,
    theta: Array,
    v: Array,
    t: float,
    num_steps: int,
    reorthogonalize: bool = True,
    reproject: Optional[bool] = None,
) -> FunmResult:
    """``exp(t A) v ~ Q exp(t H) e_1 / c`` via Arnoldi."""
    if reproject is None:
        reproject = reorthogonalize
    fact = arnoldi.arnoldi_forward(
        op, theta, v, num_steps, reorthogonalize=reorthogonalize, allow_breakdown=True
    )
    y_small, small_pullback = expm_hessenberg_e1(fact.H, t)
    Q, c = fact.Q, fact.c
    base = Q @ y_small
    value = base / c

    def pullback(ybar):
        gH = hessenberg_project(small_pullback((Q.T @ ybar) / c))
        cot = arnoldi.ArnoldiCotangents(
            grad_Q=np.outer(ybar, y_small) / c,
            grad_H=gH,
            grad_r=np.zeros_like(fact.r),
            grad_c=-(base @ ybar) / c**2,
        )
        grad_v, grad_theta, _ = arnoldi.arnoldi_adjoint(op, theta, fact, cot, reproject=reproject)
        return grad_v, grad_theta

    return FunmResult(value, pullback, fact.num_steps, fact.breakdown_step)


@dataclass
class QuadraticFormResult:
    value: float
    _pullback: Optional[Callable] = field(repr=False)
    num_steps: int
    breakdown_step: Optional[int] = None

    def pullback(self, sbar: float = 1.0):
        if self._pullback is None:
            raise PullbackConsumedError("pullback already used; forward state was released")
        fn, self._pullback = self._pullback, None
        return fn(float(sbar))


def quadratic_form_funm(
    op: MatVecOperator,
    theta: Array,
    v: Array,
    num_steps: int,
    f: ScalarFunction,
    reorthogonalize: bool = True,
    adjoint: str = "auto",
) -> QuadraticFormResult:
    """``v^T f(A) v ~ |v|^2 e_1^T f(T) e_1`` and its pullback ``sbar -> (grad_v, grad_theta)``."""
    kry = _SymmetricKrylov(op, theta, v, num_steps, reorthogonalize, adjoint)
    K = kry.num_steps
    y_small, small_pullback = funm_sym_e1(f, kry.T)
    nv2 = kry.init_norm**2
    value = float(nv2 * y_small[0])
    v = np.asarray(v, dtype=float)

    def pullback(sbar):
        e1 = np.zeros(K)
        e1[0] = sbar * nv2
        Tbar = small_pullback(e1)
        grad_v, grad_theta = kry.backprop(np.zeros((K, op.dim)), Tbar)
        grad_v = grad_v + 2.0 * sbar * y_small[0] * v
        return grad_v, grad_theta

    return QuadraticFormResult(value, pullback, K, kry.breakdown_step)
