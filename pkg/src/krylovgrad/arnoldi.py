"""Arnoldi iteration and its adjoint.

Forward constraints::

    A Q = Q H + r e_K^T,    Q e_1 = c v,
    lower(Q^T Q) = I,       H upper Hessenberg,     Q^T r = 0

with ``c = 1 / |v|``. The adjoint system in the multipliers
``(Lambda, lambda, gamma, Gamma_sym)`` is::

    Z_Q = grad_Q + A^T Lambda - Lambda H^T + lambda e_1^T + Q Gamma_sym + r gamma^T = 0
    Z_H = grad_H - Q^T Lambda                       = 0  on the Hessenberg support
    Z_r = grad_r - Lambda e_K + Q gamma             = 0
    Z_c = grad_c - v^T lambda                       = 0

where ``Gamma_sym`` is symmetric and the entries of ``Z_H`` below the first
subdiagonal are absorbed by an unsolved multiplier. It is solved by backward
substitution over the columns of ``Lambda``, building one column of
``Gamma_sym`` per step from the projection constraint. Gradients:
``grad_A = Lambda Q^T`` and ``grad_v = -c * lambda`` (with multipliers
defined through the equations above, the sign of ``lambda`` is fixed so that
``Z_c`` holds as written).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .lanczos import BREAKDOWN_RTOL, BreakdownError
from .operator import MatVecOperator

Array = np.ndarray


@dataclass(frozen=True)
class ArnoldiFactorization:
    """``Q`` is ``(N, K)``, ``H`` is ``(K, K)`` upper Hessenberg, ``c = 1/|v|``."""

    Q: Array
    H: Array
    r: Array
    c: float
    init_vector: Array
    norm_estimate: float
    breakdown_step: Optional[int] = None

    @property
    def num_steps(self) -> int:
        return self.H.shape[0]


@dataclass
class ArnoldiCotangents:
    grad_Q: Array
    grad_H: Array
    grad_r: Array
    grad_c: float = 0.0

    @classmethod
    def zeros_like(cls, fact: ArnoldiFactorization) -> "ArnoldiCotangents":
        return cls(np.zeros_like(fact.Q), np.zeros_like(fact.H), np.zeros_like(fact.r), 0.0)


@dataclass(frozen=True)
class ArnoldiAdjointState:
    Lambda: Array
    lam: Array
    gamma: Array
    Gamma_sym: Array


def arnoldi_forward(
    op: MatVecOperator,
    theta: Array,
    v: Array,
    num_steps: int,
    reorthogonalize: bool = True,
    allow_breakdown: bool = False,
) -> ArnoldiFactorization:
    """Modified Gram-Schmidt Arnoldi with an optional full re-projection pass.

    Consumes exactly ``num_steps`` matvecs. ``r`` is the unnormalised
    residual after the last step. A subdiagonal entry below
    ``1e-14 * |A q_1|`` before step ``K`` raises :class:`BreakdownError`
    unless ``allow_breakdown``, which truncates to the invariant subspace.
    """
    v = np.asarray(v, dtype=float)
    n = op.dim
    if v.shape != (n,):
        raise ValueError(f"v must have shape ({n},), got {v.shape}")
    if not 1 <= num_steps <= n:
        raise ValueError(f"need 1 <= K <= N, got K={num_steps}, N={n}")
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        raise ValueError("initial vector must be nonzero")

    K = num_steps
    Q = np.zeros((n, K))
    H = np.zeros((K, K))
    Q[:, 0] = v / vnorm
    scale = None
    for k in range(K):
        w = op.apply(theta, Q[:, k])
        if scale is None:
            scale = float(np.linalg.norm(w))
        for i in range(k + 1):
            h = Q[:, i] @ w
            H[i, k] = h
            w = w - h * Q[:, i]
        if reorthogonalize:
            s = Q[:, : k + 1].T @ w
            w = w - Q[:, : k + 1] @ s
            H[: k + 1, k] += s
        if k == K - 1:
            return ArnoldiFactorization(Q, H, w, 1.0 / vnorm, v.copy(), scale)
        beta = np.linalg.norm(w)
        if not beta > BREAKDOWN_RTOL * scale:
            if not allow_breakdown:
                raise BreakdownError(k + 1, beta)
            m = k + 1
            return ArnoldiFactorization(
                Q[:, :m].copy(), H[:m, :m].copy(), w, 1.0 / vnorm, v.copy(), scale, breakdown_step=m
            )
        H[k + 1, k] = beta
        Q[:, k + 1] = w / beta
    raise AssertionError("unreachable")


def arnoldi_adjoint(
    op: MatVecOperator,
    theta: Array,
    fact: ArnoldiFactorization,
    cot: ArnoldiCotangents,
    reproject: bool = True,
):
    """Backward substitution for the Arnoldi adjoint system.

    Returns ``(grad_v, grad_theta, state)``. Exactly ``K`` transpose-matvecs
    and ``K`` parameter VJPs. With ``reproject`` each new column of
    ``Lambda`` is projected back onto the affine set where
    ``Q^T Lambda`` matches ``grad_H`` on the Hessenberg support; in exact
    arithmetic this is a no-op, in floating point it is the adjoint
    counterpart of re-orthogonalisation.
    """
    Q, H, r, c = fact.Q, fact.H, fact.r, fact.c
    n, K = Q.shape
    gQ = np.asarray(cot.grad_Q, dtype=float)
    # entries of grad_H below the subdiagonal belong to structural zeros
    gH = np.triu(np.asarray(cot.grad_H, dtype=float), -1)
    gr = np.asarray(cot.grad_r, dtype=float)
    gc = float(cot.grad_c)
    if gQ.shape != Q.shape or gH.shape != H.shape or gr.shape != r.shape:
        raise ValueError("cotangent shapes do not match the factorization")
    threshold = BREAKDOWN_RTOL * fact.norm_estimate

    # Columns of grad_H H^T are needed on and above the diagonal only.
    gHHt = gH @ H.T

    gamma = gH[:, K - 1] - Q.T @ gr
    Lambda = np.zeros((n, K))
    Lambda[:, K - 1] = gr + Q @ gamma
    if reproject:
        col = Lambda[:, K - 1]
        Lambda[:, K - 1] = col - Q @ (Q.T @ col - gH[:, K - 1])

    Gamma = np.zeros((K, K))
    grad_theta = np.zeros(np.shape(theta))
    lam = None
    for k in range(K - 1, -1, -1):
        lam_k = Lambda[:, k]
        Atlam = op.apply_transpose(theta, lam_k)
        grad_theta = grad_theta + op.vjp_params(theta, Q[:, k], lam_k)

        # Column k of the symmetric Gamma: rows <= k from projection, rows > k by symmetry.
        upper = -(Q[:, : k + 1].T @ (gQ[:, k] + Atlam) - gHHt[: k + 1, k])
        if k == 0:
            upper[0] -= c * gc
        Gamma[: k + 1, k] = upper
        Gamma[k, : k + 1] = upper

        rhs = gQ[:, k] + Atlam - Lambda[:, k:] @ H[k, k:] + Q @ Gamma[:, k] + r * gamma[k]
        if k == 0:
            lam = -rhs
            break
        sub = H[k, k - 1]
        if not abs(sub) > threshold:
            raise BreakdownError(k, sub)
        new = rhs / sub
        if reproject:
            # Hessenberg support of column k-1 is rows 0..k
            new = new - Q[:, : k + 1] @ (Q[:, : k + 1].T @ new - gH[: k + 1, k - 1])
        Lambda[:, k - 1] = new

    grad_v = -c * lam
    state = ArnoldiAdjointState(Lambda, lam, gamma, Gamma)
    return grad_v, grad_theta, state


def arnoldi_adjoint_residuals(
    op: MatVecOperator,
    theta: Array,
    fact: ArnoldiFactorization,
    cot: ArnoldiCotangents,
    state: ArnoldiAdjointState,
):
    """Norms of ``(Z_Q, Z_H on the Hessenberg support, Z_r, Z_c)``; uncounted matvecs."""
    Q, H, r, c = fact.Q, fact.H, fact.r, fact.c
    K = Q.shape[1]
    Lam, lam, gamma, G = state.Lambda, state.lam, state.gamma, state.Gamma_sym
    AtLam = np.stack([op.rmatvec(theta, Lam[:, k]) for k in range(K)], axis=1)
    e1 = np.zeros(K)
    e1[0] = 1.0
    z_Q = cot.grad_Q + AtLam - Lam @ H.T + np.outer(lam, e1) + Q @ G + np.outer(r, gamma)
    z_H = np.triu(cot.grad_H, -1) - Q.T @ Lam
    z_H = np.triu(z_H, -1)
    z_r = cot.grad_r - Lam[:, K - 1] + Q @ gamma
    z_c = cot.grad_c - fact.init_vector @ lam
    return (
        float(np.linalg.norm(z_Q)),
        float(np.linalg.norm(z_H)),
        float(np.linalg.norm(z_r)),
        float(abs(z_c)),
    )


def dense_gradient(fact: ArnoldiFactorization, state: ArnoldiAdjointState) -> Array:
    """``grad_A = Lambda Q^T`` for small dense problems."""
    return state.Lambda @ fact.Q.T
