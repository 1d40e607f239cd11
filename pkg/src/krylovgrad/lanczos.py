"""Lanczos tridiagonalisation and its adjoint.

Forward constraints (``b_0 = 1``, ``x_0 = 0``, ``k = 1..K``)::

    x_1 = v / |v|
    (A - a_k I) x_k - b_{k-1} x_{k-1} - b_k x_{k+1} = 0
    x_{k+1}^T x_{k+1} = 1,   x_k^T x_{k+1} = 0

The adjoint runs the same three-term recursion backwards in ``k`` with the
multipliers ``lambda_k`` and consumes one transpose-matvec and one parameter
VJP per step. Sign conventions: ``lambda_0`` is the multiplier that makes the
stationarity condition for ``x_1`` hold as written (it enters with ``-b_0``),
and then ``grad_v = (lambda_0 - (lambda_0^T x_1) x_1) / |v|`` and
``grad_A = sum_k lambda_k x_k^T``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .operator import MatVecOperator

Array = np.ndarray

BREAKDOWN_RTOL = 1e-14


class BreakdownError(RuntimeError):
    """The Krylov recursion hit an (numerically) invariant subspace."""

    def __init__(self, step: int, value: float):
        super().__init__(f"breakdown at step {step}: residual norm {value:.3e}")
        self.step = step
        self.value = value


class ContractError(ValueError):
    """The operator does not satisfy the method's preconditions."""


@dataclass(frozen=True)
class LanczosFactorization:
    """Output of :func:`lanczos_forward`.

    ``vectors`` has shape ``(K + 1, N)``. When the iteration was truncated by a
    breakdown at step ``K`` (only with ``allow_breakdown=True``), ``offdiag[-1]``
    is zero, ``vectors[-1]`` is zero, and ``breakdown_step == K``.
    """

    vectors: Array
    diag: Array
    offdiag: Array
    init_vector: Array
    init_norm: float
    norm_estimate: float
    breakdown_step: Optional[int] = None

    @property
    def num_steps(self) -> int:
        return len(self.diag)

    def tridiagonal(self) -> Array:
        k = self.num_steps
        T = np.diag(self.diag)
        if k > 1:
            T += np.diag(self.offdiag[: k - 1], 1) + np.diag(self.offdiag[: k - 1], -1)
        return T


@dataclass
class LanczosCotangents:
    grad_vectors: Array
    grad_diag: Array
    grad_offdiag: Array

    @classmethod
    def zeros_like(cls, fact: LanczosFactorization) -> "LanczosCotangents":
        return cls(
            np.zeros_like(fact.vectors), np.zeros_like(fact.diag), np.zeros_like(fact.offdiag)
        )


@dataclass(frozen=True)
class LanczosAdjointState:
    """Multipliers ``lambda_0..lambda_K`` (rows of ``multipliers``) and scaled ``mu, nu``.

    The multipliers of the normalisation and orthogonality constraints are
    ``mu_k = b_k * mu_tilde[k-1]`` and ``nu_k = b_k * nu_tilde[k-1]``.
    """

    multipliers: Array
    mu_tilde: Array
    nu_tilde: Array
    xi: Array
    zeta: Array


def lanczos_forward(
    op: MatVecOperator,
    theta: Array,
    v: Array,
    num_steps: int,
    reorthogonalize: bool = True,
    allow_breakdown: bool = False,
) -> LanczosFactorization:
    """Run ``num_steps`` Lanczos steps from ``v``; exactly ``num_steps`` matvecs.

    With ``reorthogonalize`` each new direction is re-projected once against
    all previous vectors. A residual norm ``b_k < 1e-14 * |A x_1|`` raises
    :class:`BreakdownError`, unless ``allow_breakdown`` is set, in which case the
    factorization is truncated to ``k`` steps and flagged.
    """
    if not op.is_symmetric:
        raise ContractError("Lanczos requires a symmetric operator")
    v = np.asarray(v, dtype=float)
    n = op.dim
    if v.shape != (n,):
        raise ValueError(f"v must have shape ({n},), got {v.shape}")
    if not 1 <= num_steps <= n:
        raise ValueError(f"need 1 <= K <= N, got K={num_steps}, N={n}")
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        raise ValueError("initial vector must be nonzero")

    X = np.zeros((num_steps + 1, n))
    a = np.zeros(num_steps)
    b = np.zeros(num_steps)
    X[0] = v / vnorm
    scale = None
    for k in range(num_steps):
        u = op.apply(theta, X[k])
        if scale is None:
            scale = float(np.linalg.norm(u))
        if k > 0:
            u = u - b[k - 1] * X[k - 1]
        a[k] = X[k] @ u
        u = u - a[k] * X[k]
        if reorthogonalize:
            u = u - X[: k + 1].T @ (X[: k + 1] @ u)
        b[k] = np.linalg.norm(u)
        if not b[k] > BREAKDOWN_RTOL * scale:
            if not allow_breakdown:
                raise BreakdownError(k + 1, b[k])
            b[k] = 0.0
            return LanczosFactorization(
                X[: k + 2], a[: k + 1], b[: k + 1], v.copy(), vnorm, scale, breakdown_step=k + 1
            )
        X[k + 1] = u / b[k]
    return LanczosFactorization(X, a, b, v.copy(), vnorm, scale)


def _check_cotangents(fact: LanczosFactorization, cot: LanczosCotangents) -> None:
    if (
        cot.grad_vectors.shape != fact.vectors.shape
        or cot.grad_diag.shape != fact.diag.shape
        or cot.grad_offdiag.shape != fact.offdiag.shape
    ):
        raise ValueError("cotangent shapes do not match the factorization")


def lanczos_adjoint(
    op: MatVecOperator,
    theta: Array,
    fact: LanczosFactorization,
    cot: LanczosCotangents,
    keep_state: bool = True,
):
    """Solve the Lanczos adjoint system backwards and assemble gradients.

    Returns ``(grad_v, grad_theta, state)``. Uses exactly ``K``
    transpose-matvecs and ``K`` parameter VJPs. With ``keep_state=False`` the
    multipliers are discarded as soon as they are used, ``state`` is ``None``
    and the working memory beyond the factorization is O(N + len(theta)).

    A factorization truncated by breakdown is accepted as long as the
    cotangents of ``x_{K+1}`` and ``b_K`` vanish (the truncated map does not
    depend on them).
    """
    _check_cotangents(fact, cot)
    X, a, b = fact.vectors, fact.diag, fact.offdiag
    K = fact.num_steps
    threshold = BREAKDOWN_RTOL * fact.norm_estimate
    truncated = fact.breakdown_step is not None
    if truncated and (np.any(cot.grad_vectors[K]) or cot.grad_offdiag[K - 1] != 0.0):
        raise ValueError("truncated factorization: x_{K+1} and b_K must carry zero cotangent")

    record = [] if keep_state else None
    grad_theta = np.zeros(np.shape(theta))
    lam_next = np.zeros(X.shape[1])  # lambda_{K+1}
    zeta = -cot.grad_vectors[K]
    if keep_state:
        record.append((None, 0.0, 0.0, None, zeta))

    for k in range(K - 1, -1, -1):
        # python index k is step k + 1
        if truncated and k == K - 1:
            xi = np.zeros_like(zeta)
            mu = 0.0
        else:
            if not abs(b[k]) > threshold:
                raise BreakdownError(k + 1, b[k])
            xi = zeta / b[k]
            mu = cot.grad_offdiag[k] - lam_next @ X[k] + X[k + 1] @ xi
        nu = cot.grad_diag[k] + X[k] @ xi
        lam = -xi + mu * X[k + 1] + nu * X[k]
        Atlam = op.apply_transpose(theta, lam)
        zeta = -cot.grad_vectors[k] - Atlam + a[k] * lam + b[k] * lam_next - b[k] * nu * X[k + 1]
        grad_theta = grad_theta + op.vjp_params(theta, X[k], lam)
        if keep_state:
            record.append((lam, mu, nu, xi, zeta))
        lam_next = lam

    lam0 = -zeta
    x1 = X[0]
    grad_v = (lam0 - (lam0 @ x1) * x1) / fact.init_norm

    state = None
    if keep_state:
        record.reverse()  # record[j] now belongs to step j + 1 (last entry: K + 1)
        state = LanczosAdjointState(
            multipliers=np.vstack([lam0] + [r[0] for r in record[:K]]),
            mu_tilde=np.array([r[1] for r in record[:K]]),
            nu_tilde=np.array([r[2] for r in record[:K]]),
            xi=np.vstack([r[3] for r in record[:K]]),
            zeta=np.vstack([r[4] for r in record]),
        )
    return grad_v, grad_theta, state


def lanczos_adjoint_residuals(
    op: MatVecOperator,
    theta: Array,
    fact: LanczosFactorization,
    cot: LanczosCotangents,
    state: LanczosAdjointState,
):
    """Evaluate the adjoint equations literally and return their norms.

    Returns ``(z_x, z_a, z_b)`` with ``z_x`` of length ``K + 1`` (one per
    ``x_k``) and ``z_a``, ``z_b`` of length ``K``. The products with ``A^T``
    here are uncounted.
    """
    X, a, b = fact.vectors, fact.diag, fact.offdiag
    K = fact.num_steps
    lam = np.vstack([state.multipliers, np.zeros((1, X.shape[1]))])  # lambda_0..lambda_{K+1}
    mu = b * state.mu_tilde
    nu = b * state.nu_tilde

    z_x = np.zeros(K + 1)
    z_a = np.zeros(K)
    z_b = np.zeros(K)
    gx = cot.grad_vectors
    z_last = -lam[K] * b[K - 1] + gx[K] + mu[K - 1] * X[K] + nu[K - 1] * X[K - 1]
    z_x[K] = np.linalg.norm(z_last)
    for k in range(1, K + 1):
        i = k - 1
        b_prev = 1.0 if k == 1 else b[i - 1]
        mu_prev = 0.0 if k == 1 else mu[i - 1]
        nu_prev = 0.0 if k == 1 else nu[i - 1]
        x_prev = np.zeros_like(X[0]) if k == 1 else X[i - 1]
        z = (
            -b[i] * lam[k + 1]
            + op.rmatvec(theta, lam[k])
            - a[i] * lam[k]
            - b_prev * lam[k - 1]
            + gx[i]
            + mu_prev * X[i]
            + nu[i] * X[i + 1]
            + nu_prev * x_prev
        )
        z_x[i] = np.linalg.norm(z)
        z_a[i] = abs(cot.grad_diag[i] - lam[k] @ X[i])
        z_b[i] = abs(cot.grad_offdiag[i] - lam[k + 1] @ X[i] - lam[k] @ X[i + 1])
    return z_x, z_a, z_b


def dense_gradient(fact: LanczosFactorization, state: LanczosAdjointState) -> Array:
    """``grad_A = sum_k lambda_k x_k^T`` (dense; for small problems and tests)."""
    K = fact.num_steps
    return state.multipliers[1 : K + 1].T @ fact.vectors[:K]
