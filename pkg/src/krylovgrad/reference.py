"""Dense reference computations for verification on small problems.

These deliberately avoid the Krylov code paths: the exponential is a Taylor
series with scaling and squaring, log-determinants go through Cholesky, and
kernel derivatives are formed entrywise.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .operator import neumann_laplacian

Array = np.ndarray


def expm_taylor(M: Array, terms: int = 30) -> Array:
    """``exp(M)`` by a truncated Taylor series after scaling to norm <= 1/2."""
    M = np.asarray(M, dtype=float)
    nrm = np.linalg.norm(M, 1)
    s = max(0, int(np.ceil(np.log2(nrm / 0.5)))) if nrm > 0.5 else 0
    X = M / 2.0**s
    E = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for j in range(1, terms + 1):
        term = term @ X / j
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def expm_frechet_adjoint(M: Array, G: Array) -> Array:
    """Adjoint Frechet derivative ``L(M^T, G)`` via the 2x2 block exponential."""
    n = M.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = M.T
    aug[n:, n:] = M.T
    aug[:n, n:] = G
    return expm_taylor(aug)[:n, n:]


def wave_matrix(n: int, omega: Array, dt_scale: float = 1.0) -> Array:
    """Dense first-order wave operator, assembled from the stencil on unit vectors."""
    m = n * n
    Mlap = np.stack(
        [neumann_laplacian(e.reshape(n, n), dt_scale).ravel() for e in np.eye(m)], axis=1
    )
    A = np.zeros((2 * m, 2 * m))
    A[:m, m:] = np.eye(m)
    A[m:, :m] = (np.asarray(omega) ** 2)[:, None] * Mlap
    return A, Mlap


def wave_solution_and_gradient(n, omega, w0, t, ybar_fn, dt_scale=1.0):
    """``y = exp(t A(omega)) w0`` and ``grad_omega <ybar(y), y>`` exactly (dense).

    ``ybar_fn(y)`` returns the loss cotangent at ``y``.
    """
    omega = np.asarray(omega, dtype=float)
    A, Mlap = wave_matrix(n, omega, dt_scale)
    y = expm_taylor(t * A) @ w0
    ybar = ybar_fn(y)
    Abar = t * expm_frechet_adjoint(t * A, np.outer(ybar, w0))
    m = n * n
    grad = 2.0 * omega * np.sum(Abar[m:, :m] * Mlap, axis=1)
    return y, grad


def rbf_dense(X: Array, theta: Array):
    """Dense RBF Gram matrix plus noise, and its derivatives in ``(log l, log s, log sigma)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    ell, s, sigma = np.exp(theta)
    d2 = np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=-1)
    K = s**2 * np.exp(-0.5 * d2 / ell**2)
    A = K + sigma**2 * np.eye(len(X))
    dA = [K * d2 / ell**2, 2.0 * K, 2.0 * sigma**2 * np.eye(len(X))]
    return A, dA


def logdet_cholesky(A: Array) -> float:
    c = scipy.linalg.cholesky(A, lower=True)
    return float(2.0 * np.sum(np.log(np.diag(c))))


def logdet_gradient(A: Array, dA) -> Array:
    """``trace(A^{-1} dA_i)`` for each derivative matrix."""
    cf = scipy.linalg.cho_factor(A, lower=True)
    return np.array([np.trace(scipy.linalg.cho_solve(cf, D)) for D in dA])

