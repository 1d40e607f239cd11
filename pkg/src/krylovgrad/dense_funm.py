"""Functions of small dense matrices with exact pullbacks.

Symmetric inputs go through an eigendecomposition and the Daleckii-Krein
(Loewner matrix) rule. The exponential of a general (Hessenberg) matrix uses
scaling-and-squaring Pade, and its pullback the block-triangular augmentation
of the Frechet derivative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

Array = np.ndarray

# Relative gap below which eigenvalues count as coincident in divided differences.
DEGENERATE_GAP = 1e-10


class DomainError(ValueError):
    """An eigenvalue lies outside the domain of the scalar function."""


@dataclass(frozen=True)
class ScalarFunction:
    """A scalar function together with its derivative and domain check."""

    name: str
    value: Callable[[Array], Array]
    derivative: Callable[[Array], Array]
    in_domain: Callable[[Array], Array] = lambda x: np.ones_like(x, dtype=bool)

    def __call__(self, x):
        return self.value(x)

    def check_domain(self, eigenvalues: Array) -> None:
        ok = self.in_domain(eigenvalues)
        if not np.all(ok):
            bad = eigenvalues[~ok][0]
            raise DomainError(f"eigenvalue {bad!r} outside the domain of {self.name}")


def custom(name: str, value, derivative, in_domain=None) -> ScalarFunction:
    if in_domain is None:
        return ScalarFunction(name, value, derivative)
    return ScalarFunction(name, value, derivative, in_domain)


EXP = ScalarFunction("exp", np.exp, np.exp)
LOG = ScalarFunction("log", np.log, lambda x: 1.0 / x, lambda x: x > 0)
SQRT = ScalarFunction("sqrt", np.sqrt, lambda x: 0.5 / np.sqrt(x), lambda x: x > 0)
INV_SQRT = ScalarFunction(
    "inv_sqrt", lambda x: x**-0.5, lambda x: -0.5 * x**-1.5, lambda x: x > 0
)
SQUARE = ScalarFunction("square", lambda x: x**2, lambda x: 2.0 * x)
LOG1P = ScalarFunction("log1p", np.log1p, lambda x: 1.0 / (1.0 + x), lambda x: x > -1)
IDENTITY = ScalarFunction("identity", lambda x: x, np.ones_like)

FUNCTIONS = {f.name: f for f in (EXP, LOG, SQRT, INV_SQRT, SQUARE, LOG1P, IDENTITY)}


def tridiagonal(diag: Array, offdiag: Array) -> Array:
    """Symmetric tridiagonal matrix from its diagonal and (K-1) off-diagonal."""
    T = np.diag(np.asarray(diag, dtype=float))
    if len(diag) > 1:
        off = np.asarray(offdiag, dtype=float)[: len(diag) - 1]
        T += np.diag(off, 1) + np.diag(off, -1)
    return T


def band_mask(k: int, lower: int, upper: int) -> Array:
    i, j = np.indices((k, k))
    return (j - i <= upper) & (i - j <= lower)


def loewner_matrix(f: ScalarFunction, w: Array) -> Array:
    """Divided differences ``(f(w_i) - f(w_j)) / (w_i - w_j)`` with derivative fallback."""
    wi, wj = w[:, None], w[None, :]
    diff = wi - wj
    close = np.abs(diff) < DEGENERATE_GAP * (1.0 + np.abs(wi))
    fw = f.value(w)
    with np.errstate(divide="ignore", invalid="ignore"):
        L = (fw[:, None] - fw[None, :]) / np.where(close, 1.0, diff)
    mid = f.derivative(0.5 * (wi + wj) * np.ones_like(diff))
    return np.where(close, mid, L)


def _eigh_checked(f: ScalarFunction, H: Array):
    H = np.asarray(H, dtype=float)
    w, V = np.linalg.eigh(H)
    f.check_domain(w)
    return w, V


def funm_sym_e1(f: ScalarFunction, H: Array):
    """``y = f(H) e_1`` for symmetric tridiagonal ``H`` and its pullback.

    Returns ``(y, pullback)`` where ``pullback(ybar)`` gives the symmetric
    gradient ``Hbar`` restricted to the tridiagonal band. For the
    ``(a, b)`` parametrisation, ``grad_a = diag(Hbar)`` and
    ``grad_b = 2 * diag(Hbar, 1)``.
    """
    w, V = _eigh_checked(f, H)
    k = len(w)
    v1 = V[0]
    y = V @ (f.value(w) * v1)

    def pullback(ybar):
        L = loewner_matrix(f, w)
        inner = np.outer(V.T @ ybar, v1)
        G = V @ (L * inner) @ V.T
        G = 0.5 * (G + G.T)
        return np.where(band_mask(k, 1, 1), G, 0.0)

    return y, pullback


def funm_full(f: ScalarFunction, H: Array) -> Array:
    """Full ``f(H) = V f(w) V^T`` for symmetric ``H``."""
    w, V = _eigh_checked(f, H)
    F = (V * f.value(w)) @ V.T
    return 0.5 * (F + F.T)


def _expm(M: Array) -> Array:
    # scipy's expm: scaling-and-squaring with degree-13 Pade, theta_13 = 5.37
    with np.errstate(over="raise", invalid="raise"):
        try:
            E = scipy.linalg.expm(M)
        except FloatingPointError as exc:
            raise OverflowError("matrix exponential overflowed") from exc
    if not np.all(np.isfinite(E)):
        raise OverflowError("matrix exponential overflowed")
    return E


def expm_hessenberg_e1(H: Array, t: float = 1.0):
    """``y = exp(t H) e_1`` for a small general matrix and its pullback.

    The pullback uses the Frechet-adjoint identity
    ``Hbar = t * topright(exp([[t H^T, ybar e_1^T], [0, t H^T]]))``.
    """
    H = np.asarray(H, dtype=float)
    if not np.all(np.isfinite(H)):
        raise ValueError("H has non-finite entries")
    k = H.shape[0]
    E = _expm(t * H)
    y = E[:, 0].copy()

    def pullback(ybar):
        aug = np.zeros((2 * k, 2 * k))
        aug[:k, :k] = t * H.T
        aug[k:, k:] = t * H.T
        aug[:k, k] = ybar
        return t * _expm(aug)[:k, k:]

    return y, pullback


def hessenberg_project(G: Array) -> Array:
    """Zero out entries below the first subdiagonal."""
    return np.triu(G, -1)


def tridiag_cotangents(Hbar: Array):
    """Map a symmetric band cotangent to cotangents of ``(a_1..a_K, b_1..b_{K-1})``."""
    da = np.diag(Hbar).copy()
    db = np.diag(Hbar, 1) + np.diag(Hbar, -1)
    return da, db
