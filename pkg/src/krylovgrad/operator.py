"""Matrix-free parametrised linear operators.

An operator ``A(theta)`` is only reachable through three callbacks:
``apply(theta, v) = A v``, ``apply_transpose(theta, v) = A^T v`` and
``vjp_params(theta, v, w)`` which returns the gradient of
``theta -> <w, A(theta) v>``. Everything in this package is written against
that surface.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

Array = np.ndarray
MatVec = Callable[[Array, Array], Array]
ParamVJP = Callable[[Array, Array, Array], Array]


class DimensionError(ValueError):
    """Raised on inconsistent shapes or sizes."""


class MatrixMarketError(ValueError):
    """Raised for malformed Matrix Market input."""

    def __init__(self, message: str, lineno: int):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class MatvecCounter:
    """Thread-safe monotone counter of matrix-vector products."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._count = 0

    def increment(self) -> None:
        with self._lock:
            self._count += 1

    @property
    def count(self) -> int:
        with self._lock:
            return self._count

    def reset(self) -> None:
        with self._lock:
            self._count = 0


@dataclass
class MatVecOperator:
    """A square operator ``A(theta)`` exposed only through matvec callbacks.

    The raw callbacks are wrapped by :meth:`apply` and :meth:`apply_transpose`,
    which also bump :attr:`counter` (one tick per product, either orientation),
    :attr:`transpose_calls` (transpose products only) and :attr:`vjp_calls`.
    """

    dim: int
    matvec: MatVec
    rmatvec: MatVec
    param_vjp: ParamVJP
    params: Array
    is_symmetric: bool = False
    diag_fn: Optional[Callable[[Array], Array]] = None
    name: str = "operator"
    counter: MatvecCounter = field(default_factory=MatvecCounter)
    vjp_calls: MatvecCounter = field(default_factory=MatvecCounter)
    transpose_calls: MatvecCounter = field(default_factory=MatvecCounter)

    def apply(self, theta: Array, v: Array) -> Array:
        self.counter.increment()
        return self.matvec(theta, v)

    def apply_transpose(self, theta: Array, v: Array) -> Array:
        self.counter.increment()
        self.transpose_calls.increment()
        return self.rmatvec(theta, v)

    def vjp_params(self, theta: Array, v: Array, w: Array) -> Array:
        self.vjp_calls.increment()
        return self.param_vjp(theta, v, w)

    def diag(self, theta: Array) -> Optional[Array]:
        return None if self.diag_fn is None else self.diag_fn(theta)

    @property
    def matvec_count(self) -> int:
        return self.counter.count

    def reset_counters(self) -> None:
        self.counter.reset()
        self.vjp_calls.reset()
        self.transpose_calls.reset()

    def to_dense(self, theta: Optional[Array] = None) -> Array:
        """Assemble the dense matrix column by column (uncounted; testing only)."""
        theta = self.params if theta is None else theta
        eye = np.eye(self.dim)
        return np.stack([self.matvec(theta, e) for e in eye], axis=1)


def _empty_vjp(theta, v, w):
    return np.zeros(0)


def make_dense_operator(M) -> MatVecOperator:
    """Operator backed by a dense matrix; ``theta`` is the flattened matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    n = M.shape[0]

    def matvec(theta, v):
        return theta.reshape(n, n) @ v

    def rmatvec(theta, v):
        return theta.reshape(n, n).T @ v

    def param_vjp(theta, v, w):
        return np.outer(w, v).ravel()

    def diag(theta):
        return np.diag(theta.reshape(n, n)).copy()

    return MatVecOperator(
        dim=n,
        matvec=matvec,
        rmatvec=rmatvec,
        param_vjp=param_vjp,
        params=M.ravel().copy(),
        is_symmetric=bool(np.array_equal(M, M.T)),
        diag_fn=diag,
        name="dense",
    )


def hilbert_matrix(n: int) -> Array:
    # 1-based i, j with entries 1 / (i + j + 1)
    idx = np.arange(1, n + 1)
    return 1.0 / (idx[:, None] + idx[None, :] + 1.0)


def make_hilbert_operator(n: int) -> MatVecOperator:
    """Hilbert-type matrix ``[1 / (i + j + 1)]`` with 1-based indices. No parameters."""
    if n < 1:
        raise DimensionError("Hilbert operator needs n >= 1")
    H = hilbert_matrix(n)

    return MatVecOperator(
        dim=n,
        matvec=lambda theta, v: H @ v,
        rmatvec=lambda theta, v: H @ v,
        param_vjp=_empty_vjp,
        params=np.zeros(0),
        is_symmetric=True,
        diag_fn=lambda theta: np.diag(H).copy(),
        name=f"hilbert{n}",
    )


def neumann_laplacian(u: Array, scale: float = 1.0) -> Array:
    """Five-point Laplacian of a 2D field with reflecting (ghost-cell) boundaries."""
    p = np.pad(u, 1, mode="edge")
    lap = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * u
    return scale * lap


def make_wave_operator(n: int, omega, dt_scale: float = 1.0) -> MatVecOperator:
    """First-order form of the wave equation ``u_tt = omega^2 Laplace(u)``.

    The state is ``(w, dw/dt)`` stacked into a vector of length ``2 n^2`` and

        A = [[0, I], [diag(omega^2) M, 0]]

    with ``M = dt_scale * (five-point stencil)`` on an ``n x n`` grid with
    Neumann boundaries. ``M`` is symmetric, so ``A^T (y1, y2) = (M(omega^2 y2), y1)``.
    The parameter vector is ``omega`` itself.
    """
    if n < 2:
        raise DimensionError("wave operator needs n >= 2")
    omega = np.asarray(omega, dtype=float).ravel()
    if omega.size != n * n:
        raise DimensionError(f"omega must have {n * n} entries, got {omega.size}")
    if not np.all(np.isfinite(omega)):
        raise ValueError("omega has non-finite entries")
    m = n * n

    def lap(x):
        return neumann_laplacian(x.reshape(n, n), dt_scale).ravel()

    def matvec(theta, v):
        w, wdot = v[:m], v[m:]
        return np.concatenate([wdot, theta**2 * lap(w)])

    def rmatvec(theta, v):
        y1, y2 = v[:m], v[m:]
        return np.concatenate([lap(theta**2 * y2), y1])

    def param_vjp(theta, v, wbar):
        return 2.0 * theta * wbar[m:] * lap(v[:m])

    return MatVecOperator(
        dim=2 * m,
        matvec=matvec,
        rmatvec=rmatvec,
        param_vjp=param_vjp,
        params=omega.copy(),
        is_symmetric=False,
        diag_fn=lambda theta: np.zeros(2 * m),
        name=f"wave{n}",
    )


def rbf_params(lengthscale: float, outputscale: float, noise: float) -> Array:
    """Pack kernel hyperparameters into the log-space parameter vector."""
    with np.errstate(divide="ignore"):
        return np.log([lengthscale, outputscale, noise]).astype(float)


def make_rbf_kernel_operator(
    X, block_rows: int = 128, lengthscale: float = 1.0, outputscale: float = 1.0, noise: float = 0.1
) -> MatVecOperator:
    """Square-exponential Gram matrix plus noise, assembled row-block by row-block.

    ``A_ij = s^2 exp(-|x_i - x_j|^2 / (2 l^2)) + sigma^2 delta_ij`` with
    ``theta = (log l, log s, log sigma)``. Only ``block_rows`` rows of the Gram
    matrix are ever alive at once. ``noise = 0`` maps to ``log sigma = -inf``,
    which is allowed for the forward pass.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise DimensionError("need at least one point")
    if block_rows < 1:
        raise DimensionError("block_rows must be positive")
    npts = X.shape[0]
    sqnorms = np.sum(X**2, axis=1)

    def sqdist_block(lo, hi):
        d = sqnorms[lo:hi, None] + sqnorms[None, :] - 2.0 * X[lo:hi] @ X.T
        return np.maximum(d, 0.0)

    def unpack(theta):
        ell, s, sigma = np.exp(theta)
        return ell, s, sigma

    def matvec(theta, v):
        ell, s, sigma = unpack(theta)
        out = np.empty(npts)
        for lo in range(0, npts, block_rows):
            hi = min(lo + block_rows, npts)
            kblock = s**2 * np.exp(-0.5 * sqdist_block(lo, hi) / ell**2)
            out[lo:hi] = kblock @ v
        return out + sigma**2 * v

    def param_vjp(theta, v, w):
        ell, s, sigma = unpack(theta)
        g_ell = 0.0
        g_s = 0.0
        for lo in range(0, npts, block_rows):
            hi = min(lo + block_rows, npts)
            d2 = sqdist_block(lo, hi)
            kblock = s**2 * np.exp(-0.5 * d2 / ell**2)
            wk = w[lo:hi] @ kblock
            g_s += 2.0 * (wk @ v)
            g_ell += w[lo:hi] @ ((kblock * d2) @ v) / ell**2
        g_sigma = 2.0 * sigma**2 * (w @ v)
        return np.array([g_ell, g_s, g_sigma])

    def diag(theta):
        _, s, sigma = unpack(theta)
        return np.full(npts, s**2 + sigma**2)

    return MatVecOperator(
        dim=npts,
        matvec=matvec,
        rmatvec=matvec,
        param_vjp=param_vjp,
        params=rbf_params(lengthscale, outputscale, noise),
        is_symmetric=True,
        diag_fn=diag,
        name="rbf",
    )


def make_sparse_operator(S, symmetric: Optional[bool] = None) -> MatVecOperator:
    """Operator backed by a fixed scipy sparse matrix (stored as CSR). No parameters."""
    S = sp.csr_matrix(S, dtype=float)
    if S.shape[0] != S.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {S.shape}")
    ST = S.T.tocsr()
    if symmetric is None:
        symmetric = (S != ST).nnz == 0
    return MatVecOperator(
        dim=S.shape[0],
        matvec=lambda theta, v: S @ v,
        rmatvec=lambda theta, v: ST @ v,
        param_vjp=_empty_vjp,
        params=np.zeros(0),
        is_symmetric=bool(symmetric),
        diag_fn=lambda theta: S.diagonal(),
        name="sparse",
    )


def _parse_matrix_market(path):
    with open(path) as fh:
        lines = fh.readlines()
    if not lines:
        raise MatrixMarketError("empty file", 1)
    header = lines[0].split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket":
        raise MatrixMarketError("missing '%%MatrixMarket' banner", 1)
    obj, fmt, field_, symm = (h.lower() for h in header[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketError(f"unsupported object/format {obj} {fmt}", 1)
    if field_ not in ("real", "integer", "double"):
        raise MatrixMarketError(f"unsupported field {field_!r}", 1)
    if symm not in ("general", "symmetric"):
        raise MatrixMarketError(f"unsupported symmetry {symm!r}", 1)

    lineno = 1
    body = iter(enumerate(lines[1:], start=2))
    size = None
    for lineno, line in body:
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        parts = s.split()
        if len(parts) != 3:
            raise MatrixMarketError("size line must have three integers", lineno)
        try:
            size = tuple(int(p) for p in parts)
        except ValueError:
            raise MatrixMarketError("size line must have three integers", lineno) from None
        break
    if size is None:
        raise MatrixMarketError("missing size line", lineno + 1)
    nrows, ncols, nnz = size

    rows, cols, vals = [], [], []
    for lineno, line in body:
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        parts = s.split()
        if len(parts) != 3:
            raise MatrixMarketError("entry must be 'row col value'", lineno)
        try:
            i, j, x = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise MatrixMarketError("could not parse entry", lineno) from None
        if not (1 <= i <= nrows and 1 <= j <= ncols):
            raise MatrixMarketError(f"index ({i}, {j}) out of range for {nrows}x{ncols}", lineno)
        if symm == "symmetric" and j > i:
            raise MatrixMarketError("symmetric file must store the lower triangle only", lineno)
        rows.append(i - 1)
        cols.append(j - 1)
        vals.append(x)
    if len(vals) != nnz:
        raise MatrixMarketError(f"expected {nnz} entries, found {len(vals)}", lineno)

    rows, cols, vals = np.array(rows, dtype=int), np.array(cols, dtype=int), np.array(vals)
    if symm == "symmetric":
        off = rows != cols
        rows, cols, vals = (
            np.concatenate([rows, cols[off]]),
            np.concatenate([cols, rows[off]]),
            np.concatenate([vals, vals[off]]),
        )
    S = sp.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols)).tocsr()
    return S, symm == "symmetric"


def read_matrix_market(path) -> MatVecOperator:
    """Load a real coordinate Matrix Market file as a sparse CSR operator.

    The symmetry flag is taken from the header, not detected from the values.
    """
    S, symmetric = _parse_matrix_market(path)
    if S.shape[0] != S.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {S.shape}")
    op = make_sparse_operator(S, symmetric=symmetric)
    op.name = Path(path).stem
    return op


def write_matrix_market(path, S, symmetric: bool = False) -> None:
    """Write a sparse/dense matrix in coordinate format with round-trip exact floats."""
    S = sp.coo_matrix(S)
    rows, cols, vals = S.row, S.col, S.data
    if symmetric:
        keep = rows >= cols
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
    kind = "symmetric" if symmetric else "general"
    with open(path, "w") as fh:
        fh.write(f"%%MatrixMarket matrix coordinate real {kind}\n")
        fh.write(f"{S.shape[0]} {S.shape[1]} {len(vals)}\n")
        for i, j, x in zip(rows, cols, vals):
            fh.write(f"{i + 1} {j + 1} {float(x)!r}\n")
