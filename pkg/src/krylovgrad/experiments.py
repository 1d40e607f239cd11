"""Verification experiments shared by the command line and the test suite.

Each experiment returns an :class:`ExperimentResult`: a CSV header, rows, and
named checks. Floats in rows are plain Python floats; formatting happens in
:mod:`krylovgrad.cli`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import arnoldi, lanczos, reference
from .funm_action import funm_arnoldi_exp
from .operator import (
    MatVecOperator,
    hilbert_matrix,
    make_dense_operator,
    make_rbf_kernel_operator,
    make_wave_operator,
    rbf_params,
)
from .stochastic import ProbeStream, logdet_estimate

Array = np.ndarray


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class ExperimentResult:
    header: List[str]
    rows: List[list] = field(default_factory=list)
    checks: List[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> List[Check]:
        return [c for c in self.checks if not c.passed]


# Hilbert reconstruction accuracy -------------------------------------------

HILBERT_MODES = ("proj", "noproj", "backprop")


def reconstruction_jacobian_error(
    n: int, reproject: bool, reorthogonalize: bool = True, v: Optional[Array] = None
) -> float:
    """RMS of ``J - I`` for the map ``A -> Q H Q^T`` at full rank on Hilbert(n).

    ``J`` is assembled row by row: one adjoint solve per basis cotangent
    ``E_ij`` on the output, ``n^2`` solves in total.
    """
    A = hilbert_matrix(n)
    op = make_dense_operator(A)
    theta = op.params
    if v is None:
        v = np.ones(n)
    fact = arnoldi.arnoldi_forward(op, theta, v, n, reorthogonalize=reorthogonalize)
    Q, H = fact.Q, fact.H
    J = np.zeros((n * n, n * n))
    for idx in range(n * n):
        E = np.zeros(n * n)
        E[idx] = 1.0
        E = E.reshape(n, n)
        cot = arnoldi.ArnoldiCotangents(
            grad_Q=E @ Q @ H.T + E.T @ Q @ H,
            grad_H=Q.T @ E @ Q,
            grad_r=np.zeros(n),
            grad_c=0.0,
        )
        _, g, _ = arnoldi.arnoldi_adjoint(op, theta, fact, cot, reproject=reproject)
        J[idx] = g
    return float(np.sqrt(np.mean((J - np.eye(n * n)) ** 2)))


def hilbert_accuracy(
    n_max: int = 8, modes: Sequence[str] = HILBERT_MODES, reorthogonalize: bool = True
) -> ExperimentResult:
    if not 1 <= n_max <= 12:
        raise ValueError("hilbert-accuracy supports 1 <= N <= 12")
    res = ExperimentResult(["N", "mode", "eps"])
    eps = {}
    for n in range(1, n_max + 1):
        for mode in modes:
            if mode == "backprop":
                # unrolled differentiation is not part of this package
                res.rows.append([n, "backprop-skip", float("nan")])
                continue
            try:
                e = reconstruction_jacobian_error(n, mode == "proj", reorthogonalize)
            except lanczos.BreakdownError:
                # numerical rank of Hilbert(n) is below n; no full-rank factorization
                res.rows.append([n, f"{mode}-breakdown", float("nan")])
                continue
            eps[(n, mode)] = e
            res.rows.append([n, mode, e])
    for mode in ("proj", "noproj"):
        if (1, mode) in eps:
            res.checks.append(
                Check(f"N=1 {mode} eps <= 1e-14", eps[(1, mode)] <= 1e-14, f"eps={eps[(1, mode)]:.3e}")
            )
    if (8, "proj") in eps:
        e = eps[(8, "proj")]
        res.checks.append(Check("N=8 proj eps <= 1e-9", e <= 1e-9, f"eps={e:.3e}"))
    if (8, "noproj") in eps:
        e = eps[(8, "noproj")]
        res.checks.append(Check("N=8 noproj eps >= 1e-4", e >= 1e-4, f"eps={e:.3e}"))
    return res


# Matvec counts and timings -------------------------------------------------


def _random_lanczos_cotangents(fact, rng) -> lanczos.LanczosCotangents:
    cot = lanczos.LanczosCotangents(
        rng.standard_normal(fact.vectors.shape),
        rng.standard_normal(fact.diag.shape),
        rng.standard_normal(fact.offdiag.shape),
    )
    if fact.breakdown_step is not None:
        cot.grad_vectors[-1] = 0.0
        cot.grad_offdiag[-1] = 0.0
    return cot


def bench_matvecs(
    op: MatVecOperator,
    ks: Sequence[int],
    reorthogonalize: bool = False,
    seed: int = 0,
    check_walltime: bool = False,
) -> ExperimentResult:
    """Forward and adjoint matvec counts and wall times for each ``K``."""
    res = ExperimentResult(
        ["K", "forward_matvecs", "adjoint_matvecs", "forward_wall_s", "adjoint_wall_s"]
    )
    theta = op.params
    for K in ks:
        rng = np.random.default_rng([seed, K])
        v = rng.standard_normal(op.dim)
        op.reset_counters()
        t0 = time.perf_counter()
        if op.is_symmetric:
            fact = lanczos.lanczos_forward(op, theta, v, K, reorthogonalize=reorthogonalize)
        else:
            fact = arnoldi.arnoldi_forward(op, theta, v, K, reorthogonalize=reorthogonalize)
        t1 = time.perf_counter()
        fwd = op.matvec_count
        op.reset_counters()
        t2 = time.perf_counter()
        if op.is_symmetric:
            cot = _random_lanczos_cotangents(fact, rng)
            lanczos.lanczos_adjoint(op, theta, fact, cot, keep_state=False)
        else:
            cot = arnoldi.ArnoldiCotangents(
                rng.standard_normal(fact.Q.shape),
                rng.standard_normal(fact.H.shape),
                rng.standard_normal(fact.r.shape),
                float(rng.standard_normal()),
            )
            arnoldi.arnoldi_adjoint(op, theta, fact, cot, reproject=reorthogonalize)
        t3 = time.perf_counter()
        adj = op.matvec_count
        adj_t = op.transpose_calls.count
        vjps = op.vjp_calls.count
        res.rows.append([K, fwd, adj, t1 - t0, t3 - t2])
        res.checks.append(
            Check(
                f"K={K} counts",
                fwd == K and adj == K and adj_t == K and vjps == K,
                f"forward={fwd} adjoint={adj} transpose={adj_t} vjp={vjps}",
            )
        )
        if check_walltime:
            ratio = (t3 - t2) / max(t1 - t0, 1e-12)
            res.checks.append(Check(f"K={K} adjoint time within 5x", ratio <= 5.0, f"ratio={ratio:.2f}"))
    return res


# Wave equation --------------------------------------------------------------


def smooth_field(n: int, seed: int, base: float = 1.0, amplitude: float = 0.2) -> Array:
    """Sum of a few low-frequency cosine modes on the cell-centred grid."""
    rng = np.random.default_rng(seed)
    x = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(x, x, indexing="ij")
    field_ = np.zeros((n, n))
    for p in range(3):
        for q in range(3):
            field_ += rng.standard_normal() * np.cos(np.pi * p * X) * np.cos(np.pi * q * Y) / (1 + p + q) ** 2
    field_ /= np.max(np.abs(field_))
    return (base + amplitude * field_).ravel()


def wave_initial_state(n: int, seed: int) -> Array:
    rng = np.random.default_rng([seed, 1])
    cx, cy = rng.uniform(0.3, 0.7, size=2)
    x = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(x, x, indexing="ij")
    w = np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / 0.02)
    return np.concatenate([w.ravel(), np.zeros(n * n)])


WAVE_FLOOR = 1e-12


def wave_demo(
    n: int = 8,
    t: float = 1.0,
    ks: Optional[Sequence[int]] = None,
    seed: int = 0,
    reorthogonalize: bool = True,
    reproject: Optional[bool] = None,
) -> ExperimentResult:
    """Forward and gradient errors of the Arnoldi exponential against dense truth.

    The loss is ``mean(y^2) / 2`` with ``y = exp(t A(omega)) w0``.
    """
    if not 2 <= n <= 16:
        raise ValueError("wave-demo supports 2 <= n <= 16")
    dim = 2 * n * n
    if ks is None:
        ks = [k for k in (2, 4, 8, 12, 16, 24, 32, 48, 64, 96, 128, 256, 512) if k < dim] + [dim]
    ks = sorted(set(ks))
    if ks[0] < 1 or ks[-1] > dim:
        raise ValueError(f"K must lie in 1..{dim}")
    omega = smooth_field(n, seed)
    w0 = wave_initial_state(n, seed)
    op = make_wave_operator(n, omega)

    def ybar_fn(y):
        return y / len(y)

    y_true, g_true = reference.wave_solution_and_gradient(n, omega, w0, t, ybar_fn)
    res = ExperimentResult(["K", "fwd_error", "grad_error"])
    fe, ge = [], []
    for K in ks:
        out = funm_arnoldi_exp(op, omega, w0, t, K, reorthogonalize=reorthogonalize, reproject=reproject)
        _, g = out.pullback(ybar_fn(out.value))
        f_err = float(np.linalg.norm(out.value - y_true) / np.linalg.norm(y_true))
        g_err = float(np.linalg.norm(g - g_true) / np.linalg.norm(g_true))
        fe.append(f_err)
        ge.append(g_err)
        res.rows.append([K, f_err, g_err])

    if ks[-1] == dim:
        res.checks.append(Check("full-rank forward error <= 1e-8", fe[-1] <= 1e-8, f"fwd={fe[-1]:.3e}"))
    for name, errs in (("forward", fe), ("gradient", ge)):
        floored = np.maximum(errs, WAVE_FLOOR)
        mono = bool(np.all(np.diff(floored) <= 0.0))
        res.checks.append(Check(f"{name} error non-increasing in K", mono, _fmt_list(errs)))
    ratio = np.log10(np.maximum(ge, WAVE_FLOOR) / np.maximum(fe, WAVE_FLOOR))
    res.checks.append(
        Check(
            "gradient error within two orders of forward error",
            bool(np.all(np.abs(ratio) <= 2.0)),
            f"max |log10 ratio| = {np.max(np.abs(ratio)):.2f}",
        )
    )
    return res


def _fmt_list(xs) -> str:
    return "[" + ", ".join(f"{x:.2e}" for x in xs) + "]"


# Log-determinant ------------------------------------------------------------


def rbf_points(n: int, seed: int, dim: int = 2) -> Array:
    return np.random.default_rng([seed, 2]).uniform(size=(n, dim))


def logdet_demo(
    n: int = 100,
    K: int = 30,
    L: int = 100,
    seed: int = 0,
    lengthscale: float = 0.3,
    outputscale: float = 1.0,
    noise: float = 0.1,
    fd_step: float = 1e-5,
    workers: Optional[int] = None,
    reorthogonalize: bool = True,
) -> ExperimentResult:
    """Stochastic logdet of an RBF Gram matrix, its gradient, and three checks."""
    if not 1 <= n <= 200:
        raise ValueError("logdet-demo supports 1 <= N <= 200")
    X = rbf_points(n, seed)
    op = make_rbf_kernel_operator(X)
    theta = rbf_params(lengthscale, outputscale, noise)
    probes = ProbeStream(seed, n)
    K = min(K, n)

    est, pullback = logdet_estimate(op, theta, K, probes, L, workers, reorthogonalize)
    grad = pullback()

    def estimator(th):
        return logdet_estimate(op, th, K, probes, L, workers, reorthogonalize)[0].mean

    fd = np.zeros_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = fd_step
        fd[i] = (estimator(theta + e) - estimator(theta - e)) / (2 * fd_step)
    fd_rel = float(np.linalg.norm(grad.mean - fd) / np.linalg.norm(fd))

    A, dA = reference.rbf_dense(X, theta)
    truth = reference.logdet_cholesky(A)
    g_truth = reference.logdet_gradient(A, dA)
    z = np.abs(grad.mean - g_truth) / np.maximum(grad.std_error, np.finfo(float).tiny)

    res = ExperimentResult(["quantity", "value"])
    res.rows += [
        ["estimate", est.mean],
        ["std_error", est.std_error],
        ["truth", truth],
        ["abs_error", abs(est.mean - truth)],
    ]
    names = ("log_lengthscale", "log_outputscale", "log_noise")
    for nm, g, s, gt, f in zip(names, grad.mean, grad.std_error, g_truth, fd):
        res.rows += [
            [f"grad_{nm}", float(g)],
            [f"grad_se_{nm}", float(s)],
            [f"grad_truth_{nm}", float(gt)],
            [f"grad_fd_{nm}", float(f)],
        ]
    res.rows.append(["grad_fd_rel_error", fd_rel])

    res.checks += [
        Check(
            "estimate within 3 SE of dense logdet",
            abs(est.mean - truth) <= 3 * est.std_error,
            f"|{est.mean:.6g} - {truth:.6g}| vs 3*SE={3 * est.std_error:.3g}",
        ),
        Check("gradient matches finite differences (rel 1e-4)", fd_rel <= 1e-4, f"rel={fd_rel:.3e}"),
        Check(
            "gradient within 3 SE of trace identity",
            bool(np.all(z <= 3.0)),
            f"z-scores {_fmt_list(z)}",
        ),
    ]
    return res
