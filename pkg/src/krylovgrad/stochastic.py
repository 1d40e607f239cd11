"""Randomised estimators: Hutchinson trace, log-determinant, diagonal, sampling.

Every probe is a pure function of ``(seed, index, dim)``, and reductions run in
ascending probe order, so results are bit-identical whatever the thread
schedule.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dense_funm import INV_SQRT, LOG
from .funm_action import funm_lanczos, quadratic_form_funm
from .operator import MatVecOperator

Array = np.ndarray

DISTRIBUTIONS = ("rademacher", "gaussian")


@dataclass(frozen=True)
class ProbeStream:
    """Deterministic probe vectors with ``E[v v^T] = I``."""

    seed: int
    dim: int
    distribution: str = "rademacher"

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.dim < 1:
            raise ValueError("dim must be positive")

    def probe(self, i: int) -> Array:
        # SeedSequence hashes (seed, i) into an independent stream per probe
        rng = np.random.default_rng([int(self.seed) & 0xFFFFFFFFFFFFFFFF, int(i)])
        if self.distribution == "rademacher":
            return rng.choice(np.array([-1.0, 1.0]), size=self.dim)
        return rng.standard_normal(self.dim)


@dataclass
class TraceEstimate:
    mean: float
    std_error: float
    num_probes: int
    per_probe: Optional[Array] = None
    single_sample: bool = False


def _map_probes(fn: Callable[[int], object], L: int, workers: Optional[int]):
    if workers is None or workers <= 1:
        return [fn(i) for i in range(L)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order
        return list(pool.map(fn, range(L)))


def _summarise(values: Array, keep: bool) -> TraceEstimate:
    L = len(values)
    mean = float(np.sum(values) / L)
    if L == 1:
        return TraceEstimate(mean, 0.0, 1, values if keep else None, single_sample=True)
    se = float(np.std(values, ddof=1) / np.sqrt(L))
    return TraceEstimate(mean, se, L, values if keep else None)


def hutchinson_trace(
    form: Callable[[Array], float],
    probes: ProbeStream,
    L: int,
    workers: Optional[int] = None,
    keep_samples: bool = False,
) -> TraceEstimate:
    """Mean and standard error of ``form(v_l)`` over ``L`` probes."""
    if L < 1:
        raise ValueError("need at least one probe")

    def one(i):
        val = float(form(probes.probe(i)))
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite quadratic form at probe {i}")
        return val

    values = np.array(_map_probes(one, L, workers))
    return _summarise(values, keep_samples)


@dataclass
class LogdetGradient:
    mean: Array
    std_error: Array
    per_probe: Optional[Array] = None


def logdet_estimate(
    op: MatVecOperator,
    theta: Array,
    num_steps: int,
    probes: ProbeStream,
    L: int,
    workers: Optional[int] = None,
    reorthogonalize: bool = True,
):
    """Stochastic Lanczos quadrature for ``log det A(theta)``.

    Returns ``(estimate, pullback)``. ``pullback(sbar=1.0)`` returns a
    :class:`LogdetGradient` holding the mean parameter gradient of the
    estimator with the same probes, and its per-probe standard error. Each
    probe's factorization is recomputed in the pullback rather than stored.
    """
    if L < 1:
        raise ValueError("need at least one probe")

    def forward(i):
        return quadratic_form_funm(
            op, theta, probes.probe(i), num_steps, LOG, reorthogonalize=reorthogonalize
        )

    def value(i):
        val = forward(i).value
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite quadratic form at probe {i}")
        return val

    estimate = _summarise(np.array(_map_probes(value, L, workers)), keep=False)

    def pullback(sbar: float = 1.0, keep_samples: bool = False) -> LogdetGradient:
        def grad(i):
            return forward(i).pullback(sbar)[1]

        G = np.array(_map_probes(grad, L, workers)).reshape(L, -1)
        mean = np.sum(G, axis=0) / L
        if L > 1:
            se = np.std(G, axis=0, ddof=1) / np.sqrt(L)
        else:
            se = np.zeros_like(mean)
        return LogdetGradient(mean, se, G if keep_samples else None)

    return estimate, pullback


@dataclass
class DiagonalEstimate:
    mean: Array
    std_error: Array
    num_probes: int


def diagonal_estimate(
    op: MatVecOperator, theta: Array, probes: ProbeStream, L: int, workers: Optional[int] = None
) -> DiagonalEstimate:
    """Mean of ``v * (A v)`` over ``L`` probes, elementwise."""
    if L < 1:
        raise ValueError("need at least one probe")

    def one(i):
        v = probes.probe(i)
        return v * op.apply(theta, v)

    S = np.array(_map_probes(one, L, workers))
    mean = np.sum(S, axis=0) / L
    se = np.std(S, axis=0, ddof=1) / np.sqrt(L) if L > 1 else np.zeros(op.dim)
    return DiagonalEstimate(mean, se, L)


def sample_inv_sqrt(op: MatVecOperator, theta: Array, num_steps: int, eps: Array) -> Array:
    """``A^{-1/2} eps`` by Lanczos; with Gaussian ``eps`` this samples ``N(0, A^{-1})``."""
    return funm_lanczos(op, theta, eps, num_steps, INV_SQRT).value
