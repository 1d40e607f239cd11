import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adjoint_cases import Instance, fd_check, random_spd, scaled_residual
from krylovgrad import arnoldi
from krylovgrad.arnoldi import (
    ArnoldiCotangents,
    arnoldi_adjoint,
    arnoldi_adjoint_residuals,
    arnoldi_forward,
)
from krylovgrad.experiments import reconstruction_jacobian_error
from krylovgrad.lanczos import BreakdownError, lanczos_forward
from krylovgrad.operator import make_dense_operator, make_hilbert_operator, make_wave_operator
from krylovgrad.reference import wave_matrix


def test_identity_k1():
    op = make_dense_operator(np.eye(2))
    f = arnoldi_forward(op, op.params, np.array([1.0, 0.0]), 1)
    np.testing.assert_allclose(f.Q, [[1], [0]])
    np.testing.assert_allclose(f.H, [[1]])
    np.testing.assert_allclose(f.r, 0)
    assert f.c == 1.0


def test_shift_matrix():
    op = make_dense_operator([[0.0, 0.0], [1.0, 0.0]])
    f = arnoldi_forward(op, op.params, np.array([1.0, 0.0]), 2)
    np.testing.assert_allclose(f.Q, np.eye(2))
    np.testing.assert_allclose(f.H, [[0, 0], [1, 0]])
    np.testing.assert_allclose(f.r, 0)
    assert f.c == 1.0


def test_breakdown_before_k():
    op = make_dense_operator(np.eye(3))
    with pytest.raises(BreakdownError):
        arnoldi_forward(op, op.params, np.array([1.0, 0, 0]), 2)
    f = arnoldi_forward(op, op.params, np.array([1.0, 0, 0]), 2, allow_breakdown=True)
    assert f.breakdown_step == 1 and f.num_steps == 1


def test_wave_full_rank_reconstruction():
    rng = np.random.default_rng(0)
    omega = 0.5 + rng.random(9)
    op = make_wave_operator(3, omega)
    A, _ = wave_matrix(3, omega)
    f = arnoldi_forward(op, omega, rng.standard_normal(18), 18)
    assert np.linalg.norm(f.Q @ f.H @ f.Q.T - A) <= 1e-9 * np.linalg.norm(A)


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 25), st.integers(0, 2**32 - 1))
def test_forward_invariants(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    op = make_dense_operator(A)
    K = int(rng.integers(1, n + 1))
    v = rng.standard_normal(n)
    f = arnoldi_forward(op, op.params, v, K)
    e_K = np.zeros(K)
    e_K[-1] = 1
    scale = f.norm_estimate
    assert np.max(np.linalg.norm(A @ f.Q - f.Q @ f.H - np.outer(f.r, e_K), axis=0)) <= 1e-10 * scale * 10
    assert np.max(np.abs(np.tril(f.Q.T @ f.Q) - np.eye(K))) <= 1e-10
    assert np.all(np.tril(f.H, -2) == 0.0)
    assert np.max(np.abs(f.Q.T @ f.r)) <= 1e-10 * scale
    np.testing.assert_allclose(f.Q[:, 0], f.c * v, atol=1e-15)


def test_symmetric_input_matches_lanczos():
    rng = np.random.default_rng(1)
    op = make_dense_operator(random_spd(15, rng))
    v = rng.standard_normal(15)
    fa = arnoldi_forward(op, op.params, v, 9)
    fl = lanczos_forward(op, op.params, v, 9)
    assert np.max(np.abs(np.diag(fa.H, 1) - np.diag(fa.H, -1))) <= 1e-9
    np.testing.assert_allclose(np.diag(fa.H), fl.diag, atol=1e-9)
    np.testing.assert_allclose(np.diag(fa.H, -1), fl.offdiag[:-1], atol=1e-9)


def test_zero_cotangents():
    rng = np.random.default_rng(2)
    op = make_dense_operator(rng.standard_normal((8, 8)))
    f = arnoldi_forward(op, op.params, rng.standard_normal(8), 5)
    cot = ArnoldiCotangents.zeros_like(f)
    gv, gt, state = arnoldi_adjoint(op, op.params, f, cot)
    assert not gv.any() and not gt.any() and not state.Lambda.any() and not state.lam.any()
    assert max(arnoldi_adjoint_residuals(op, op.params, f, cot, state)) == 0.0


def test_finite_differences_random_12_k7():
    rng = np.random.default_rng(3)
    op = make_dense_operator(rng.standard_normal((12, 12)))
    inst = Instance("dense_nonsym", op, op.params.copy(), rng.standard_normal(12), 7, False)
    ev, et, fact, cot, state = fd_check(inst, seed=1)
    assert ev <= 1e-5 and et <= 1e-5
    assert scaled_residual(inst, fact, cot, state) <= 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 14), st.integers(0, 2**32 - 1))
def test_finite_differences_property(n, seed):
    rng = np.random.default_rng(seed)
    op = make_dense_operator(rng.standard_normal((n, n)) / np.sqrt(n))
    K = int(rng.integers(1, n + 1))
    inst = Instance("dense_nonsym", op, op.params.copy(), rng.standard_normal(n), K, False)
    ev, et, fact, cot, state = fd_check(inst, seed)
    assert ev <= 1e-5 and et <= 1e-5
    assert scaled_residual(inst, fact, cot, state) <= 1e-8


def test_dense_gradient_orientation():
    rng = np.random.default_rng(4)
    op = make_dense_operator(rng.standard_normal((7, 7)))
    f = arnoldi_forward(op, op.params, rng.standard_normal(7), 4)
    cot = ArnoldiCotangents(
        rng.standard_normal(f.Q.shape), np.triu(rng.standard_normal((4, 4)), -1), rng.standard_normal(7), 0.3
    )
    _, gt, state = arnoldi_adjoint(op, op.params, f, cot)
    np.testing.assert_allclose(arnoldi.dense_gradient(f, state).ravel(), gt, atol=1e-12)


def test_adjoint_counts():
    rng = np.random.default_rng(5)
    op = make_wave_operator(3, 1 + rng.random(9))
    f = arnoldi_forward(op, op.params, rng.standard_normal(18), 10)
    assert op.matvec_count == 10
    op.reset_counters()
    cot = ArnoldiCotangents(
        rng.standard_normal(f.Q.shape), rng.standard_normal((10, 10)), rng.standard_normal(18), 1.0
    )
    arnoldi_adjoint(op, op.params, f, cot)
    assert op.matvec_count == 10
    assert op.vjp_calls.count == 10


def test_below_subdiagonal_cotangent_is_ignored():
    rng = np.random.default_rng(6)
    op = make_dense_operator(rng.standard_normal((6, 6)))
    f = arnoldi_forward(op, op.params, rng.standard_normal(6), 4)
    gH = np.triu(rng.standard_normal((4, 4)), -1)
    base = ArnoldiCotangents(rng.standard_normal(f.Q.shape), gH, rng.standard_normal(6), 0.0)
    noisy = ArnoldiCotangents(base.grad_Q, gH + np.tril(np.ones((4, 4)), -2), base.grad_r, 0.0)
    g1 = arnoldi_adjoint(op, op.params, f, base)[1]
    g2 = arnoldi_adjoint(op, op.params, f, noisy)[1]
    np.testing.assert_array_equal(g1, g2)


def test_hilbert_projection_residual_gap():
    op = make_hilbert_operator(8)
    f = arnoldi_forward(op, op.params, np.ones(8), 8)
    rng = np.random.default_rng(7)
    E = rng.standard_normal((8, 8))
    Q, H = f.Q, f.H
    cot = ArnoldiCotangents(E @ Q @ H.T + E.T @ Q @ H, Q.T @ E @ Q, np.zeros(8), 0.0)
    on = arnoldi_adjoint(op, op.params, f, cot, reproject=True)[2]
    off = arnoldi_adjoint(op, op.params, f, cot, reproject=False)[2]
    zh_on = arnoldi_adjoint_residuals(op, op.params, f, cot, on)[1]
    zh_off = arnoldi_adjoint_residuals(op, op.params, f, cot, off)[1]
    assert zh_off >= 1e3 * zh_on


def test_full_rank_jacobian_identity_well_conditioned():
    # reconstruction map A -> Q H Q^T is the identity at K = N
    assert reconstruction_jacobian_error(4, reproject=True) <= 1e-8
