import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adjoint_cases import random_spd
from krylovgrad.dense_funm import EXP, FUNCTIONS, IDENTITY, LOG, SQUARE, custom
from krylovgrad.funm_action import (
    PullbackConsumedError,
    funm_arnoldi_exp,
    funm_lanczos,
    quadratic_form_funm,
)
from krylovgrad.lanczos import ContractError
from krylovgrad.operator import make_dense_operator, make_wave_operator
from krylovgrad.reference import expm_taylor, wave_matrix


def dense_funm(f, A, v):
    w, V = np.linalg.eigh(A)
    return V @ (f.value(w) * (V.T @ v))


def sym_direction(n, rng):
    D = rng.standard_normal((n, n))
    return (D + D.T).ravel()


def fd_scalar(fn, x, d, h=1e-6):
    return (fn(x + h * d) - fn(x - h * d)) / (2 * h)


def test_exp_of_zero_matrix():
    op = make_dense_operator(np.zeros((4, 4)))
    v = np.array([1.0, 2.0, 3.0, 4.0])
    res = funm_lanczos(op, op.params, v, 2, EXP)
    np.testing.assert_allclose(res.value, v)
    assert res.breakdown_step == 1


def test_identity_function_is_matvec():
    rng = np.random.default_rng(0)
    A = random_spd(10, rng)
    op = make_dense_operator(A)
    v = rng.standard_normal(10)
    for K in (2, 5):
        np.testing.assert_allclose(funm_lanczos(op, op.params, v, K, IDENTITY).value, A @ v, atol=1e-10)


def test_log_full_rank_and_gradient():
    rng = np.random.default_rng(1)
    A = random_spd(20, rng)
    op = make_dense_operator(A)
    v = rng.standard_normal(20)
    res = funm_lanczos(op, op.params, v, 20, LOG)
    np.testing.assert_allclose(res.value, dense_funm(LOG, A, v), atol=1e-8)
    ybar = rng.standard_normal(20)
    gv, gt = res.pullback(ybar)

    def f_theta(th):
        return funm_lanczos(op, th, v, 20, LOG).value @ ybar

    d = sym_direction(20, rng)
    fd = fd_scalar(f_theta, op.params, d)
    assert abs(fd - gt @ d) <= 1e-5 * abs(fd)
    dv = rng.standard_normal(20)
    fd = fd_scalar(lambda x: funm_lanczos(op, op.params, x, 20, LOG).value @ ybar, v, dv)
    assert abs(fd - gv @ dv) <= 1e-5 * abs(fd)


@pytest.mark.parametrize("adjoint", ["lanczos", "arnoldi"])
@pytest.mark.parametrize("name", sorted(FUNCTIONS))
def test_gradient_at_partial_k_all_functions(name, adjoint):
    f = FUNCTIONS[name]
    rng = np.random.default_rng(2)
    A = random_spd(12, rng, shift=2.0)
    op = make_dense_operator(A)
    v = rng.standard_normal(12)
    K = 5
    ybar = rng.standard_normal(12)
    gv, gt = funm_lanczos(op, op.params, v, K, f, adjoint=adjoint).pullback(ybar)
    d = sym_direction(12, rng)
    fd = fd_scalar(lambda th: funm_lanczos(op, th, v, K, f).value @ ybar, op.params, d)
    assert abs(fd - gt @ d) <= 1e-5 * abs(fd)
    dv = rng.standard_normal(12)
    fd = fd_scalar(lambda x: funm_lanczos(op, op.params, x, K, f).value @ ybar, v, dv)
    assert abs(fd - gv @ dv) <= 1e-5 * abs(fd)


@settings(max_examples=20, deadline=None)
@given(st.integers(4, 20), st.integers(0, 2**32 - 1))
def test_polynomial_exactness(n, seed):
    rng = np.random.default_rng(seed)
    A = random_spd(n, rng)
    op = make_dense_operator(A)
    v = rng.standard_normal(n)
    K = int(rng.integers(3, n + 1))
    coeffs = rng.standard_normal(3)
    poly = custom(
        "quad",
        lambda x: coeffs[0] + coeffs[1] * x + coeffs[2] * x**2,
        lambda x: coeffs[1] + 2 * coeffs[2] * x,
    )
    ref = coeffs[0] * v + coeffs[1] * (A @ v) + coeffs[2] * (A @ (A @ v))
    got = funm_lanczos(op, op.params, v, K, poly).value
    assert np.linalg.norm(got - ref) <= 1e-9 * max(1.0, np.linalg.norm(ref))


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**32 - 1), st.sampled_from(sorted(FUNCTIONS)))
def test_full_rank_exactness(n, seed, name):
    f = FUNCTIONS[name]
    rng = np.random.default_rng(seed)
    A = random_spd(n, rng)
    op = make_dense_operator(A)
    v = rng.standard_normal(n)
    res = funm_lanczos(op, op.params, v, n, f)
    ref = dense_funm(f, A, v)
    assert np.linalg.norm(res.value - ref) <= 1e-8 * max(1.0, np.linalg.norm(ref))


def test_rejects_nonsymmetric():
    op = make_dense_operator(np.triu(np.ones((3, 3))))
    with pytest.raises(ContractError):
        funm_lanczos(op, op.params, np.ones(3), 2, EXP)


def test_pullback_single_use():
    rng = np.random.default_rng(3)
    op = make_dense_operator(random_spd(6, rng))
    res = funm_lanczos(op, op.params, np.ones(6), 3, EXP)
    res.pullback(np.ones(6))
    with pytest.raises(PullbackConsumedError):
        res.pullback(np.ones(6))
    q = quadratic_form_funm(op, op.params, np.ones(6), 3, LOG)
    q.pullback()
    with pytest.raises(PullbackConsumedError):
        q.pullback()


def test_breakdown_flagged_and_exact():
    A = np.diag([1.0, 2.0, 3.0, 4.0])
    op = make_dense_operator(A)
    v = np.array([1.0, 1.0, 0.0, 0.0])
    res = funm_lanczos(op, op.params, v, 4, EXP)
    assert res.breakdown_step == 2 and res.num_steps == 2
    np.testing.assert_allclose(res.value, np.exp(np.diag(A)) * v, rtol=1e-13)


def test_arnoldi_exp_t_zero():
    rng = np.random.default_rng(4)
    op = make_dense_operator(rng.standard_normal((6, 6)))
    v = rng.standard_normal(6)
    np.testing.assert_allclose(funm_arnoldi_exp(op, op.params, v, 0.0, 3).value, v, atol=1e-15)


def test_arnoldi_exp_eigenvector_start():
    op = make_dense_operator(np.diag([1.0, 2.0]))
    res = funm_arnoldi_exp(op, op.params, np.array([1.0, 0.0]), 1.0, 1)
    np.testing.assert_allclose(res.value, [np.e, 0.0], rtol=1e-15)


def test_arnoldi_exp_wave_sweep_and_gradient():
    rng = np.random.default_rng(5)
    n = 4
    omega = 1.0 + 0.2 * rng.random(n * n)
    op = make_wave_operator(n, omega)
    A, _ = wave_matrix(n, omega)
    v = rng.standard_normal(2 * n * n)
    t = 0.1
    ref = expm_taylor(t * A) @ v
    errs = [np.linalg.norm(funm_arnoldi_exp(op, omega, v, t, K).value - ref) for K in range(2, 33)]
    floor = 1e-12 * np.linalg.norm(ref)
    assert all(b <= a or b <= floor for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= 1e-8
    ybar = rng.standard_normal(2 * n * n)
    gv, gt = funm_arnoldi_exp(op, omega, v, t, 20).pullback(ybar)
    d = rng.standard_normal(n * n)
    fd = fd_scalar(lambda w: funm_arnoldi_exp(op, w, v, t, 20).value @ ybar, omega, d)
    assert abs(fd - gt @ d) <= 1e-5 * abs(fd)
    dv = rng.standard_normal(2 * n * n)
    fd = fd_scalar(lambda x: funm_arnoldi_exp(op, omega, x, t, 20).value @ ybar, v, dv)
    assert abs(fd - gv @ dv) <= 1e-5 * abs(fd)


@pytest.mark.parametrize("reproject", [True, False])
def test_arnoldi_exp_gradient_nonsymmetric(reproject):
    rng = np.random.default_rng(6)
    op = make_dense_operator(rng.standard_normal((15, 15)) / 4)
    v = rng.standard_normal(15)
    ybar = rng.standard_normal(15)
    gv, gt = funm_arnoldi_exp(op, op.params, v, 0.7, 8, reproject=reproject).pullback(ybar)
    d = rng.standard_normal(op.params.shape)
    fd = fd_scalar(lambda th: funm_arnoldi_exp(op, th, v, 0.7, 8).value @ ybar, op.params, d)
    assert abs(fd - gt @ d) <= 1e-5 * abs(fd)


def test_quadratic_form_examples():
    op = make_dense_operator(np.eye(5))
    v = np.random.default_rng(7).standard_normal(5)
    assert abs(quadratic_form_funm(op, op.params, v, 3, LOG).value) <= 1e-15
    op = make_dense_operator(np.diag([1.0, np.e]))
    np.testing.assert_allclose(quadratic_form_funm(op, op.params, np.array([0.0, 1.0]), 1, LOG).value, 1.0)


def test_quadratic_form_dense_and_trace_identity():
    rng = np.random.default_rng(8)
    A = random_spd(15, rng)
    op = make_dense_operator(A)
    v = rng.standard_normal(15)
    res = quadratic_form_funm(op, op.params, v, 15, LOG)
    assert abs(res.value - v @ dense_funm(LOG, A, v)) <= 1e-8 * abs(res.value)
    gv, gt = res.pullback()
    # d/dA of v^T log(A) v is the Frechet adjoint; contract with symmetric directions
    d = sym_direction(15, rng)
    fd = fd_scalar(lambda th: quadratic_form_funm(op, th, v, 15, LOG).value, op.params, d)
    assert abs(fd - gt @ d) <= 1e-6 * abs(fd)
    np.testing.assert_allclose(gv, 2 * dense_funm(LOG, A, v), rtol=1e-7)


def test_quadratic_form_square_matches_norm():
    rng = np.random.default_rng(9)
    A = random_spd(9, rng)
    op = make_dense_operator(A)
    v = rng.standard_normal(9)
    res = quadratic_form_funm(op, op.params, v, 2, SQUARE)
    np.testing.assert_allclose(res.value, np.linalg.norm(A @ v) ** 2, rtol=1e-12)
