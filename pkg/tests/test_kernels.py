import numpy as np
import pytest

from circe.exceptions import ConfigError, NumericalError
from circe.kernels import (
    KernelParams,
    gram,
    gram_backprop,
    kernel_eval,
    regularized_solve,
    trace_product,
)


def test_kernel_eval_matches_closed_form():
    p = KernelParams(sigma2=0.5)
    x = np.array([1.0, 2.0])
    xp = np.array([0.0, 0.0])
    expected = np.exp(-5.0 / (2.0 * 0.5))
    assert kernel_eval(x, xp, p) == pytest.approx(expected, rel=1e-15)
    assert kernel_eval(x, x, p) == 1.0


def test_gram_agrees_with_pairwise_eval():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((7, 3))
    b = rng.standard_normal((5, 3))
    p = KernelParams(sigma2=2.0)
    K = gram(a, b, p)
    for i in range(7):
        for j in range(5):
            assert K[i, j] == pytest.approx(kernel_eval(a[i], b[j], p), abs=1e-14)


def test_gram_accepts_1d_input():
    y = np.linspace(-1, 1, 6)
    K = gram(y, y, KernelParams(sigma2=1.0))
    assert K.shape == (6, 6)
    assert np.allclose(np.diag(K), 1.0)


def test_gram_psd_floor():
    rng = np.random.default_rng(3)
    for n in (5, 40, 120):
        x = rng.standard_normal((n, 2)) * 3
        K = gram(x, x, KernelParams(sigma2=0.7))
        eigs = np.linalg.eigvalsh(K)
        assert eigs.min() >= -1e-10 * n * K.max()


def test_schur_product_of_grams_stays_psd():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((60, 1))
    z = rng.standard_normal((60, 2))
    K1 = gram(x, x, KernelParams(sigma2=1.0))
    K2 = gram(z, z, KernelParams(sigma2=0.3))
    eigs = np.linalg.eigvalsh(K1 * K2)
    assert eigs.min() >= -1e-10 * 60 * (K1 * K2).max()


def test_gram_is_deterministic():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((50, 4))
    p = KernelParams(sigma2=1.3)
    K1 = gram(x, x, p)
    K2 = gram(x, x, p)
    assert np.array_equal(K1, K2)


def test_bad_params_rejected():
    with pytest.raises(ConfigError):
        KernelParams(sigma2=0.0)
    with pytest.raises(ConfigError):
        KernelParams(sigma2=-1.0)
    with pytest.raises(ConfigError):
        KernelParams(sigma2=np.inf)
    with pytest.raises(ConfigError):
        KernelParams(sigma2=1.0, family="laplace")


def test_dimension_mismatch_rejected():
    with pytest.raises(ConfigError):
        gram(np.zeros((3, 2)), np.zeros((3, 4)), KernelParams(sigma2=1.0))


def test_trace_product_matches_brute_force():
    rng = np.random.default_rng(6)
    A = rng.standard_normal((9, 9))
    B = rng.standard_normal((9, 9))
    brute = sum(A[i, j] * B[j, i] for i in range(9) for j in range(9))
    assert trace_product(A, B) == pytest.approx(brute, rel=1e-12)
    assert trace_product(A, B) == pytest.approx(np.trace(A @ B), rel=1e-12)


def test_trace_hadamard_identity():
    # tr(A (B o C)) == tr((A o B) C) for symmetric factors
    rng = np.random.default_rng(7)
    for seed in range(5):
        r = np.random.default_rng(seed)
        x = r.standard_normal((12, 2))
        A = gram(x, x, KernelParams(sigma2=1.0))
        B = gram(x + 1, x + 1, KernelParams(sigma2=0.5))
        C = gram(2 * x, 2 * x, KernelParams(sigma2=2.0))
        lhs = trace_product(A, B * C)
        rhs = trace_product(A * B, C)
        assert lhs == pytest.approx(rhs, rel=1e-12)
    del rng


def test_regularized_solve_residual_and_inverse():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((30, 2))
    K = gram(x, x, KernelParams(sigma2=1.0))
    lam = 1e-3
    B = rng.standard_normal((30, 4))
    S = regularized_solve(K, lam, B)
    resid = np.linalg.norm((K + lam * np.eye(30)) @ S - B) / np.linalg.norm(B)
    assert resid <= 1e-8
    S_ref = np.linalg.solve(K + lam * np.eye(30), B)
    assert np.allclose(S, S_ref, atol=1e-8)


def test_regularized_solve_large_lambda_limit():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((20, 1))
    K = gram(x, x, KernelParams(sigma2=1.0))
    B = rng.standard_normal((20, 2))
    lam = 1e6
    S = regularized_solve(K, lam, B)
    assert np.linalg.norm(S - B / lam) / np.linalg.norm(B / lam) <= 1e-4


def test_regularized_solve_rejects_bad_lambda():
    K = np.eye(3)
    with pytest.raises(ConfigError):
        regularized_solve(K, 0.0, np.ones(3))
    with pytest.raises(ConfigError):
        regularized_solve(K, -1.0, np.ones(3))


def test_regularized_solve_handles_singular_gram():
    # duplicated points make K exactly rank-deficient; lam restores definiteness
    rng = np.random.default_rng(10)
    x = rng.standard_normal((20, 2))
    x = np.vstack([x, x])
    K = gram(x, x, KernelParams(sigma2=1.0))
    S = regularized_solve(K, 1e-3, np.ones(40))
    assert np.all(np.isfinite(S))
    resid = np.linalg.norm((K + 1e-3 * np.eye(40)) @ S - np.ones(40))
    assert resid / np.linalg.norm(np.ones(40)) <= 1e-8


def test_regularized_solve_fails_on_indefinite():
    K = -np.eye(10)
    with pytest.raises(NumericalError):
        regularized_solve(K, 0.5, np.ones(10))


def test_gram_backprop_matches_finite_differences():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((6, 2))
    coeff = rng.standard_normal((6, 6))
    sigma2 = 0.8
    p = KernelParams(sigma2=sigma2)

    def objective(pts):
        K = gram(pts, pts, p)
        return float(np.sum(coeff * K))

    grad = gram_backprop(coeff, x, gram(x, x, p), sigma2)
    h = 1e-6
    for i in range(6):
        for j in range(2):
            xp = x.copy()
            xm = x.copy()
            xp[i, j] += h
            xm[i, j] -= h
            fd = (objective(xp) - objective(xm)) / (2 * h)
            assert grad[i, j] == pytest.approx(fd, rel=1e-6, abs=1e-9)
