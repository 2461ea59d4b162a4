import numpy as np
import pytest

from circe.baselines import (
    GcmEstimate,
    baseline_grad_wrt_features,
    gcm_statistic,
    gcm_with_grad,
    hscic_statistic,
    hscic_with_grad,
)
from circe.exceptions import ConfigError, NumericalError
from circe.kernels import KernelParams

YP = KernelParams(sigma2=1.0)
XP = KernelParams(sigma2=1.0)
ZP = KernelParams(sigma2=1.0)
LAM = 0.01


def test_gcm_detects_shortcut_dependence():
    values = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        y = rng.standard_normal((256, 1))
        z = rng.standard_normal((256, 1))
        est = gcm_statistic(z.copy(), z, y, YP, LAM)
        values.append(est.value)
    assert np.median(values) >= 5.0


def test_gcm_small_on_conditionally_independent_data():
    values = []
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        y = rng.standard_normal((256, 1))
        x = y + 0.1 * rng.standard_normal((256, 1))
        z = y**2 + rng.standard_normal((256, 1))
        est = gcm_statistic(x, z, y, YP, LAM)
        values.append(est.value)
    # normalized statistic is asymptotically N(0,1) under the null
    assert np.median(values) <= 3.0


def test_gcm_multivariate_max_over_pairs():
    rng = np.random.default_rng(5)
    y = rng.standard_normal((128, 1))
    z = rng.standard_normal((128, 2))
    x = np.hstack([rng.standard_normal((128, 1)), z[:, 1:2]])
    est = gcm_statistic(x, z, y, YP, LAM)
    assert est.raw_covs.shape == (2, 2)
    assert est.value == np.max(np.abs(est.raw_covs[est.included]))
    # the planted (x1, z1) pair dominates
    assert np.abs(est.raw_covs[1, 1]) == est.value


def test_gcm_variance_guard_excludes_constant_products():
    rng = np.random.default_rng(9)
    y = rng.standard_normal((64, 1))
    z = rng.standard_normal((64, 1))
    x = np.hstack([np.zeros((64, 1)), rng.standard_normal((64, 1))])
    est = gcm_statistic(x, z, y, YP, LAM)
    assert not est.included[0, 0]
    assert est.included[1, 0]
    assert np.isnan(est.raw_covs[0, 0])
    with pytest.raises(NumericalError):
        gcm_statistic(np.zeros((64, 1)), z, y, YP, LAM)


def test_gcm_smooth_surrogate_brackets_hard_max():
    rng = np.random.default_rng(3)
    y = rng.standard_normal((64, 1))
    z = rng.standard_normal((64, 2))
    x = rng.standard_normal((64, 3))
    est = gcm_statistic(x, z, y, YP, LAM)
    n_pairs = int(est.included.sum())
    assert est.regularizer_value >= est.value
    assert est.regularizer_value <= est.value + np.log(n_pairs) / 10.0


def test_gcm_gradient_matches_finite_differences():
    rng = np.random.default_rng(17)
    n = 32
    y = rng.standard_normal((n, 1))
    z = rng.standard_normal((n, 2))
    x = rng.standard_normal((n, 2))
    _, grad = gcm_with_grad(x, z, y, YP, LAM)
    step = 1e-5
    for idx in [(0, 0), (3, 1), (17, 0), (31, 1)]:
        bump = x.copy()
        bump[idx] += step
        hi = gcm_statistic(bump, z, y, YP, LAM).regularizer_value
        bump[idx] -= 2 * step
        lo = gcm_statistic(bump, z, y, YP, LAM).regularizer_value
        fd = (hi - lo) / (2 * step)
        assert abs(grad[idx] - fd) <= 1e-4 * max(1.0, abs(fd))


def test_hscic_zero_at_factorized_fixed_point():
    # separated anchors keep the ridge system well conditioned so the
    # small-lambda fit actually interpolates
    y = np.linspace(0.0, 4.0, 9).reshape(-1, 1)
    x = np.sin(y)
    z = y**2
    est, grad = hscic_with_grad(x, z, y, XP, ZP, KernelParams(sigma2=0.25),
                                lam=1e-8)
    assert est.value <= 1e-6
    assert np.linalg.norm(grad) <= 1e-5


def test_hscic_separates_dependence_from_control():
    ratios = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        y = rng.standard_normal((256, 1))
        shared = rng.standard_normal((256, 1))
        dep = hscic_statistic(shared.copy(), shared, y, XP, ZP, YP, LAM).value
        x_ci = y + 0.1 * rng.standard_normal((256, 1))
        z_ci = y + 0.1 * rng.standard_normal((256, 1))
        ci = hscic_statistic(x_ci, z_ci, y, XP, ZP, YP, LAM).value
        ratios.append(dep / max(ci, 1e-30))
    assert np.median(ratios) >= 10.0


def test_hscic_nonnegative_and_permutation_invariant():
    rng = np.random.default_rng(21)
    y = rng.standard_normal((64, 1))
    x = rng.standard_normal((64, 2))
    z = rng.standard_normal((64, 1))
    est = hscic_statistic(x, z, y, XP, ZP, YP, LAM)
    assert est.value >= -1e-10
    perm = rng.permutation(64)
    est_p = hscic_statistic(x[perm], z[perm], y[perm], XP, ZP, YP, LAM)
    assert est_p.value == pytest.approx(est.value, rel=1e-9)


def test_hscic_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    n = 32
    y = rng.standard_normal((n, 1))
    z = rng.standard_normal((n, 1))
    x = rng.standard_normal((n, 2))
    _, grad = hscic_with_grad(x, z, y, XP, ZP, YP, LAM)
    step = 1e-5
    for idx in [(0, 0), (5, 1), (20, 0), (31, 1)]:
        bump = x.copy()
        bump[idx] += step
        hi = hscic_statistic(bump, z, y, XP, ZP, YP, LAM).value
        bump[idx] -= 2 * step
        lo = hscic_statistic(bump, z, y, XP, ZP, YP, LAM).value
        fd = (hi - lo) / (2 * step)
        assert abs(grad[idx] - fd) <= 1e-4 * max(1e-6, abs(fd))


def test_grad_dispatch_and_validation():
    rng = np.random.default_rng(2)
    y = rng.standard_normal((16, 1))
    z = rng.standard_normal((16, 1))
    x = rng.standard_normal((16, 1))
    g1 = baseline_grad_wrt_features("gcm", x, z, y, y_params=YP, lam=LAM)
    assert g1.shape == x.shape
    g2 = baseline_grad_wrt_features("hscic", x, z, y, y_params=YP, lam=LAM,
                                    x_params=XP, z_params=ZP)
    assert g2.shape == x.shape
    with pytest.raises(ConfigError):
        baseline_grad_wrt_features("hscic", x, z, y, y_params=YP, lam=LAM)
    with pytest.raises(ConfigError):
        baseline_grad_wrt_features("kci", x, z, y, y_params=YP, lam=LAM)
    with pytest.raises(ConfigError):
        gcm_statistic(x[:4], z[:4], y[:4], YP, LAM)
    with pytest.raises(ConfigError):
        gcm_statistic(x, z, y, YP, 0.0)
    with pytest.raises(ConfigError):
        hscic_statistic(x, z[:8], y, XP, ZP, YP, LAM)


def test_gcm_failure_mode_light():
    # symmetric distractor noise: residual covariance vanishes in
    # population even though dependence is real
    below = 0
    seeds = 20
    for seed in range(seeds):
        rng = np.random.default_rng(300 + seed)
        n = 512
        big_y = rng.standard_normal((n, 1))
        xi_z = rng.standard_normal((n, 1))
        xi_y = rng.standard_normal((n, 1))
        x = big_y + xi_z**2
        y = big_y + 0.0 * xi_y
        z = xi_z
        est = gcm_statistic(x, z, y, YP, LAM)
        if est.value < 1.96:
            below += 1
    assert below >= int(0.7 * seeds)
