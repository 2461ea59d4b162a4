"""Residual-covariance (GCM) and conditional-dependence (HSCIC) measures.

Both regress onto Y with kernel ridge inside the batch, so nothing is
cached across batches. Gradients with respect to the X features treat the
ridge weights as functions of Y alone, which they are.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .exceptions import ConfigError, NumericalError
from .kernels import KernelParams, as_points, gram, gram_backprop, regularized_solve

GCM_MIN_BATCH = 8
GCM_VARIANCE_GUARD = 1e-12
GCM_SMOOTHMAX_TAU = 10.0


@dataclass
class GcmEstimate:
    """Max-normalized residual covariance plus its smooth trainable surrogate."""

    value: float
    raw_covs: np.ndarray
    regularizer_value: float
    included: np.ndarray


@dataclass
class HscicEstimate:
    value: float


def _check_batch(x_feats, z, y, lam):
    x_feats = as_points(x_feats)
    z = as_points(z)
    y = as_points(y)
    n = x_feats.shape[0]
    if z.shape[0] != n or y.shape[0] != n:
        raise ConfigError("x_feats, z, y must share the batch dimension")
    if n < GCM_MIN_BATCH:
        raise ConfigError(f"batch of {n} too small, need at least {GCM_MIN_BATCH}")
    if lam <= 0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    return x_feats, z, y


def _ridge_hat(y: np.ndarray, y_params: KernelParams, lam: float) -> np.ndarray:
    """Smoother A with A @ c = ridge fit of column c on y; symmetric."""
    k_yy = gram(y, y, y_params)
    w = regularized_solve(k_yy, lam, np.eye(y.shape[0]))
    a = k_yy @ w
    return 0.5 * (a + a.T)


def _gcm_core(x_feats, z, y, y_params, lam):
    x_feats, z, y = _check_batch(x_feats, z, y, lam)
    n = x_feats.shape[0]
    hat = _ridge_hat(y, y_params, lam)
    rx = x_feats - hat @ x_feats
    rz = z - hat @ z
    d_x, d_z = rx.shape[1], rz.shape[1]
    t = np.full((d_x, d_z), np.nan)
    included = np.zeros((d_x, d_z), dtype=bool)
    stds = np.zeros((d_x, d_z))
    means = np.zeros((d_x, d_z))
    prods = np.empty((n, d_x, d_z))
    for j in range(d_x):
        for k in range(d_z):
            r = rx[:, j] * rz[:, k]
            prods[:, j, k] = r
            m = r.mean()
            var = max(np.mean(r * r) - m * m, 0.0)
            s = np.sqrt(var)
            if s < GCM_VARIANCE_GUARD:
                continue
            included[j, k] = True
            means[j, k] = m
            stds[j, k] = s
            t[j, k] = np.sqrt(n) * m / s
    if not included.any():
        raise NumericalError("every residual pair failed the variance guard")
    abs_t = np.abs(t[included])
    value = float(abs_t.max())
    regularizer = float(logsumexp(GCM_SMOOTHMAX_TAU * abs_t) / GCM_SMOOTHMAX_TAU)
    estimate = GcmEstimate(value, t, regularizer, included)
    extras = {"hat": hat, "rx": rx, "rz": rz, "prods": prods,
              "means": means, "stds": stds}
    return estimate, extras


def gcm_statistic(x_feats, z, y, y_params: KernelParams, lam: float) -> GcmEstimate:
    estimate, _ = _gcm_core(x_feats, z, y, y_params, lam)
    return estimate


def gcm_with_grad(x_feats, z, y, y_params: KernelParams, lam: float):
    """GcmEstimate plus d(regularizer_value)/d(x_feats)."""
    estimate, ex = _gcm_core(x_feats, z, y, y_params, lam)
    t, included = estimate.raw_covs, estimate.included
    n = ex["rx"].shape[0]
    abs_t = np.abs(t[included])
    # softmax weights of the smooth max; they sum to 1
    shifted = GCM_SMOOTHMAX_TAU * (abs_t - abs_t.max())
    soft = np.exp(shifted)
    soft /= soft.sum()
    resid_maker_t = np.eye(n) - ex["hat"].T
    grad = np.zeros_like(ex["rx"])
    for (j, k), weight in zip(np.argwhere(included), soft):
        m, s = ex["means"][j, k], ex["stds"][j, k]
        r = ex["prods"][:, j, k]
        # dT/dR_l for T = sqrt(n) mean(R) / popstd(R)
        dt_dr = (np.sqrt(n) / (n * s)) * (1.0 - m * (r - m) / (s * s))
        coeff = weight * np.sign(t[j, k]) * dt_dr
        grad[:, j] += resid_maker_t @ (coeff * ex["rz"][:, k])
    return estimate, grad


def _hscic_core(x_feats, z, y, x_params, z_params, y_params, lam):
    x_feats, z, y = _check_batch(x_feats, z, y, lam)
    n = x_feats.shape[0]
    k_yy = gram(y, y, y_params)
    w = regularized_solve(k_yy, lam, k_yy)
    k_xx = gram(x_feats, x_feats, x_params)
    k_zz = gram(z, z, z_params)
    u = k_zz @ w
    v = k_xx @ w
    term1 = np.einsum("ji,jk,ki->i", w, k_xx * k_zz, w)
    term2 = np.einsum("li,li,li->i", w, v, u)
    p = np.einsum("li,li->i", w, v)
    q = np.einsum("li,li->i", w, u)
    value = float(np.mean(term1 - 2.0 * term2 + p * q))
    extras = {"w": w, "k_xx": k_xx, "k_zz": k_zz, "u": u, "q": q,
              "x_feats": x_feats}
    return HscicEstimate(value), extras


def hscic_statistic(x_feats, z, y, x_params: KernelParams, z_params: KernelParams,
                    y_params: KernelParams, lam: float) -> HscicEstimate:
    estimate, _ = _hscic_core(x_feats, z, y, x_params, z_params, y_params, lam)
    return estimate


def hscic_with_grad(x_feats, z, y, x_params: KernelParams, z_params: KernelParams,
                    y_params: KernelParams, lam: float):
    """HscicEstimate plus d(value)/d(x_feats) through the X Gram."""
    estimate, ex = _hscic_core(x_feats, z, y, x_params, z_params, y_params, lam)
    w, u, q = ex["w"], ex["u"], ex["q"]
    n = w.shape[0]
    coeff = ((w @ w.T) * ex["k_zz"]
             - 2.0 * (w * u) @ w.T
             + (w * q) @ w.T) / n
    grad = gram_backprop(coeff, ex["x_feats"], ex["k_xx"], x_params.sigma2)
    return estimate, grad


def baseline_grad_wrt_features(statistic: str, x_feats, z, y, *,
                               y_params: KernelParams, lam: float,
                               x_params: KernelParams | None = None,
                               z_params: KernelParams | None = None) -> np.ndarray:
    """Gradient of the trainable value for the named baseline."""
    if statistic == "gcm":
        _, grad = gcm_with_grad(x_feats, z, y, y_params, lam)
        return grad
    if statistic == "hscic":
        if x_params is None or z_params is None:
            raise ConfigError("hscic needs x_params and z_params")
        _, grad = hscic_with_grad(x_feats, z, y, x_params, z_params, y_params, lam)
        return grad
    raise ConfigError(f"unknown baseline {statistic!r}")
