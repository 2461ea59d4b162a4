"""Batch estimators of the conditional independence statistic.

The statistic is the squared Hilbert-Schmidt norm of the covariance between
encoder features of X and conditionally centered joint features of (Z, Y).
On a batch it reduces to a trace of the encoder Gram against a centered Gram
built from the holdout embedding regression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cme import CmeModel
from .exceptions import ConfigError
from .kernels import KernelParams, as_points, gram, trace_product

VARIANTS = ("plain", "debiased", "centered")


@dataclass(frozen=True)
class CenteredGram:
    """K_yy o (K_zz - P - P^T + Q) for a batch, with P and Q the embedding
    cross terms; see centered_gram."""

    matrix: np.ndarray
    batch_size: int


@dataclass(frozen=True)
class CirceEstimate:
    value: float
    variant: str
    batch_size: int


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}, expected one of {VARIANTS}")


def centered_gram(batch_y, batch_z, model: CmeModel,
                  y_params: KernelParams, z_params: KernelParams) -> CenteredGram:
    """Centered joint Gram of a batch against a fitted embedding model.

    With W1 = (K_YY + lam I)^{-1} and W2 = W1 K_ZZ W1 over the holdout,
        P = K_yY W1 K_Zz,   Q = K_yY W2 K_Yy,
        result = K_yy o (K_zz - P - P^T + Q).
    The kernel parameters must match the ones the model was fitted with.
    """
    if y_params != model.y_params:
        raise ConfigError(
            f"y kernel mismatch: model fitted with {model.y_params}, got {y_params}"
        )
    if z_params != model.z_params:
        raise ConfigError(
            f"z kernel mismatch: model fitted with {model.z_params}, got {z_params}"
        )
    batch_y = as_points(batch_y)
    batch_z = as_points(batch_z)
    if batch_y.shape[0] != batch_z.shape[0]:
        raise ConfigError(
            f"batch_y has {batch_y.shape[0]} rows, batch_z {batch_z.shape[0]}"
        )

    k_yy = gram(batch_y, batch_y, y_params)
    k_zz = gram(batch_z, batch_z, z_params)
    k_yY = gram(batch_y, model.holdout_y, y_params)
    k_Zz = gram(model.holdout_z, batch_z, z_params)

    P = k_yY @ (model.w1 @ k_Zz)
    Q = k_yY @ model.w2 @ k_yY.T
    inner = k_zz - P - P.T + Q
    return CenteredGram(matrix=k_yy * inner, batch_size=batch_y.shape[0])


def _centering_projection(k: np.ndarray) -> np.ndarray:
    """H K H with H = I - (1/B) 1 1^T."""
    row = k.mean(axis=0)
    return k - row[None, :] - row[:, None] + row.mean()


def statistic_gradient_coeff(centered: CenteredGram, variant: str) -> np.ndarray:
    """d(statistic)/d(k_xx) as a dense matrix; the centered Gram is constant."""
    _check_variant(variant)
    b = centered.batch_size
    scale = 1.0 / (b * (b - 1))
    m = centered.matrix
    if variant == "plain":
        return m * scale
    if variant == "debiased":
        out = m * scale
        np.fill_diagonal(out, 0.0)
        return out
    return _centering_projection(m) * scale


def circe_statistic(k_xx: np.ndarray, centered: CenteredGram, variant: str) -> CirceEstimate:
    """Trace-form statistic on a batch.

    plain:    tr(K_xx Khat) / (B(B-1))
    debiased: the same with the diagonals of both factors zeroed
    centered: tr(H K_xx H Khat) / (B(B-1))
    """
    _check_variant(variant)
    k_xx = np.asarray(k_xx, dtype=np.float64)
    b = centered.batch_size
    if b < 2:
        raise ConfigError(f"batch size must be at least 2, got {b}")
    if k_xx.shape != (b, b):
        raise ConfigError(f"k_xx shape {k_xx.shape} does not match batch size {b}")

    scale = 1.0 / (b * (b - 1))
    m = centered.matrix
    if variant == "plain":
        value = trace_product(k_xx, m) * scale
    elif variant == "debiased":
        kx = k_xx.copy()
        np.fill_diagonal(kx, 0.0)
        mt = m.copy()
        np.fill_diagonal(mt, 0.0)
        value = trace_product(kx, mt) * scale
    else:
        value = trace_product(_centering_projection(k_xx), m) * scale
    return CirceEstimate(value=float(value), variant=variant, batch_size=b)


def circe_oracle(batch_x_feats, batch_y, batch_z, analytic_mu,
                 x_params: KernelParams, y_params: KernelParams,
                 z_params: KernelParams, variant: str) -> CirceEstimate:
    """Statistic with the true conditional embedding supplied analytically.

    analytic_mu(batch_y) must return (anchors, weights) with anchors (P, d_z)
    and weights (B, P) such that mu(y_i) = sum_p weights[i, p] psi(anchors[p]).
    Used as the reference the regression-based estimator is tested against.
    """
    _check_variant(variant)
    batch_x_feats = as_points(batch_x_feats)
    batch_y = as_points(batch_y)
    batch_z = as_points(batch_z)
    b = batch_y.shape[0]
    if batch_x_feats.shape[0] != b or batch_z.shape[0] != b:
        raise ConfigError("batch arrays must share the leading dimension")

    anchors, weights = analytic_mu(batch_y)
    anchors = as_points(anchors)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (b, anchors.shape[0]):
        raise ConfigError(
            f"weights shape {weights.shape} does not match "
            f"(batch={b}, anchors={anchors.shape[0]})"
        )

    k_yy = gram(batch_y, batch_y, y_params)
    k_zz = gram(batch_z, batch_z, z_params)
    k_zA = gram(batch_z, anchors, z_params)
    k_AA = gram(anchors, anchors, z_params)

    cross = k_zA @ weights.T
    inner = k_zz - cross - cross.T + weights @ k_AA @ weights.T
    centered = CenteredGram(matrix=k_yy * inner, batch_size=b)
    k_xx = gram(batch_x_feats, batch_x_feats, x_params)
    return circe_statistic(k_xx, centered, variant)
