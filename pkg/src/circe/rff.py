"""Random Fourier feature approximation of the batch statistic.

Feature maps r_i(x) = sqrt(2/D) cos(w_i . x + b_i) with w_i ~ N(0, I/sigma2)
and b_i ~ U[0, 2pi) approximate the Gaussian kernel, K ~ R R^T. The holdout
side of the centered Gram is folded once into small weight matrices, so each
batch costs O(B D^2 + B^2 D) instead of touching the holdout again.

Y and Z live in different spaces and get independent maps. A batch may use a
subset of D out of the D0 sampled features; the subset is a deterministic
function of (map seed, batch counter) and is rescaled by D0/D so every kernel
approximation stays unbiased.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cme import CmeModel
from .estimator import CenteredGram, CirceEstimate, circe_statistic
from .exceptions import ConfigError
from .kernels import KernelParams, as_points, gram


@dataclass(frozen=True)
class RffMap:
    """Feature bank for one input space; rows are frequencies."""

    frequencies: np.ndarray   # (d_total, dim)
    phases: np.ndarray        # (d_total,)
    sigma2: float
    seed: int

    @property
    def d_total(self) -> int:
        return self.frequencies.shape[0]

    @property
    def dim(self) -> int:
        return self.frequencies.shape[1]

    def features(self, x, indices: np.ndarray | None = None) -> np.ndarray:
        """(n, D) scaled cosine features; D = len(indices) or d_total."""
        x = as_points(x)
        if x.shape[1] != self.dim:
            raise ConfigError(f"points have dim {x.shape[1]}, map expects {self.dim}")
        if indices is None:
            freq, phase = self.frequencies, self.phases
        else:
            freq, phase = self.frequencies[indices], self.phases[indices]
        d = freq.shape[0]
        return math.sqrt(2.0 / d) * np.cos(x @ freq.T + phase[None, :])


def sample_rff(dim: int, d_total: int, sigma2: float, seed: int) -> RffMap:
    """Draw a feature bank for the Gaussian kernel with bandwidth sigma2."""
    if dim < 1 or d_total < 1:
        raise ConfigError(f"dim and d_total must be positive, got {dim}, {d_total}")
    if not np.isfinite(sigma2) or sigma2 <= 0:
        raise ConfigError(f"sigma2 must be positive and finite, got {sigma2}")
    rng = np.random.default_rng(seed)
    freqs = rng.standard_normal((d_total, dim)) / math.sqrt(sigma2)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=d_total)
    return RffMap(frequencies=freqs, phases=phases, sigma2=float(sigma2), seed=int(seed))


@dataclass(frozen=True)
class RffCmeWeights:
    """Holdout weights folded into feature space.

    w1r = R(Y)^T W1 R(Z) and w2r = R(Y)^T W2 R(Y), both (d_total, d_total),
    computed with full-bank scaling. refresh_period controls how often the
    active subset is redrawn (None means never).
    """

    w1r: np.ndarray
    w2r: np.ndarray
    d_total_y: int
    d_total_z: int
    refresh_period: int | None = None


def precompute_rff_weights(model: CmeModel, y_map: RffMap, z_map: RffMap,
                           refresh_period: int | None = None) -> RffCmeWeights:
    """Fold the holdout regression weights into the two feature banks."""
    if y_map.sigma2 != model.y_params.sigma2:
        raise ConfigError(
            f"y map bandwidth {y_map.sigma2} does not match model {model.y_params.sigma2}"
        )
    if z_map.sigma2 != model.z_params.sigma2:
        raise ConfigError(
            f"z map bandwidth {z_map.sigma2} does not match model {model.z_params.sigma2}"
        )
    if refresh_period is not None and refresh_period < 1:
        raise ConfigError(f"refresh_period must be positive, got {refresh_period}")
    ry = y_map.features(model.holdout_y)
    rz = z_map.features(model.holdout_z)
    w1r = ry.T @ model.w1 @ rz
    w2r = ry.T @ model.w2 @ ry
    return RffCmeWeights(w1r=w1r, w2r=w2r, d_total_y=y_map.d_total,
                         d_total_z=z_map.d_total, refresh_period=refresh_period)


def _active_indices(d_total: int, d_active: int, seed: int, slot: int,
                    stream: int) -> np.ndarray:
    if d_active == d_total:
        return np.arange(d_total)
    rng = np.random.default_rng([seed, stream, slot])
    return rng.permutation(d_total)[:d_active]


def rff_centered_gram(batch_y, batch_z, weights: RffCmeWeights,
                      y_map: RffMap, z_map: RffMap, d_active: int,
                      batch_index: int = 0) -> CenteredGram:
    """Conditionally centered batch Gram with holdout cross terms replaced
    by RFF products.

    The batch Grams K_yy and K_zz stay exact; only the terms involving the
    holdout go through the feature banks. d_active <= d_total features are
    used, drawn without replacement per refresh slot.
    """
    if y_map.d_total != weights.d_total_y or z_map.d_total != weights.d_total_z:
        raise ConfigError("feature banks do not match the precomputed weights")
    if d_active < 1 or d_active > y_map.d_total or d_active > z_map.d_total:
        raise ConfigError(
            f"d_active={d_active} outside [1, {min(y_map.d_total, z_map.d_total)}]"
        )
    batch_y = as_points(batch_y)
    batch_z = as_points(batch_z)
    b = batch_y.shape[0]
    if batch_z.shape[0] != b:
        raise ConfigError(f"batch_y has {b} rows, batch_z {batch_z.shape[0]}")

    slot = 0 if weights.refresh_period is None else batch_index // weights.refresh_period
    idx_y = _active_indices(y_map.d_total, d_active, y_map.seed, slot, stream=0)
    idx_z = _active_indices(z_map.d_total, d_active, z_map.seed, slot, stream=1)

    ry = y_map.features(batch_y, idx_y)
    rz = z_map.features(batch_z, idx_z)
    # stored weights carry full-bank sqrt(2/D0) scaling on each side
    if d_active == y_map.d_total and d_active == z_map.d_total:
        # full bank active: rescales are exactly 1, skip the copies
        w1_sub = weights.w1r
        w2_sub = weights.w2r
    else:
        rescale = math.sqrt(y_map.d_total / d_active) * math.sqrt(z_map.d_total / d_active)
        w1_sub = weights.w1r[np.ix_(idx_y, idx_z)] * rescale
        rescale_y = y_map.d_total / d_active
        w2_sub = weights.w2r[np.ix_(idx_y, idx_y)] * rescale_y

    k_yy = gram(batch_y, batch_y, KernelParams(sigma2=y_map.sigma2))
    k_zz = gram(batch_z, batch_z, KernelParams(sigma2=z_map.sigma2))
    P = ry @ w1_sub @ rz.T
    Q = ry @ w2_sub @ ry.T
    inner = k_zz - P - P.T + Q
    return CenteredGram(matrix=k_yy * inner, batch_size=b)


def circe_rff(batch_x_gram, batch_y, batch_z, weights: RffCmeWeights,
              y_map: RffMap, z_map: RffMap, d_active: int, variant: str,
              batch_index: int = 0) -> CirceEstimate:
    """Batch statistic on the RFF-approximated centered Gram."""
    centered = rff_centered_gram(batch_y, batch_z, weights, y_map, z_map,
                                 d_active, batch_index)
    return circe_statistic(np.asarray(batch_x_gram, dtype=np.float64), centered, variant)
