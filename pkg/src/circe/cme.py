"""Conditional mean embedding fit by kernel ridge regression, with closed-form
leave-one-out model selection.

The embedding of Z given Y is estimated from a holdout set of (y, z) pairs:
mu(y) = sum_j beta_j(y) psi(z_j) with beta(y) = (K_YY + lam I)^{-1} k_Y(y).
The leave-one-out error of the fit has a closed form and never refits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError
from .kernels import KernelParams, as_points, gram, regularized_solve

LOO_DIAG_GUARD = 1e-10

DEFAULT_LAMBDA_GRID = (0.001, 0.01, 0.1, 1.0)
DEFAULT_SIGMA2_Y_GRID = (0.001, 0.01, 0.1, 1.0)


@dataclass
class CmeModel:
    """Fitted embedding regression. w1 = (K_YY + lam I)^{-1}, w2 = w1 K_ZZ w1."""

    holdout_y: np.ndarray
    holdout_z: np.ndarray
    lam: float
    y_params: KernelParams
    z_params: KernelParams
    w1: np.ndarray
    w2: np.ndarray

    @property
    def n_holdout(self) -> int:
        return self.holdout_y.shape[0]

    def embedding_coeffs(self, y) -> np.ndarray:
        """Coefficients beta over holdout z-features for query points y.

        Returns an (M, B) matrix; column b gives mu(y_b) = sum_j beta[j, b] psi(z_j).
        """
        k_Yy = gram(self.holdout_y, y, self.y_params)
        return self.w1 @ k_Yy


@dataclass
class LooReport:
    """Grid search record. Entries follow the (lam outer, sigma2_y inner) order."""

    lams: np.ndarray
    sigma2_ys: np.ndarray
    errors: np.ndarray
    best_lam: float
    best_sigma2_y: float
    best_error: float

    def as_rows(self):
        return list(zip(self.lams, self.sigma2_ys, self.errors))


def fit_cme(holdout_y, holdout_z, lam: float, y_params: KernelParams,
            z_params: KernelParams) -> CmeModel:
    """Fit the embedding regression weights on a holdout set."""
    holdout_y = as_points(holdout_y)
    holdout_z = as_points(holdout_z)
    if holdout_y.shape[0] != holdout_z.shape[0]:
        raise ConfigError(
            f"holdout_y has {holdout_y.shape[0]} rows, holdout_z {holdout_z.shape[0]}"
        )
    m = holdout_y.shape[0]
    if m < 2:
        raise ConfigError(f"need at least 2 holdout points, got {m}")
    k_yy = gram(holdout_y, holdout_y, y_params)
    k_zz = gram(holdout_z, holdout_z, z_params)
    w1 = regularized_solve(k_yy, lam, np.eye(m))
    w1 = 0.5 * (w1 + w1.T)
    w2 = w1 @ k_zz @ w1
    w2 = 0.5 * (w2 + w2.T)
    return CmeModel(holdout_y, holdout_z, float(lam), y_params, z_params, w1, w2)


def loo_error(holdout_y, holdout_z, lam: float, y_params: KernelParams,
              z_params: KernelParams) -> float:
    """Mean leave-one-out embedding error of the ridge fit, without refitting.

    With A = K_YY (K_YY + lam I)^{-1} and alpha_i the i-th row of A, the held-out
    residual for point i is
        ||psi(z_i) - F_{-i}(y_i)||^2 = r_i / (1 - A_ii)^2,
        r_i = k(z_i, z_i) - 2 (A K_ZZ)_ii + (A K_ZZ A^T)_ii.
    Returns +inf when any 1 - A_ii falls below the diagonal guard.
    """
    holdout_y = as_points(holdout_y)
    holdout_z = as_points(holdout_z)
    m = holdout_y.shape[0]
    k_yy = gram(holdout_y, holdout_y, y_params)
    k_zz = gram(holdout_z, holdout_z, z_params)
    w1 = regularized_solve(k_yy, lam, np.eye(m))
    A = k_yy @ w1
    denom = 1.0 - np.diag(A)
    if np.any(denom <= LOO_DIAG_GUARD):
        return math.inf
    AK = A @ k_zz
    resid = np.diag(k_zz) - 2.0 * np.diag(AK) + np.einsum("ij,ij->i", AK, A)
    np.maximum(resid, 0.0, out=resid)
    return float(np.mean(resid / denom**2))


def _better(err, lam, s2, best):
    """Smaller error wins; exact ties prefer larger lam, then larger sigma2_y."""
    if best is None:
        return True
    b_err, b_lam, b_s2 = best
    if err < b_err:
        return True
    if err == b_err:
        if lam > b_lam:
            return True
        if lam == b_lam and s2 > b_s2:
            return True
    return False


def select_hyperparams(holdout_y, holdout_z,
                       lambda_grid=DEFAULT_LAMBDA_GRID,
                       sigma2_y_grid=DEFAULT_SIGMA2_Y_GRID,
                       z_params: KernelParams = KernelParams(sigma2=1.0),
                       ) -> tuple[CmeModel, LooReport]:
    """Grid-search (lam, sigma2_y) by leave-one-out error and fit the winner.

    The z-kernel bandwidth is fixed by the caller and not searched.
    """
    lambda_grid = [float(v) for v in lambda_grid]
    sigma2_y_grid = [float(v) for v in sigma2_y_grid]
    if not lambda_grid or not sigma2_y_grid:
        raise ConfigError("hyperparameter grids must be non-empty")

    lams, s2s, errs = [], [], []
    best = None
    for lam in lambda_grid:
        if lam <= 0:
            raise ConfigError(f"lambda grid values must be positive, got {lam}")
        for s2 in sigma2_y_grid:
            err = loo_error(holdout_y, holdout_z, lam, KernelParams(sigma2=s2), z_params)
            lams.append(lam)
            s2s.append(s2)
            errs.append(err)
            if math.isfinite(err) and _better(err, lam, s2, best):
                best = (err, lam, s2)

    if best is None:
        raise ConfigError("all grid points produced non-finite leave-one-out error")
    b_err, b_lam, b_s2 = best
    report = LooReport(np.array(lams), np.array(s2s), np.array(errs), b_lam, b_s2, b_err)
    model = fit_cme(holdout_y, holdout_z, b_lam, KernelParams(sigma2=b_s2), z_params)
    return model, report


def save_cme(model: CmeModel, path) -> None:
    np.savez(
        path,
        schema_version=1,
        holdout_y=model.holdout_y,
        holdout_z=model.holdout_z,
        lam=model.lam,
        sigma2_y=model.y_params.sigma2,
        sigma2_z=model.z_params.sigma2,
        w1=model.w1,
        w2=model.w2,
    )


def load_cme(path) -> CmeModel:
    with np.load(path) as data:
        if int(data["schema_version"]) != 1:
            raise ConfigError(f"unknown model schema {data['schema_version']}")
        return CmeModel(
            holdout_y=data["holdout_y"],
            holdout_z=data["holdout_z"],
            lam=float(data["lam"]),
            y_params=KernelParams(sigma2=float(data["sigma2_y"])),
            z_params=KernelParams(sigma2=float(data["sigma2_z"])),
            w1=data["w1"],
            w2=data["w2"],
        )
