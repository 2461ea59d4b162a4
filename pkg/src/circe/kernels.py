"""Gaussian kernel primitives, Gram matrices, and regularized SPD solves.

All arrays are float64. The bandwidth parameter is the variance sigma2 in
k(x, x') = exp(-||x - x'||^2 / (2 * sigma2)); it is always set explicitly,
never from a data heuristic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import ConfigError, NumericalError

JITTER_START = 1e-10
JITTER_CAP = 1e-4
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class KernelParams:
    """Parameters of a Gaussian kernel. sigma2 is the squared bandwidth."""

    sigma2: float
    family: str = "gaussian"

    def __post_init__(self):
        if self.family != "gaussian":
            raise ConfigError(f"unsupported kernel family: {self.family!r}")
        if not np.isfinite(self.sigma2) or self.sigma2 <= 0:
            raise ConfigError(f"sigma2 must be positive and finite, got {self.sigma2}")


def as_points(x) -> np.ndarray:
    """Coerce to a float64 (n, d) point array; 1-d input becomes a column."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ConfigError(f"expected 1-d or 2-d point array, got shape {x.shape}")
    return x


def squared_distances(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    rows = as_points(rows)
    cols = as_points(cols)
    if rows.shape[1] != cols.shape[1]:
        raise ConfigError(
            f"dimension mismatch: {rows.shape[1]} vs {cols.shape[1]} columns"
        )
    r2 = np.sum(rows * rows, axis=1)[:, None]
    c2 = np.sum(cols * cols, axis=1)[None, :]
    d2 = r2 + c2 - 2.0 * (rows @ cols.T)
    # roundoff can leave tiny negatives on near-duplicate points
    np.maximum(d2, 0.0, out=d2)
    return d2


def kernel_eval(x, xp, params: KernelParams) -> float:
    """Kernel value for a single pair of points."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64)).ravel()
    xp = np.atleast_1d(np.asarray(xp, dtype=np.float64)).ravel()
    if x.shape != xp.shape:
        raise ConfigError(f"point shapes differ: {x.shape} vs {xp.shape}")
    d2 = float(np.sum((x - xp) ** 2))
    return float(np.exp(-d2 / (2.0 * params.sigma2)))


def gram(rows, cols, params: KernelParams) -> np.ndarray:
    """Gram matrix K[i, j] = k(rows[i], cols[j])."""
    d2 = squared_distances(rows, cols)
    return np.exp(-d2 / (2.0 * params.sigma2))


def regularized_solve(K: np.ndarray, lam: float, B: np.ndarray) -> np.ndarray:
    """Solve (K + lam * I) S = B for symmetric PSD K via Cholesky.

    Jitter escalates tenfold from JITTER_START * mean(diag) up to
    JITTER_CAP * mean(diag) when factorization fails; a relative residual
    above RESIDUAL_TOL raises NumericalError.
    """
    K = np.asarray(K, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ConfigError(f"K must be square, got shape {K.shape}")
    if B.shape[0] != K.shape[0]:
        raise ConfigError(f"B has {B.shape[0]} rows, K is {K.shape[0]}x{K.shape[0]}")
    if not np.isfinite(lam) or lam <= 0:
        raise ConfigError(f"lam must be positive and finite, got {lam}")

    n = K.shape[0]
    A = K + lam * np.eye(n)
    mean_diag = float(np.mean(np.diag(K)))
    if mean_diag <= 0:
        mean_diag = 1.0

    jitter = 0.0
    while True:
        try:
            chol = scipy.linalg.cho_factor(
                A + jitter * np.eye(n) if jitter else A,
                lower=True,
                check_finite=False,
            )
            break
        except scipy.linalg.LinAlgError:
            jitter = JITTER_START * mean_diag if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_CAP * mean_diag * (1 + 1e-12):
                raise NumericalError(
                    f"Cholesky failed at jitter cap {JITTER_CAP * mean_diag:.3e}"
                ) from None

    S = scipy.linalg.cho_solve(chol, B, check_finite=False)
    b_norm = float(np.linalg.norm(B))
    residual = float(np.linalg.norm(A @ S - B)) / max(b_norm, np.finfo(np.float64).tiny)
    if not np.isfinite(residual) or residual > RESIDUAL_TOL:
        raise NumericalError(f"solve residual {residual:.3e} exceeds {RESIDUAL_TOL:.0e}")
    return S


def trace_product(A: np.ndarray, B: np.ndarray) -> float:
    """tr(A @ B) = sum_ij A[i, j] * B[j, i], without forming the product."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.T.shape:
        raise ConfigError(f"incompatible shapes for trace: {A.shape} vs {B.shape}")
    return float(np.sum(A * B.T))


def gram_backprop(coeff: np.ndarray, points: np.ndarray, K: np.ndarray, sigma2: float) -> np.ndarray:
    """Gradient of sum_ij coeff[i, j] * k(p_i, p_j) with respect to the points.

    coeff need not be symmetric; K must be the Gaussian Gram of the points at
    bandwidth sigma2. Uses dk(p_i, p_j)/dp_i = ((p_j - p_i) / sigma2) * k.
    """
    points = as_points(points)
    S = (coeff + coeff.T) * K
    return (S @ points - np.sum(S, axis=1)[:, None] * points) / sigma2
