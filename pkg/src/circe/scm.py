"""Synthetic structural causal models with retained exogenous noise.

Each generator keeps the noise draws it used, so interventions on Z can
regenerate every descendant through the same structural equations. The
causal layout is Y -> Z -> A -> B with additional edges from Y and Z into
A and B; the regression task is to predict B from (A, Y, Z).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ConfigError

SCM_CASES = ("uni1", "uni2", "multi1", "multi2")


@dataclass
class ScmBatch:
    """Raw (unstandardized) draws plus the exogenous noises behind them."""

    case_id: str
    a: np.ndarray
    b: np.ndarray
    y: np.ndarray
    z: np.ndarray
    noises: dict
    params: dict

    @property
    def n(self) -> int:
        return self.a.shape[0]


def _col(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(-1, 1)


def _noise_std(var: float) -> float:
    # N(0, v) is read as variance v throughout
    return float(np.sqrt(var))


def _uni1_equations(y, z, eps_a, eps_b):
    a = 0.5 * z * eps_a + 2.0 * y
    b = 0.5 * np.exp(-a * y) * np.sin(2.0 * a * y) + 5.0 * z + 0.2 * eps_b
    return a, b


def _uni2_equations(y, z, eps_a, eps_b):
    a = np.exp(-0.5 * z**2) * np.sin(2.0 * z) + 2.0 * y + 0.2 * eps_a
    b = np.sin(2.0 * a * y) * np.exp(-0.5 * a * y) + 5.0 * z + 0.2 * eps_b
    return a, b


def _multi1_equations(y, z, eps_a, eps_b):
    zsum = z.sum(axis=1, keepdims=True)
    a = np.exp(-0.5 * z[:, 0:1]) + zsum * np.sin(y) + 0.1 * eps_a
    b = np.exp(-0.5 * z[:, 1:2]) * zsum + a * y + 0.1 * eps_b
    return a, b


def _multi2_equations(y, z, eps_a, eps_b):
    ysum = y.sum(axis=1, keepdims=True)
    a = np.exp(-0.5 * z) + np.sin(ysum) * z + 0.1 * eps_a
    b = np.exp(-0.5 * z) * z + ysum + z + a * y[:, 0:1] + 0.1 * eps_b
    return a, b


def gen_scm(case: str, n: int, d: int, seed: int) -> ScmBatch:
    """Draw n samples from one of the four synthetic cases.

    d is the Z dimension for multi1 and the Y dimension for multi2; the
    univariate cases ignore it.
    """
    if case not in SCM_CASES:
        raise ConfigError(f"unknown case {case!r}, expected one of {SCM_CASES}")
    if n < 1:
        raise ConfigError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    s_small = _noise_std(0.1)

    if case in ("uni1", "uni2"):
        y = _col(rng.standard_normal(n))
        eps_z = _col(rng.standard_normal(n))
        eps_a = _col(rng.normal(0.0, s_small, n))
        eps_b = _col(rng.normal(0.0, s_small, n))
        z = y**2 + eps_z
        eq = _uni1_equations if case == "uni1" else _uni2_equations
        a, b = eq(y, z, eps_a, eps_b)
        noises = {"eps_z": eps_z, "eps_a": eps_a, "eps_b": eps_b}
        return ScmBatch(case, a, b, y, z, noises, {})

    if d < 2:
        raise ConfigError(f"d must be at least 2 for {case}, got {d}")
    if case == "multi1":
        y = _col(rng.standard_normal(n))
        eps_z = rng.standard_normal((n, d))
        eps_a = _col(rng.normal(0.0, s_small, n))
        eps_b = _col(rng.normal(0.0, s_small, n))
        z = y**2 + eps_z
        a, b = _multi1_equations(y, z, eps_a, eps_b)
        noises = {"eps_z": eps_z, "eps_a": eps_a, "eps_b": eps_b}
        return ScmBatch(case, a, b, y, z, noises, {"d": d})

    y = rng.standard_normal((n, d))
    eps_z = _col(rng.standard_normal(n))
    eps_a = _col(rng.normal(0.0, s_small, n))
    eps_b = _col(rng.normal(0.0, s_small, n))
    z = np.sum(y * y, axis=1, keepdims=True) + eps_z
    a, b = _multi2_equations(y, z, eps_a, eps_b)
    noises = {"eps_z": eps_z, "eps_a": eps_a, "eps_b": eps_b}
    return ScmBatch(case, a, b, y, z, noises, {"d": d})


def gen_nonlinear_gcm_case(n: int, alpha: float, sigma_z: float, sigma_y: float,
                           seed: int) -> ScmBatch:
    """Two observed covariates (Y + alpha xi_z^2, Y + xi_y) with target Y.

    The first covariate depends on the distractor z = xi_z only through its
    square, so the residual product with z has zero mean by symmetry even
    though the covariate is not conditionally independent of z given Y.
    """
    if n < 1:
        raise ConfigError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    y = _col(rng.standard_normal(n))
    xi_z = _col(rng.normal(0.0, sigma_z, n))
    xi_y = _col(rng.normal(0.0, sigma_y, n))
    a = np.hstack([y + alpha * xi_z**2, y + xi_y])
    return ScmBatch(
        case_id="nonlinear_gcm",
        a=a,
        b=y.copy(),
        y=y,
        z=xi_z,
        noises={"xi_y": xi_y},
        params={"alpha": float(alpha)},
    )


def regenerate(batch: ScmBatch, z_new: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Recompute (A, B) from stored noises under do(Z = z_new)."""
    z_new = np.asarray(z_new, dtype=np.float64)
    if z_new.shape != batch.z.shape:
        raise ConfigError(f"z_new shape {z_new.shape} does not match {batch.z.shape}")
    y = batch.y
    if batch.case_id == "uni1":
        return _uni1_equations(y, z_new, batch.noises["eps_a"], batch.noises["eps_b"])
    if batch.case_id == "uni2":
        return _uni2_equations(y, z_new, batch.noises["eps_a"], batch.noises["eps_b"])
    if batch.case_id == "multi1":
        return _multi1_equations(y, z_new, batch.noises["eps_a"], batch.noises["eps_b"])
    if batch.case_id == "multi2":
        return _multi2_equations(y, z_new, batch.noises["eps_a"], batch.noises["eps_b"])
    if batch.case_id == "nonlinear_gcm":
        alpha = batch.params["alpha"]
        a = np.hstack([y + alpha * z_new**2, y + batch.noises["xi_y"]])
        return a, batch.b.copy()
    raise ConfigError(f"cannot regenerate case {batch.case_id!r}")


def intervene_z(batch: ScmBatch, i: int, z_new) -> dict:
    """Counterfactual single point under do(Z_i = z_new); Y and noises fixed."""
    if not 0 <= i < batch.n:
        raise ConfigError(f"index {i} out of range for batch of {batch.n}")
    point = slice_batch(batch, np.array([i]))
    z_row = np.asarray(z_new, dtype=np.float64).reshape(1, -1)
    if z_row.shape[1] != batch.z.shape[1]:
        raise ConfigError(
            f"z_new has {z_row.shape[1]} columns, expected {batch.z.shape[1]}"
        )
    a, b = regenerate(point, z_row)
    return {"a": a[0], "b": b[0], "y": point.y[0], "z": z_row[0]}


def slice_batch(batch: ScmBatch, idx: np.ndarray) -> ScmBatch:
    return replace(
        batch,
        a=batch.a[idx],
        b=batch.b[idx],
        y=batch.y[idx],
        z=batch.z[idx],
        noises={k: v[idx] for k, v in batch.noises.items()},
    )


@dataclass
class ToyBatch:
    """Linear toy task: z ~ N(0, s_z), y = z + xi1, x = (y + xi2, z).

    Under the shifted marginal y is rebuilt from an independent copy of z,
    which breaks the x2 shortcut while keeping every marginal the same.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    sigma1_sq: float
    sigma2_sq: float
    sigma_z_sq: float
    shifted: bool

    @property
    def n(self) -> int:
        return self.x.shape[0]


def gen_toy(n: int, sigma1_sq: float, sigma2_sq: float, sigma_z_sq: float,
            shifted: bool, seed: int) -> ToyBatch:
    if n < 1:
        raise ConfigError(f"n must be positive, got {n}")
    for name, v in (("sigma1_sq", sigma1_sq), ("sigma2_sq", sigma2_sq),
                    ("sigma_z_sq", sigma_z_sq)):
        if v <= 0:
            raise ConfigError(f"{name} must be positive, got {v}")
    rng = np.random.default_rng(seed)
    z = _col(rng.normal(0.0, _noise_std(sigma_z_sq), n))
    xi1 = _col(rng.normal(0.0, _noise_std(sigma1_sq), n))
    xi2 = _col(rng.normal(0.0, _noise_std(sigma2_sq), n))
    if shifted:
        z_indep = _col(rng.normal(0.0, _noise_std(sigma_z_sq), n))
        y = z_indep + xi1
    else:
        y = z + xi1
    x = np.hstack([y + xi2, z])
    return ToyBatch(x=x, y=y, z=z, sigma1_sq=float(sigma1_sq),
                    sigma2_sq=float(sigma2_sq), sigma_z_sq=float(sigma_z_sq),
                    shifted=bool(shifted))


class Standardizer:
    """Column-wise zero-mean unit-std maps fit on the training split."""

    def __init__(self, stats: dict):
        self.stats = stats

    @classmethod
    def fit(cls, batch: ScmBatch) -> "Standardizer":
        stats = {}
        for name in ("a", "b", "y", "z"):
            arr = getattr(batch, name)
            mean = arr.mean(axis=0)
            std = arr.std(axis=0)
            std = np.where(std < 1e-12, 1.0, std)
            stats[name] = (mean, std)
        return cls(stats)

    def transform(self, name: str, arr: np.ndarray) -> np.ndarray:
        mean, std = self.stats[name]
        return (arr - mean) / std

    def inputs(self, a, y, z) -> np.ndarray:
        return np.hstack([
            self.transform("a", a),
            self.transform("y", y),
            self.transform("z", z),
        ])

    def batch_inputs(self, batch: ScmBatch) -> np.ndarray:
        return self.inputs(batch.a, batch.y, batch.z)

    def targets(self, batch: ScmBatch) -> np.ndarray:
        return self.transform("b", batch.b)


@dataclass
class Dataset:
    """Train/eval split of one case with the holdout carved from the train end.

    The first m_holdout train rows feed the embedding regression; by default
    the remaining train rows form mini-batches. Standardization always comes
    from the full train split.
    """

    case_id: str
    train: ScmBatch
    eval: ScmBatch
    m_holdout: int
    standardizer: Standardizer

    @property
    def holdout(self) -> ScmBatch:
        return slice_batch(self.train, np.arange(self.m_holdout))

    def fit_pool(self, reuse_holdout: bool = False) -> ScmBatch:
        if reuse_holdout:
            return self.train
        return slice_batch(self.train, np.arange(self.m_holdout, self.train.n))


def make_dataset(case: str, n: int, d: int, seed: int, m_holdout: int = 1000,
                 eval_frac: float = 0.2) -> Dataset:
    """Generate a case and split it 80/20 with train-split standardization."""
    if not 0.0 < eval_frac < 1.0:
        raise ConfigError(f"eval_frac must be in (0, 1), got {eval_frac}")
    batch = gen_scm(case, n, d, seed)
    n_eval = int(round(n * eval_frac))
    n_train = n - n_eval
    if not 2 <= m_holdout < n_train:
        raise ConfigError(
            f"m_holdout={m_holdout} must fit inside the train split of {n_train}"
        )
    train = slice_batch(batch, np.arange(n_train))
    eval_b = slice_batch(batch, np.arange(n_train, n))
    return Dataset(case, train, eval_b, m_holdout, Standardizer.fit(train))


def export_csv(batch: ScmBatch, path) -> None:
    """One row per sample with columns a0.., b, y0.., z0.."""
    header = (
        [f"a{i}" for i in range(batch.a.shape[1])]
        + ["b"]
        + [f"y{i}" for i in range(batch.y.shape[1])]
        + [f"z{i}" for i in range(batch.z.shape[1])]
    )
    rows = np.hstack([batch.a, batch.b, batch.y, batch.z])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
