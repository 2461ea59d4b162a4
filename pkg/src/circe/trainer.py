"""Regularized regression training: MSE plus a conditional-independence
penalty, with analytic gradients end to end.

The penalty attaches to the scalar prediction by default (the predictor
itself is what must be invariant); feature-level attachment is available
through config. Per-run determinism is seed-scoped: same config and data
give bitwise-identical parameters.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .baselines import gcm_with_grad, hscic_with_grad
from .cme import CmeModel
from .estimator import (
    VARIANTS,
    CenteredGram,
    centered_gram,
    circe_statistic,
    statistic_gradient_coeff,
)
from .exceptions import ConfigError, NumericalError
from .kernels import KernelParams, as_points, gram, gram_backprop
from .nn import MlpModel, make_optimizer
from .rff import precompute_rff_weights, rff_centered_gram, sample_rff

METHODS = ("none", "circe", "hscic", "gcm")
REGULARIZE_LEVELS = ("prediction", "features")
UNSTABLE_SKIP_FRACTION = 0.01


@dataclass(frozen=True)
class TrainConfig:
    method: str = "none"
    gamma: float = 0.0
    batch_size: int = 256
    epochs: int = 100
    lr: float = 1e-4
    weight_decay: float = 0.3
    optimizer: str = "adam"
    seed: int = 0
    variant: str = "centered"
    hidden_widths: tuple = (64,) * 9
    regularize: str = "prediction"
    lam: float = 0.01
    sigma2_x: float = 1.0
    sigma2_y: float = 1.0
    sigma2_z: float = 1.0
    use_rff: bool = False
    rff_dim: int = 512
    rff_bank_dim: int | None = None
    rff_refresh: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.regularize not in REGULARIZE_LEVELS:
            raise ConfigError(f"unknown regularize level {self.regularize!r}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be nonnegative, got {self.gamma}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be at least 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.lr <= 0 or self.lam <= 0:
            raise ConfigError("lr and lam must be positive")
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class TrainBatch:
    """Standardized arrays for one mini-batch (or a full split)."""

    inputs: np.ndarray
    targets: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = as_points(self.targets)
        self.y = as_points(self.y)
        self.z = as_points(self.z)
        n = self.inputs.shape[0]
        if any(arr.shape[0] != n for arr in (self.targets, self.y, self.z)):
            raise ConfigError("batch arrays must share the leading dimension")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def take(self, idx: np.ndarray) -> "TrainBatch":
        return TrainBatch(self.inputs[idx], self.targets[idx],
                          self.y[idx], self.z[idx])


@dataclass
class TrainData:
    train: TrainBatch
    eval: TrainBatch | None = None
    ood: TrainBatch | None = None


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    total_steps: int = 0
    skipped_steps: int = 0
    final_statistic: float = float("nan")

    @property
    def unstable(self) -> bool:
        if self.total_steps == 0:
            return False
        return self.skipped_steps / self.total_steps > UNSTABLE_SKIP_FRACTION


class _CirceContext:
    """Holdout cross terms precomputed once per run and sliced per batch.

    For a batch drawn by row index the centered Gram equals the direct
    per-batch computation; only the train-by-holdout products are reused.
    """

    def __init__(self, train_y, train_z, model: CmeModel):
        self.model = model
        self.ky_all = gram(train_y, model.holdout_y, model.y_params)
        kz_cross = gram(model.holdout_z, train_z, model.z_params)
        self.w1kz_all = model.w1 @ kz_cross
        self.w2ky_t = model.w2 @ self.ky_all.T

    def batch_centered(self, batch: TrainBatch, idx: np.ndarray) -> CenteredGram:
        k_yy = gram(batch.y, batch.y, self.model.y_params)
        k_zz = gram(batch.z, batch.z, self.model.z_params)
        ky = self.ky_all[idx]
        p = ky @ self.w1kz_all[:, idx]
        q = ky @ self.w2ky_t[:, idx]
        matrix = k_yy * (k_zz - p - p.T + q)
        return CenteredGram(matrix=matrix, batch_size=batch.n)


class _RffContext:
    """Feature banks and projected embedding weights for the RFF path."""

    def __init__(self, model: CmeModel, config: TrainConfig, d_y: int, d_z: int):
        bank = config.rff_bank_dim or config.rff_dim
        if bank < config.rff_dim:
            raise ConfigError(
                f"rff_bank_dim={bank} smaller than rff_dim={config.rff_dim}"
            )
        self.d_active = config.rff_dim
        self.y_map = sample_rff(bank, d_y, model.y_params.sigma2,
                                seed=config.seed * 2 + 1)
        self.z_map = sample_rff(bank, d_z, model.z_params.sigma2,
                                seed=config.seed * 2 + 2)
        self.weights = precompute_rff_weights(model, self.y_map, self.z_map,
                                              refresh_period=config.rff_refresh)

    def batch_centered(self, batch: TrainBatch, batch_index: int) -> CenteredGram:
        return rff_centered_gram(batch.y, batch.z, self.weights, self.y_map,
                                 self.z_map, self.d_active, batch_index)


def _penalty_features(config: TrainConfig, feats, pred):
    return pred if config.regularize == "prediction" else feats


def loss_and_grad(model: MlpModel, batch: TrainBatch, cme_model: CmeModel | None,
                  config: TrainConfig, context=None, batch_index: int = 0):
    """Scalar loss, parameter gradients, diagnostics for one batch."""
    feats, pred, cache = model.forward(batch.inputs)
    b = batch.n
    err = pred - batch.targets
    mse = float(np.mean(err * err))
    d_pred = 2.0 * err / err.size
    diagnostics = {"mse": mse, "statistic": 0.0, "trainable_statistic": 0.0,
                   "finite": True}

    if config.method == "none" or config.gamma == 0.0:
        loss = mse
        grads = model.backward(cache, d_pred)
        diagnostics["finite"] = bool(np.isfinite(loss))
        return loss, grads, diagnostics

    x = _penalty_features(config, feats, pred)
    x_params = KernelParams(sigma2=config.sigma2_x)
    y_params = KernelParams(sigma2=config.sigma2_y)
    z_params = KernelParams(sigma2=config.sigma2_z)

    if config.method == "circe":
        if cme_model is None:
            raise ConfigError("method 'circe' needs a fitted embedding model")
        if isinstance(context, tuple):
            ctx, idx = context
            if isinstance(ctx, _RffContext):
                centered = ctx.batch_centered(batch, batch_index)
            else:
                centered = ctx.batch_centered(batch, idx)
        else:
            centered = centered_gram(batch.y, batch.z, cme_model,
                                     cme_model.y_params, cme_model.z_params)
        k_xx = gram(x, x, x_params)
        stat = circe_statistic(k_xx, centered, config.variant)
        coeff = statistic_gradient_coeff(centered, config.variant)
        d_x = gram_backprop(coeff, x, k_xx, x_params.sigma2)
        value = trainable = stat.value
    elif config.method == "hscic":
        est, d_x = hscic_with_grad(x, batch.z, batch.y, x_params, z_params,
                                   y_params, config.lam)
        value = trainable = est.value
    else:
        est, d_x = gcm_with_grad(x, batch.z, batch.y, y_params, config.lam)
        value = est.value
        trainable = est.regularizer_value

    loss = mse + config.gamma * trainable
    diagnostics["statistic"] = value
    diagnostics["trainable_statistic"] = trainable
    diagnostics["finite"] = bool(np.isfinite(loss)) and bool(np.all(np.isfinite(d_x)))
    if config.regularize == "prediction":
        grads = model.backward(cache, d_pred + config.gamma * d_x)
    else:
        grads = model.backward(cache, d_pred, d_features=config.gamma * d_x)
    return loss, grads, diagnostics


def _split_mse(model: MlpModel, split: TrainBatch | None):
    if split is None:
        return None
    _, pred, _ = model.forward(split.inputs)
    return float(np.mean((pred - split.targets) ** 2))


def train(config: TrainConfig, data: TrainData,
          cme_model: CmeModel | None = None):
    """Mini-batch training loop; returns (model, TrainLog)."""
    batch = data.train
    n = batch.n
    if config.method == "circe" and config.gamma > 0.0 and cme_model is None:
        raise ConfigError("method 'circe' needs a fitted embedding model")
    if n < config.batch_size:
        raise ConfigError(
            f"training split of {n} smaller than batch_size {config.batch_size}"
        )
    model = MlpModel(batch.inputs.shape[1], config.hidden_widths, out_dim=1,
                     seed=config.seed)
    optimizer = make_optimizer(config.optimizer, config.lr, config.weight_decay)

    context = None
    if config.method == "circe" and config.gamma > 0.0:
        if config.use_rff:
            context = _RffContext(cme_model, config,
                                  batch.y.shape[1], batch.z.shape[1])
        else:
            context = _CirceContext(batch.y, batch.z, cme_model)

    rng = np.random.default_rng(config.seed)
    log = TrainLog()
    n_batches = n // config.batch_size
    batch_index = 0
    last_stat = float("nan")
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        epoch_stat = 0.0
        used = 0
        for step in range(n_batches):
            idx = perm[step * config.batch_size:(step + 1) * config.batch_size]
            mini = batch.take(idx)
            log.total_steps += 1
            try:
                loss, grads, diag = loss_and_grad(
                    model, mini, cme_model, config,
                    context=None if context is None else (context, idx),
                    batch_index=batch_index,
                )
            except NumericalError:
                log.skipped_steps += 1
                batch_index += 1
                continue
            batch_index += 1
            finite = diag["finite"] and all(np.all(np.isfinite(g)) for g in grads)
            if not finite:
                log.skipped_steps += 1
                continue
            optimizer.step(model.params, grads)
            epoch_loss += loss
            epoch_stat += diag["statistic"]
            used += 1
        entry = {
            "epoch": epoch,
            "train_loss": epoch_loss / used if used else float("nan"),
            "train_statistic": epoch_stat / used if used else float("nan"),
            "eval_mse": _split_mse(model, data.eval),
            "ood_mse": _split_mse(model, data.ood),
        }
        if used:
            last_stat = entry["train_statistic"]
        log.epochs.append(entry)
    log.final_statistic = last_stat
    return model, log


def train_data_from_dataset(ds, reuse_holdout: bool = False) -> TrainData:
    """Standardized TrainData from an ScmBatch dataset split."""
    pool = ds.fit_pool(reuse_holdout=reuse_holdout)
    std = ds.standardizer

    def as_train_batch(scm_batch):
        return TrainBatch(
            inputs=std.batch_inputs(scm_batch),
            targets=std.targets(scm_batch),
            y=std.transform("y", scm_batch.y),
            z=std.transform("z", scm_batch.z),
        )

    return TrainData(train=as_train_batch(pool), eval=as_train_batch(ds.eval))


def train_data_from_toy(toy, ood_toy=None) -> TrainData:
    """Toy task in raw coordinates so closed-form weights stay comparable."""
    def as_train_batch(t):
        return TrainBatch(inputs=t.x, targets=t.y, y=t.y, z=t.z)

    return TrainData(
        train=as_train_batch(toy),
        ood=None if ood_toy is None else as_train_batch(ood_toy),
    )
