"""Kernel-based conditional independence regularization for regression."""

from .baselines import gcm_statistic, hscic_statistic
from .cme import CmeModel, fit_cme, load_cme, loo_error, save_cme, select_hyperparams
from .estimator import centered_gram, circe_oracle, circe_statistic
from .exceptions import CirceError, ConfigError, NumericalError
from .harness import eval_vcf, pareto_front, run_single, run_sweep
from .kernels import KernelParams, gram, kernel_eval, regularized_solve, trace_product
from .nn import Adam, AdamW, MlpModel
from .rff import circe_rff, precompute_rff_weights, sample_rff
from .scm import gen_nonlinear_gcm_case, gen_scm, gen_toy, intervene_z, make_dataset
from .trainer import TrainConfig, loss_and_grad, train

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AdamW",
    "CirceError",
    "CmeModel",
    "ConfigError",
    "KernelParams",
    "MlpModel",
    "NumericalError",
    "TrainConfig",
    "centered_gram",
    "circe_oracle",
    "circe_rff",
    "circe_statistic",
    "eval_vcf",
    "fit_cme",
    "gcm_statistic",
    "gen_nonlinear_gcm_case",
    "gen_scm",
    "gen_toy",
    "gram",
    "hscic_statistic",
    "intervene_z",
    "kernel_eval",
    "load_cme",
    "loo_error",
    "loss_and_grad",
    "make_dataset",
    "pareto_front",
    "precompute_rff_weights",
    "regularized_solve",
    "run_single",
    "run_sweep",
    "sample_rff",
    "save_cme",
    "select_hyperparams",
    "trace_product",
    "train",
    "__version__",
]
