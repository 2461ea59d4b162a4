"""Experiment orchestration: VCF and MSE evaluation, sweeps, reports.

A sweep executes the cross product cases x methods x gamma grid x seeds.
Dataset generation and embedding fitting are cached per (case, seed) so
every method and gamma reuses the same draws; runs are seed-scoped and
deterministic, so worker concurrency never changes results.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cme import DEFAULT_LAMBDA_GRID, DEFAULT_SIGMA2_Y_GRID, select_hyperparams
from .exceptions import ConfigError
from .kernels import KernelParams
from .scm import SCM_CASES, ScmBatch, make_dataset, regenerate
from .trainer import METHODS, TrainConfig, train, train_data_from_dataset

SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "schema_version", "case_id", "method", "variant", "gamma", "seed",
    "lambda", "sigma2_y", "sigma2_z", "mse_in", "mse_ood", "vcf",
    "statistic_final", "unstable", "wall_seconds",
)
DEFAULT_N_INTERVENTIONS = 20
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
# per-method gamma grids, 10 log-spaced points
DEFAULT_GAMMA_GRIDS = {
    "none": (0.0,),
    "circe": tuple(np.logspace(0.0, 4.0, 10)),
    "hscic": tuple(np.logspace(0.0, 4.0, 10)),
    "gcm": tuple(np.logspace(-2.0, -0.5, 10)),
}
# (lr, weight_decay) defaults by case family
CASE_OPTIM_DEFAULTS = {
    "uni1": (1e-4, 0.3),
    "uni2": (1e-4, 0.3),
    "multi1": (3e-4, 0.1),
    "multi2": (3e-4, 0.1),
}


@dataclass
class VcfResult:
    value: float
    n_interventions: int
    n_points: int


@dataclass
class RunRecord:
    case_id: str
    method: str
    variant: str
    gamma: float
    seed: int
    lam: float
    sigma2_y: float
    sigma2_z: float
    mse_in: float
    mse_ood: float
    vcf: float
    statistic_final: float
    unstable: bool
    wall_seconds: float

    def as_row(self):
        return [
            str(SCHEMA_VERSION), self.case_id, self.method, self.variant,
            repr(float(self.gamma)), str(self.seed), repr(float(self.lam)),
            repr(float(self.sigma2_y)), repr(float(self.sigma2_z)),
            repr(float(self.mse_in)), repr(float(self.mse_ood)),
            repr(float(self.vcf)), repr(float(self.statistic_final)),
            str(bool(self.unstable)), repr(float(self.wall_seconds)),
        ]


def predictor_from_model(model, standardizer):
    """Callable (a, y, z) -> predictions, wrapping standardization."""

    def predict(a, y, z):
        inputs = standardizer.inputs(a, y, z)
        _, pred, _ = model.forward(inputs)
        return pred

    return predict


def eval_vcf(predict, batch: ScmBatch, n_interventions: int = DEFAULT_N_INTERVENTIONS,
             seed: int = 0) -> VcfResult:
    """Mean over points of the predictor's variance under z interventions.

    z' is drawn from the marginal of Z by resampling the batch's own z
    column; all Z-descendants are regenerated from stored noises.
    """
    if n_interventions < 2:
        raise ConfigError(f"n_interventions must be >= 2, got {n_interventions}")
    rng = np.random.default_rng(seed)
    b = batch.n
    preds = np.empty((n_interventions, b))
    for t in range(n_interventions):
        pick = rng.integers(0, b, size=b)
        z_new = batch.z[pick]
        a_new, _ = regenerate(batch, z_new)
        preds[t] = np.asarray(predict(a_new, batch.y, z_new)).reshape(-1)
    value = float(np.mean(np.var(preds, axis=0, ddof=1)))
    return VcfResult(value=value, n_interventions=n_interventions, n_points=b)


def pareto_front(points) -> list:
    """Indices of non-dominated (mse, vcf) points, both minimized.

    Dominance needs at least one strict inequality, so exact duplicates
    survive together. Output is ordered by mse ascending, input order
    breaking ties.
    """
    pts = [(float(m), float(v)) for m, v in points]
    if not pts:
        raise ConfigError("pareto_front needs at least one point")
    keep = []
    for i, (mi, vi) in enumerate(pts):
        dominated = False
        for j, (mj, vj) in enumerate(pts):
            if j == i:
                continue
            if mj <= mi and vj <= vi and (mj < mi or vj < vi):
                dominated = True
                break
        if not dominated:
            keep.append(i)
    keep.sort(key=lambda i: (pts[i][0], i))
    return keep


@dataclass
class SweepConfig:
    cases: tuple
    methods: tuple
    seeds: tuple = DEFAULT_SEEDS
    gammas: dict | None = None
    n: int = 10_000
    d: int = 2
    m_holdout: int = 1000
    epochs: int = 100
    batch_size: int = 256
    lr: float | None = None
    weight_decay: float | None = None
    optimizer: str = "adam"
    variant: str = "centered"
    regularize: str = "prediction"
    hidden_widths: tuple = (64,) * 9
    lam: float = 0.01
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    sigma2_y_grid: tuple = DEFAULT_SIGMA2_Y_GRID
    sigma2_x: float = 1.0
    sigma2_z: float = 1.0
    n_interventions: int = DEFAULT_N_INTERVENTIONS
    use_rff: bool = False
    rff_dim: int = 512
    rff_bank_dim: int | None = None
    rff_refresh: int | None = None

    def __post_init__(self):
        self.cases = tuple(self.cases)
        self.methods = tuple(self.methods)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.hidden_widths = tuple(int(w) for w in self.hidden_widths)
        self.lambda_grid = tuple(float(v) for v in self.lambda_grid)
        self.sigma2_y_grid = tuple(float(v) for v in self.sigma2_y_grid)
        if not self.cases:
            raise ConfigError("sweep needs at least one case")
        for case in self.cases:
            if case not in SCM_CASES:
                raise ConfigError(f"unknown case {case!r}, expected {SCM_CASES}")
        if not self.methods:
            raise ConfigError("sweep needs at least one method")
        for method in self.methods:
            if method not in METHODS:
                raise ConfigError(f"unknown method {method!r}")
        if not self.seeds:
            raise ConfigError("sweep needs at least one seed")
        grids = dict(DEFAULT_GAMMA_GRIDS)
        if self.gammas:
            for method, grid in self.gammas.items():
                if method not in METHODS:
                    raise ConfigError(f"gamma grid for unknown method {method!r}")
                grids[method] = tuple(float(g) for g in grid)
        self.gammas = grids

    @classmethod
    def from_dict(cls, raw: dict) -> "SweepConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown sweep config keys: {sorted(unknown)}")
        if "cases" not in raw or "methods" not in raw:
            raise ConfigError("sweep config requires 'cases' and 'methods'")
        return cls(**raw)

    @classmethod
    def from_json(cls, path) -> "SweepConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read sweep config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("sweep config must be a JSON object")
        return cls.from_dict(raw)

    def optim_for(self, case: str):
        lr_default, wd_default = CASE_OPTIM_DEFAULTS[case]
        lr = self.lr if self.lr is not None else lr_default
        wd = self.weight_decay if self.weight_decay is not None else wd_default
        return lr, wd


# per-process cache of (dataset, cme 5-tuple) keyed by case/seed/geometry
_CASE_CACHE: dict = {}


def _prepare_case(config: SweepConfig, case: str, seed: int):
    key = (case, seed, config.n, config.d, config.m_holdout,
           config.lambda_grid, config.sigma2_y_grid, config.sigma2_z)
    if key in _CASE_CACHE:
        return _CASE_CACHE[key]
    ds = make_dataset(case, config.n, config.d, seed, m_holdout=config.m_holdout)
    std = ds.standardizer
    hold_y = std.transform("y", ds.holdout.y)
    hold_z = std.transform("z", ds.holdout.z)
    cme, report = select_hyperparams(
        hold_y, hold_z,
        lambda_grid=config.lambda_grid,
        sigma2_y_grid=config.sigma2_y_grid,
        z_params=KernelParams(sigma2=config.sigma2_z),
    )
    prepared = (ds, cme, report)
    _CASE_CACHE[key] = prepared
    return prepared


def run_single_with_model(config: SweepConfig, case: str, method: str,
                          gamma: float, seed: int, strict: bool = False):
    """One training run; returns (RunRecord, model).

    With strict=False any failure becomes an unstable row with NaN metrics
    and a None model, so sweeps always complete.
    """
    start = time.perf_counter()
    try:
        ds, cme, _ = _prepare_case(config, case, seed)
        lr, wd = config.optim_for(case)
        train_config = TrainConfig(
            method=method, gamma=float(gamma), batch_size=config.batch_size,
            epochs=config.epochs, lr=lr, weight_decay=wd,
            optimizer=config.optimizer, seed=seed, variant=config.variant,
            hidden_widths=config.hidden_widths, regularize=config.regularize,
            lam=cme.lam,
            sigma2_x=config.sigma2_x, sigma2_y=cme.y_params.sigma2,
            sigma2_z=config.sigma2_z, use_rff=config.use_rff,
            rff_dim=config.rff_dim, rff_bank_dim=config.rff_bank_dim,
            rff_refresh=config.rff_refresh,
        )
        data = train_data_from_dataset(ds)
        model, log = train(train_config, data,
                           cme_model=cme if method == "circe" else None)
        predict = predictor_from_model(model, ds.standardizer)
        vcf = eval_vcf(predict, ds.eval, config.n_interventions, seed=seed)
        mse_in = log.epochs[-1]["eval_mse"]
        record = RunRecord(
            case_id=case, method=method, variant=config.variant,
            gamma=float(gamma), seed=seed, lam=train_config.lam,
            sigma2_y=cme.y_params.sigma2, sigma2_z=config.sigma2_z,
            mse_in=mse_in, mse_ood=float("nan"), vcf=vcf.value,
            statistic_final=log.final_statistic, unstable=log.unstable,
            wall_seconds=time.perf_counter() - start,
        )
        return record, model
    except Exception:
        if strict:
            raise
        record = RunRecord(
            case_id=case, method=method, variant=config.variant,
            gamma=float(gamma), seed=seed, lam=float("nan"),
            sigma2_y=float("nan"), sigma2_z=config.sigma2_z,
            mse_in=float("nan"), mse_ood=float("nan"), vcf=float("nan"),
            statistic_final=float("nan"), unstable=True,
            wall_seconds=time.perf_counter() - start,
        )
        return record, None


def run_single(config: SweepConfig, case: str, method: str, gamma: float,
               seed: int) -> RunRecord:
    record, _ = run_single_with_model(config, case, method, gamma, seed)
    return record


def _run_case_seed(payload):
    config, case, seed = payload
    rows = []
    for method in config.methods:
        for gamma in config.gammas[method]:
            rows.append(run_single(config, case, method, gamma, seed))
    return (case, seed), rows


def run_sweep(config: SweepConfig, out_csv=None, workers: int = 1):
    """Execute the sweep; returns (records, any_unstable)."""
    if workers < 1:
        raise ConfigError(f"workers must be positive, got {workers}")
    jobs = [(config, case, seed) for case in config.cases for seed in config.seeds]
    by_job = {}
    if workers == 1 or len(jobs) == 1:
        for job in jobs:
            key, rows = _run_case_seed(job)
            by_job[key] = rows
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for key, rows in pool.map(_run_case_seed, jobs):
                by_job[key] = rows
    records = []
    for case in config.cases:
        for method in config.methods:
            for gamma in config.gammas[method]:
                for seed in config.seeds:
                    rows = by_job[(case, seed)]
                    for row in rows:
                        if (row.method == method and row.gamma == float(gamma)
                                and row.seed == seed):
                            records.append(row)
                            break
    if out_csv is not None:
        write_records_csv(records, out_csv)
    any_unstable = any(r.unstable for r in records)
    return records, any_unstable


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for record in records:
            writer.writerow(record.as_row())


def read_records_csv(path) -> list:
    records = []
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ConfigError(f"results CSV missing columns {sorted(missing)}")
            for row in reader:
                records.append(RunRecord(
                    case_id=row["case_id"], method=row["method"],
                    variant=row["variant"], gamma=float(row["gamma"]),
                    seed=int(row["seed"]), lam=float(row["lambda"]),
                    sigma2_y=float(row["sigma2_y"]),
                    sigma2_z=float(row["sigma2_z"]),
                    mse_in=float(row["mse_in"]), mse_ood=float(row["mse_ood"]),
                    vcf=float(row["vcf"]),
                    statistic_final=float(row["statistic_final"]),
                    unstable=row["unstable"] == "True",
                    wall_seconds=float(row["wall_seconds"]),
                ))
    except OSError as exc:
        raise ConfigError(f"cannot read results CSV {path}: {exc}") from exc
    return records


def summarize_records(records) -> dict:
    """Median metrics per (case, method, gamma) plus per-group Pareto fronts."""
    if not records:
        raise ConfigError("no records to summarize")
    groups: dict = {}
    for r in records:
        groups.setdefault((r.case_id, r.method, r.gamma), []).append(r)
    summary_rows = []
    for (case, method, gamma), rows in sorted(groups.items()):
        mse = float(np.median([r.mse_in for r in rows]))
        vcf = float(np.median([r.vcf for r in rows]))
        stat = float(np.median([r.statistic_final for r in rows]))
        n_unstable = sum(r.unstable for r in rows)
        summary_rows.append({
            "case_id": case, "method": method, "gamma": gamma,
            "median_mse_in": mse, "median_vcf": vcf,
            "median_statistic": stat, "n_seeds": len(rows),
            "n_unstable": n_unstable,
        })
    fronts = {}
    for (case, method) in sorted({(r["case_id"], r["method"])
                                  for r in summary_rows}):
        rows = [r for r in summary_rows
                if r["case_id"] == case and r["method"] == method
                and np.isfinite(r["median_mse_in"]) and np.isfinite(r["median_vcf"])]
        if not rows:
            continue
        idx = pareto_front([(r["median_mse_in"], r["median_vcf"]) for r in rows])
        fronts[(case, method)] = [rows[i] for i in idx]
    return {"rows": summary_rows, "pareto": fronts}
