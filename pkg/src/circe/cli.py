"""Command-line front end.

Subcommands: gen, fit-cme, train, sweep, report. Exit codes: 0 success,
2 configuration problems (including argparse usage errors), 3 numerical
failures, 4 sweep finished with unstable rows.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .cme import DEFAULT_LAMBDA_GRID, DEFAULT_SIGMA2_Y_GRID, save_cme, select_hyperparams
from .exceptions import ConfigError, NumericalError
from .harness import (
    SweepConfig,
    read_records_csv,
    run_single_with_model,
    run_sweep,
    summarize_records,
    write_records_csv,
)
from .kernels import KernelParams
from .nn import save_model
from .scm import export_csv, gen_scm, make_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return raw


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_gen(args) -> int:
    cfg = _load_config(args.config)
    case = args.case or cfg.get("case")
    if case is None:
        raise ConfigError("gen needs --case or a 'case' config entry")
    n = args.n if args.n is not None else int(cfg.get("n", 10_000))
    d = args.d if args.d is not None else int(cfg.get("d", 2))
    batch = gen_scm(case, n, d, args.seed)
    out = _out_dir(args)
    path = out / f"{case}_n{n}_seed{args.seed}.csv"
    export_csv(batch, path)
    print(f"wrote {batch.n} rows to {path}")
    return EXIT_OK


def _cmd_fit_cme(args) -> int:
    cfg = _load_config(args.config)
    case = args.case or cfg.get("case")
    if case is None:
        raise ConfigError("fit-cme needs --case or a 'case' config entry")
    n = args.n if args.n is not None else int(cfg.get("n", 10_000))
    d = args.d if args.d is not None else int(cfg.get("d", 2))
    m_holdout = (args.m_holdout if args.m_holdout is not None
                 else int(cfg.get("m_holdout", 1000)))
    lam_grid = tuple(cfg.get("lambda_grid", DEFAULT_LAMBDA_GRID))
    s2_grid = tuple(cfg.get("sigma2_y_grid", DEFAULT_SIGMA2_Y_GRID))
    sigma2_z = float(cfg.get("sigma2_z", 1.0))

    ds = make_dataset(case, n, d, args.seed, m_holdout=m_holdout)
    hold_y = ds.standardizer.transform("y", ds.holdout.y)
    hold_z = ds.standardizer.transform("z", ds.holdout.z)
    model, report = select_hyperparams(hold_y, hold_z, lambda_grid=lam_grid,
                                       sigma2_y_grid=s2_grid,
                                       z_params=KernelParams(sigma2=sigma2_z))
    print("lambda sigma2_y loo_error")
    for lam, s2, err in report.as_rows():
        print(f"{lam:g} {s2:g} {err:.6g}")
    print(f"selected lambda={model.lam:g} sigma2_y={model.y_params.sigma2:g} "
          f"loo={report.best_error:.6g}")
    out = _out_dir(args)
    path = out / f"cme_{case}_seed{args.seed}.npz"
    save_cme(model, path)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if not cfg:
        raise ConfigError("train needs --config with the run description")
    case = cfg.pop("case", None)
    if case is None:
        raise ConfigError("train config needs a 'case' entry")
    method = cfg.pop("method", "none")
    gamma = float(cfg.pop("gamma", 0.0))
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
    seeds = cfg.pop("seeds", [0])
    sweep_config = SweepConfig.from_dict({
        **cfg,
        "cases": [case],
        "methods": [method],
        "gammas": {method: [gamma]},
        "seeds": seeds,
    })
    seed = sweep_config.seeds[0]
    record, model = run_single_with_model(sweep_config, case, method, gamma,
                                          seed, strict=True)
    print(f"case={record.case_id} method={record.method} gamma={record.gamma:g} "
          f"seed={record.seed}")
    print(f"mse_in={record.mse_in:.6g} vcf={record.vcf:.6g} "
          f"statistic={record.statistic_final:.6g} unstable={record.unstable}")
    if args.out is not None:
        out = _out_dir(args)
        run_csv = out / f"run_{case}_{method}_seed{seed}.csv"
        write_records_csv([record], run_csv)
        ckpt = out / f"model_{case}_{method}_seed{seed}.npz"
        save_model(model, ckpt)
        print(f"wrote {run_csv} and {ckpt}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    if args.config is None:
        raise ConfigError("sweep needs --config")
    config = SweepConfig.from_json(args.config)
    out = _out_dir(args)
    path = out / "results.csv"
    records, any_unstable = run_sweep(config, out_csv=path, workers=args.workers)
    n_unstable = sum(r.unstable for r in records)
    print(f"wrote {len(records)} rows to {path} ({n_unstable} unstable)")
    return EXIT_PARTIAL if any_unstable else EXIT_OK


def _print_summary(summary) -> None:
    print("case method gamma median_mse_in median_vcf median_statistic "
          "n_seeds n_unstable")
    for row in summary["rows"]:
        print(f"{row['case_id']} {row['method']} {row['gamma']:g} "
              f"{row['median_mse_in']:.6g} {row['median_vcf']:.6g} "
              f"{row['median_statistic']:.6g} {row['n_seeds']} "
              f"{row['n_unstable']}")
    for (case, method), front in summary["pareto"].items():
        gammas = ", ".join(f"{r['gamma']:g}" for r in front)
        print(f"pareto {case}/{method}: gamma in [{gammas}]")


def _cmd_report(args) -> int:
    records = read_records_csv(args.results)
    summary = summarize_records(records)
    _print_summary(summary)
    if args.out is not None:
        out = _out_dir(args)
        path = out / "summary.csv"
        fields = ["case_id", "method", "gamma", "median_mse_in", "median_vcf",
                  "median_statistic", "n_seeds", "n_unstable"]
        import csv as csv_mod

        with open(path, "w", newline="") as fh:
            writer = csv_mod.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in summary["rows"]:
                writer.writerow({k: row[k] for k in fields})
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="circe",
        description="Conditional-independence regularized regression toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_workers=False):
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        if with_workers:
            p.add_argument("--workers", type=int, default=1)

    p_gen = sub.add_parser("gen", help="generate a dataset CSV")
    common(p_gen)
    p_gen.add_argument("--case", default=None)
    p_gen.add_argument("--n", type=int, default=None)
    p_gen.add_argument("--d", type=int, default=None)

    p_fit = sub.add_parser("fit-cme", help="fit the embedding regression")
    common(p_fit)
    p_fit.add_argument("--case", default=None)
    p_fit.add_argument("--n", type=int, default=None)
    p_fit.add_argument("--d", type=int, default=None)
    p_fit.add_argument("--m-holdout", type=int, default=None)

    p_train = sub.add_parser("train", help="run a single training job")
    common(p_train)

    p_sweep = sub.add_parser("sweep", help="run a grid of training jobs")
    common(p_sweep, with_workers=True)

    p_report = sub.add_parser("report", help="summarize a results CSV")
    common(p_report)
    p_report.add_argument("results", help="path to results.csv")
    return parser


COMMANDS = {
    "gen": _cmd_gen,
    "fit-cme": _cmd_fit_cme,
    "train": _cmd_train,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is None and args.command in ("gen", "fit-cme"):
        args.seed = 0
    if args.out is None and args.command in ("gen", "fit-cme", "sweep"):
        args.out = "."
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
