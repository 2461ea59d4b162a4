import numpy as np
import pytest

from circe.exceptions import ConfigError
from circe.harness import (
    CSV_COLUMNS,
    RunRecord,
    SweepConfig,
    eval_vcf,
    pareto_front,
    read_records_csv,
    run_single,
    run_sweep,
    summarize_records,
    write_records_csv,
)
from circe.scm import gen_scm


def test_vcf_constant_predictor_is_zero():
    batch = gen_scm("uni1", 200, 1, seed=0)
    result = eval_vcf(lambda a, y, z: np.zeros((a.shape[0], 1)), batch,
                      n_interventions=10, seed=1)
    assert result.value == 0.0
    assert result.n_points == 200
    assert result.n_interventions == 10


def test_vcf_matches_variance_oracle():
    batch = gen_scm("uni1", 2000, 1, seed=3)
    result = eval_vcf(lambda a, y, z: z[:, 0:1], batch,
                      n_interventions=100, seed=7)
    target = float(np.var(batch.z))
    assert abs(result.value - target) <= 0.1 * target


def test_vcf_shift_invariance_and_consistency():
    batch = gen_scm("uni2", 500, 1, seed=5)

    def base(a, y, z):
        return np.sin(z[:, 0:1]) + 0.3 * z[:, 0:1] ** 2

    def shifted(a, y, z):
        return base(a, y, z) + 17.0

    r1 = eval_vcf(base, batch, n_interventions=20, seed=9)
    r2 = eval_vcf(shifted, batch, n_interventions=20, seed=9)
    assert r2.value == pytest.approx(r1.value, rel=1e-12)
    r4 = eval_vcf(base, batch, n_interventions=40, seed=9)
    assert abs(r4.value - r1.value) <= 0.15 * r1.value


def test_vcf_validation():
    batch = gen_scm("uni1", 50, 1, seed=0)
    with pytest.raises(ConfigError):
        eval_vcf(lambda a, y, z: z, batch, n_interventions=1, seed=0)


def test_pareto_front_cases():
    assert pareto_front([(1, 2), (2, 1), (3, 3)]) == [0, 1]
    assert pareto_front([(1, 1), (1, 1), (1, 1)]) == [0, 1, 2]
    assert pareto_front([(1, 3), (2, 2), (3, 1)]) == [0, 1, 2]
    # dominated duplicate of a better point drops out
    assert pareto_front([(2, 2), (1, 2)]) == [1]
    with pytest.raises(ConfigError):
        pareto_front([])


def test_pareto_front_permutation_and_idempotence():
    rng = np.random.default_rng(4)
    pts = [(float(a), float(b)) for a, b in rng.random((20, 2))]
    keep = pareto_front(pts)
    front = [pts[i] for i in keep]
    perm = rng.permutation(20)
    keep_p = pareto_front([pts[i] for i in perm])
    front_p = [pts[perm[i]] for i in keep_p]
    assert sorted(front) == sorted(front_p)
    again = pareto_front(front)
    assert [front[i] for i in again] == front


def make_record(**kw):
    base = dict(case_id="uni1", method="circe", variant="centered", gamma=1.0,
                seed=0, lam=0.1, sigma2_y=1.0, sigma2_z=1.0, mse_in=0.5,
                mse_ood=float("nan"), vcf=0.01, statistic_final=1e-4,
                unstable=False, wall_seconds=2.5)
    base.update(kw)
    return RunRecord(**base)


def test_csv_roundtrip(tmp_path):
    records = [make_record(seed=s, mse_in=0.5 + s) for s in range(3)]
    records.append(make_record(method="none", gamma=0.0, unstable=True))
    path = tmp_path / "results.csv"
    write_records_csv(records, path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    assert header == list(CSV_COLUMNS)
    loaded = read_records_csv(path)
    assert len(loaded) == 4
    for a, b in zip(records, loaded):
        assert a == b or (np.isnan(a.mse_ood) and np.isnan(b.mse_ood)
                          and a.as_row() == b.as_row())


def test_read_csv_rejects_wrong_schema(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("case_id,method\nuni1,circe\n")
    with pytest.raises(ConfigError):
        read_records_csv(path)


def test_sweep_config_validation():
    with pytest.raises(ConfigError):
        SweepConfig(cases=(), methods=("none",))
    with pytest.raises(ConfigError):
        SweepConfig(cases=("uni1",), methods=("magic",))
    with pytest.raises(ConfigError):
        SweepConfig(cases=("yale",), methods=("none",))
    with pytest.raises(ConfigError):
        SweepConfig.from_dict({"cases": ["uni1"]})
    with pytest.raises(ConfigError):
        SweepConfig.from_dict({"cases": ["uni1"], "methods": ["none"],
                               "bogus_key": 1})
    cfg = SweepConfig(cases=("uni1",), methods=("none", "circe"),
                      gammas={"circe": [1.0, 10.0]})
    assert cfg.gammas["circe"] == (1.0, 10.0)
    assert len(cfg.gammas["hscic"]) == 10


def tiny_sweep_config(**kw):
    base = dict(
        cases=("uni1",), methods=("none", "circe"), seeds=(0, 1),
        gammas={"circe": [1.0, 10.0]}, n=600, d=2, m_holdout=100,
        epochs=2, batch_size=64, lr=1e-3, weight_decay=0.0,
        hidden_widths=(8,), n_interventions=5,
        lambda_grid=(0.1,), sigma2_y_grid=(1.0,),
    )
    base.update(kw)
    return SweepConfig(**base)


def test_sweep_counts_order_and_determinism(tmp_path):
    config = tiny_sweep_config()
    records, any_unstable = run_sweep(config, out_csv=tmp_path / "a.csv")
    # (none: 1 gamma + circe: 2 gammas) x 2 seeds
    assert len(records) == 6
    assert not any_unstable
    keys = [(r.method, r.gamma, r.seed) for r in records]
    assert keys == [("none", 0.0, 0), ("none", 0.0, 1),
                    ("circe", 1.0, 0), ("circe", 1.0, 1),
                    ("circe", 10.0, 0), ("circe", 10.0, 1)]
    records2, _ = run_sweep(config, out_csv=tmp_path / "b.csv")
    for a, b in zip(records, records2):
        row_a = a.as_row()[:-1]
        row_b = b.as_row()[:-1]
        assert row_a == row_b
    # csv files identical apart from the wall_seconds column
    strip = lambda p: ["," .join(line.split(",")[:-1])
                       for line in open(p).read().splitlines()]
    assert strip(tmp_path / "a.csv") == strip(tmp_path / "b.csv")


def test_sweep_singleton_matches_direct_run():
    config = tiny_sweep_config(methods=("none",), seeds=(0,))
    records, _ = run_sweep(config)
    direct = run_single(config, "uni1", "none", 0.0, 0)
    assert len(records) == 1
    assert records[0].as_row()[:-1] == direct.as_row()[:-1]


def test_sweep_records_failures_as_unstable_rows():
    # batch_size larger than the training pool makes the run fail
    config = tiny_sweep_config(methods=("none",), seeds=(0,), batch_size=512)
    records, any_unstable = run_sweep(config)
    assert len(records) == 1
    assert records[0].unstable
    assert any_unstable
    assert np.isnan(records[0].mse_in)


def test_summarize_records_medians_and_front():
    records = []
    for gamma, mse, vcf in [(1.0, 0.2, 0.5), (10.0, 0.3, 0.1), (100.0, 0.5, 0.3)]:
        for seed in range(3):
            records.append(make_record(gamma=gamma, seed=seed,
                                       mse_in=mse + 0.01 * seed, vcf=vcf))
    summary = summarize_records(records)
    rows = summary["rows"]
    assert len(rows) == 3
    assert rows[0]["median_mse_in"] == pytest.approx(0.21)
    front = summary["pareto"][("uni1", "circe")]
    assert [r["gamma"] for r in front] == [1.0, 10.0]
    with pytest.raises(ConfigError):
        summarize_records([])
