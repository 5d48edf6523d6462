from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest

from neuramstrat.cli import main
from neuramstrat.estimators import EstimateResult
from neuramstrat.experiments import (
    ConfigError,
    ExperimentConfig,
    ReportRow,
    StageError,
    attach_ratios,
    compare_command,
    derive_seed,
    load_configs,
    repeat_harness,
    run_experiment,
    sweep_command,
)

TINY = dict(model="q0", M=20, K=1000, epochs=200, N=64, repetitions=5, n_cheap=2000, S=4)


def tiny(**kw) -> ExperimentConfig:
    return ExperimentConfig(**{**TINY, **kw})


def write_config(path, data) -> str:
    path.write_text(json.dumps(data))
    return str(path)


def read_csv(path) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestSeeds:
    def test_deterministic(self):
        assert derive_seed(7, "rep", 3) == derive_seed(7, "rep", 3)

    @pytest.mark.parametrize("other", [(8, "rep", 3), (7, "pilot", 3), (7, "rep", 4)])
    def test_each_component_matters(self, other):
        assert derive_seed(7, "rep", 3) != derive_seed(*other)

    def test_fits_u64(self):
        assert 0 <= derive_seed(2**63, "x", 10**6) < 2**64


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            ExperimentConfig.from_dict({"model": "q0", "bogus": 1})

    @pytest.mark.parametrize("bad", [
        {"estimator": "qmc"}, {"allocation": "neyman"}, {"N": 0}, {"model": "nope"},
        {"estimator": "mfmc"}, {"strat_source": "file"}, {"cdf_sampler": "halton"},
    ])
    def test_invalid_values(self, bad):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(bad)

    def test_round_trip(self):
        cfg = tiny(estimator="smfmc", lf_model="q0_lf", allocation="optimal")
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_list_with_base(self, tmp_path):
        path = write_config(tmp_path / "c.json", [{"base": {"model": "q0", "N": 10}}, {"estimator": "mc"},
                                                  {"estimator": "smc", "N": 20}])
        cfgs = load_configs(path)
        assert [(c.estimator, c.N) for c in cfgs] == [("mc", 10), ("smc", 20)]

    @pytest.mark.parametrize("kw,name", [
        ({"estimator": "mc"}, "mc"),
        ({"estimator": "smc", "allocation": "optimal"}, "smc(u,1)"),
        ({"estimator": "smc", "strat_source": "heuristic"}, "smc(h,2)"),
        ({"estimator": "smc", "label": "mine"}, "mine"),
    ])
    def test_names(self, kw, name):
        assert tiny(**kw).name == name


class TestHarness:
    def test_constant_estimator(self):
        s = repeat_harness(lambda rng: 3.0, 10, 0, exact=3.0)
        assert s.variance == 0.0 and s.mse == 0.0 and s.mean == 3.0

    def test_normal_variance(self):
        s = repeat_harness(lambda rng: rng.standard_normal(), 10_000, 1)
        assert abs(s.variance - 1) < 0.05

    def test_mse_decomposition(self):
        s = repeat_harness(lambda rng: 0.5 + rng.standard_normal(), 2000, 2, exact=0.0)
        assert s.mse == pytest.approx(s.variance + (s.mean - 0.0) ** 2, abs=1e-12)

    def test_single_repetition(self):
        s = repeat_harness(lambda rng: rng.random(), 1, 3)
        assert s.variance is None
        row = ReportRow("x", "mc", 1, 1, s.mean, s.variance, s.mse)
        assert row.csv_row()[5] == "" and row.csv_row()[6] == ""

    def test_threads_preserve_order(self):
        a = repeat_harness(lambda rng: rng.random(), 50, 4)
        b = repeat_harness(lambda rng: rng.random(), 50, 4, threads=4)
        assert np.array_equal(a.estimates, b.estimates)

    def test_accepts_results(self):
        s = repeat_harness(lambda rng: EstimateResult(1.0, 0.0, 5), 3, 0)
        assert s.mean == 1.0 and s.results[0].hf_evals == 5

    def test_zero_repetitions(self):
        with pytest.raises(ValueError):
            repeat_harness(lambda rng: 0.0, 0, 0)


class TestRatios:
    def rows(self, with_mc=True):
        rows = [ReportRow("smc", "smc", 10, 2, 0.0, 0.5, 1.0), ReportRow("lhs", "lhs-mc", 10, 2, 0.0, 2.0, 2.0)]
        if with_mc:
            rows.append(ReportRow("mc", "mc", 10, 2, 0.0, 4.0, 4.0))
        return rows

    def test_sorted_with_mc_unity(self):
        rows = attach_ratios(self.rows())
        assert [r.estimator for r in rows] == ["mc", "lhs-mc", "smc"]
        assert [r.ratio for r in rows] == [1.0, 0.5, 0.25]

    def test_no_mc(self):
        assert all(r.ratio is None for r in attach_ratios(self.rows(False)))


class TestExperiments:
    def test_report_and_determinism(self, tmp_path):
        cfg = tiny()
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b", threads=3)
        for name in ("report.csv", "runs.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        row = read_csv(tmp_path / "a" / "report.csv")[0]
        assert row["label"] == "smc(u,2)" and int(row["repetitions"]) == 5
        assert "smc(u,2)" in json.loads((tmp_path / "a" / "timing.json").read_text())

    @pytest.mark.parametrize("kw,hf,lf,train", [
        ({"estimator": "mc"}, 64, 0, 0),
        ({"estimator": "lhs-mc"}, 64, 0, 0),
        ({"estimator": "smc"}, 64, 0, 20),
        ({"estimator": "smc", "allocation": "optimal"}, 64, 0, 20),
        ({"estimator": "as-smc", "as_samples": 200}, 64, 0, 0),
    ])
    def test_budget_accounting(self, kw, hf, lf, train):
        rows = compare_command([tiny(**kw)])
        assert (rows[0].hf_evals, rows[0].lf_evals, rows[0].train_evals) == (hf, lf, train)

    def test_multifidelity_budget(self):
        cfg = tiny(estimator="mfmc", lf_model="q0_lf", N=200)
        row = compare_command([cfg])[0]
        assert row.train_evals == 40
        assert row.hf_evals + cfg.w * row.lf_evals <= cfg.N + 1e-9

    def test_compare_shares_model(self):
        with pytest.raises(ConfigError):
            compare_command([tiny(), tiny(model="linear")])

    def test_compare_order_and_ratio(self, tmp_path):
        rows = compare_command([tiny(estimator="smc"), tiny(estimator="mc")], tmp_path)
        table = read_csv(tmp_path / "compare.csv")
        assert [r["estimator"] for r in table] == ["mc", "smc"]
        assert float(table[0]["ratio"]) == 1.0
        assert rows[1].ratio == pytest.approx(rows[1].mse / rows[0].mse)

    def test_sweep(self, tmp_path):
        rows = sweep_command(tiny(estimator="mc"), "N", [16, 32], tmp_path)
        assert [r.n for r in rows] == [16, 32]
        assert len(read_csv(tmp_path / "sweep.csv")) == 2

    def test_missing_strat_file(self, tmp_path):
        cfg = tiny(strat_source="file", strat_file=str(tmp_path / "absent.json"))
        with pytest.raises(StageError) as info:
            run_experiment(cfg, tmp_path)
        assert info.value.stage == "stratify"
        err = json.loads((tmp_path / "error.json").read_text())
        assert err["stage"] == "stratify" and err["seed"] == cfg.seed


class TestMain:
    def test_estimate(self, tmp_path, capsys):
        path = write_config(tmp_path / "c.json", TINY)
        assert main(["estimate", "--config", path, "--out", str(tmp_path / "o")]) == 0
        assert "smc(u,2)" in capsys.readouterr().out
        assert (tmp_path / "o" / "report.csv").exists()

    def test_seed_override(self, tmp_path):
        path = write_config(tmp_path / "c.json", {**TINY, "estimator": "mc"})
        main(["estimate", "--config", path, "--out", str(tmp_path / "a"), "--seed", "1"])
        main(["estimate", "--config", path, "--out", str(tmp_path / "b"), "--seed", "2"])
        a = json.loads((tmp_path / "a" / "runs.json").read_text())
        b = json.loads((tmp_path / "b" / "runs.json").read_text())
        assert a["info"]["config"]["seed"] == 1 and a["estimates"] != b["estimates"]

    def test_train_and_stratify(self, tmp_path):
        path = write_config(tmp_path / "c.json", {**TINY, "strat_source": "heuristic"})
        assert main(["train", "--config", path, "--out", str(tmp_path)]) == 0
        assert (tmp_path / "manifold_q0.json").exists()
        assert main(["stratify", "--config", path, "--out", str(tmp_path)]) == 0
        bps = json.loads((tmp_path / "stratification.json").read_text())["breakpoints"]
        assert len(bps) == 5 and bps[0] == 0 and bps[-1] == 1

    def test_compare_multiple_files(self, tmp_path, capsys):
        a = write_config(tmp_path / "a.json", {**TINY, "estimator": "mc"})
        b = write_config(tmp_path / "b.json", [{"base": TINY}, {"estimator": "smc"}, {"estimator": "lhs-mc"}])
        assert main(["compare", "--config", a, "--config", b, "--out", str(tmp_path)]) == 0
        assert len(read_csv(tmp_path / "compare.csv")) == 3

    def test_sweep(self, tmp_path):
        path = write_config(tmp_path / "c.json", TINY)
        assert main(["sweep", "--config", path, "--param", "S", "--values", "2,4", "--out", str(tmp_path)]) == 0
        assert [r["label"] for r in read_csv(tmp_path / "sweep.csv")] == ["smc(u,2)[S=2]", "smc(u,2)[S=4]"]

    def test_unknown_key_exit_code(self, tmp_path, capsys):
        path = write_config(tmp_path / "c.json", {**TINY, "typo": 1})
        assert main(["estimate", "--config", path]) == 2
        assert "typo" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["estimate", "--config", str(tmp_path / "none.json")]) == 2

    def test_stage_error_exit_code(self, tmp_path):
        path = write_config(tmp_path / "c.json", {**TINY, "strat_source": "file", "strat_file": str(tmp_path / "x")})
        assert main(["estimate", "--config", path, "--out", str(tmp_path)]) == 1
        assert (tmp_path / "error.json").exists()

    def test_bad_threads(self, tmp_path):
        assert main(["estimate", "--config", "x", "--threads", "0"]) == 2

    def test_single_config_required(self, tmp_path):
        path = write_config(tmp_path / "c.json", [TINY, TINY])
        assert main(["estimate", "--config", path]) == 2


def test_sqrt_budget_sanity():
    # MC variance of Q0 scales as 1/N across the harness
    cfg = dict(TINY, estimator="mc", repetitions=400)
    small, large = (compare_command([ExperimentConfig(**{**cfg, "N": n})])[0] for n in (50, 200))
    assert math.isclose(small.variance / large.variance, 4.0, rel_tol=0.35)
