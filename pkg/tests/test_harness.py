import csv
import io
import json
import math
import os

import numpy as np
import pytest

from ergodist.errors import ConfigError
from ergodist.harness import (
    DEFAULT_GRID,
    ExperimentConfig,
    cli_main,
    run_experiment,
)


def make_config(tmpdir, **overrides):
    raw = {
        "model": {"family": "ou", "params": {}},
        "estimators": ["edf", "unbiased:exp:delta=1"],
        "sim": {"T": 1.0, "dt": 0.01, "seed": 5},
        "replications": 4,
        "nu": "gauss:0,1",
        "grid": {"lo": -5.0, "hi": 5.0, "count": 11},
        "output_dir": str(tmpdir),
        "workers": 1,
    }
    raw.update(overrides)
    return raw


class TestExperimentConfig:
    def test_round_trip(self, tmp_path):
        cfg = ExperimentConfig.from_dict(make_config(tmp_path))
        cfg.validate()
        assert cfg.grid_count == 11
        assert len(cfg.grid) == 11

    def test_every_violation_listed(self, tmp_path):
        raw = make_config(
            tmp_path,
            replications=1,
            estimators=["edf", "unbiased:banana:z=1"],
            grid={"lo": 2.0, "hi": -2.0, "count": 1},
            model={"family": "nosuch", "params": {}},
        )
        cfg = ExperimentConfig.from_dict(raw)
        with pytest.raises(ConfigError) as err:
            cfg.validate()
        text = str(err.value)
        for needle in ("replications", "estimator", "grid", "model"):
            assert needle in text
        assert len(err.value.violations) >= 4

    def test_memory_guard(self, tmp_path):
        raw = make_config(tmp_path, sim={"T": 1e7, "dt": 1e-3, "seed": 0})
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict(raw).validate()
        assert "1e8" in str(err.value) or "exceeds" in str(err.value)

    def test_default_grid(self):
        assert DEFAULT_GRID == (-5.0, 5.0, 81)

    def test_workers_auto_reads_environment(self, tmp_path, monkeypatch):
        cfg = ExperimentConfig.from_dict(make_config(tmp_path, workers="auto"))
        monkeypatch.setenv("ERGODIST_WORKERS", "3")
        assert cfg.resolved_workers() == 3
        monkeypatch.delenv("ERGODIST_WORKERS")
        assert cfg.resolved_workers() == 1


class TestRunExperiment:
    def test_smoke_produces_reports_and_files(self, tmp_path):
        cfg = ExperimentConfig.from_dict(make_config(tmp_path, replications=2))
        result = run_experiment(cfg)
        assert set(result.reports) == {"edf", "unbiased_exp"}
        for rep in result.reports.values():
            assert math.isfinite(rep.ratio)
        files = sorted(os.listdir(tmp_path))
        assert files == ["result.json", "risk_edf.csv", "risk_unbiased_exp.csv", "timing.json"]

    def test_paired_seed_provenance(self, tmp_path):
        cfg = ExperimentConfig.from_dict(make_config(tmp_path))
        result = run_experiment(cfg)
        assert result.path_seeds["edf"] == result.path_seeds["unbiased_exp"]
        data = json.load(open(tmp_path / "result.json"))
        seeds = data["seed_provenance"]["path_seeds"]
        assert seeds["edf"] == seeds["unbiased_exp"]

    def test_byte_identical_rerun(self, tmp_path):
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        for out in (out1, out2):
            cfg = ExperimentConfig.from_dict(make_config(out))
            run_experiment(cfg)
        for name in ("risk_edf.csv", "risk_unbiased_exp.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        a = json.load(open(out1 / "result.json"))
        b = json.load(open(out2 / "result.json"))
        a["config"]["output_dir"] = b["config"]["output_dir"]
        assert a == b

    def test_duplicate_estimators_get_distinct_tags(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            make_config(tmp_path, estimators=["edf", "edf"])
        )
        result = run_experiment(cfg)
        assert set(result.reports) == {"edf", "edf_2"}

    def test_workers_match_serial(self, tmp_path):
        serial = run_experiment(
            ExperimentConfig.from_dict(make_config(tmp_path / "s", workers=1))
        )
        pooled = run_experiment(
            ExperimentConfig.from_dict(make_config(tmp_path / "p", workers=2))
        )
        for tag in serial.reports:
            assert serial.reports[tag].scaled_risk == pooled.reports[tag].scaled_risk
            assert np.array_equal(serial.reports[tag].bias, pooled.reports[tag].bias)


class TestRiskCsvFormat:
    def test_header_and_precision(self, tmp_path):
        cfg = ExperimentConfig.from_dict(make_config(tmp_path))
        run_experiment(cfg)
        blob = (tmp_path / "risk_edf.csv").read_bytes()
        lines = blob.decode().splitlines()
        assert lines[0] == "x,bias,scaled_variance,local_bound"
        assert len(lines) == 12
        # full double precision round trip
        row = lines[1].split(",")
        assert float(row[0]) == -5.0
        reparsed = [float(v) for v in lines[6].split(",")]
        assert all(math.isfinite(v) for v in reparsed)
        # crlf per the csv module default
        assert b"\r\n" in blob

    def test_17_digit_round_trip(self, tmp_path):
        cfg = ExperimentConfig.from_dict(make_config(tmp_path))
        result = run_experiment(cfg)
        rows = list(csv.DictReader(io.StringIO((tmp_path / "risk_edf.csv").read_text())))
        rep = result.reports["edf"]
        for i, row in enumerate(rows):
            assert float(row["bias"]) == rep.bias[i]
            assert float(row["scaled_variance"]) == rep.scaled_variance[i]


class TestCli:
    def test_truth_csv_contract(self, tmp_path, ou):
        out = tmp_path / "truth.csv"
        rc = cli_main(["truth", "--model", "ou", "--grid", "-3:3:61", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "x,F,f"
        assert len(lines) == 62
        from ergodist.model import invariant_cdf

        row = lines[31].split(",")
        assert float(row[0]) == pytest.approx(0.0, abs=1e-12)
        assert float(row[1]) == pytest.approx(invariant_cdf(ou, 0.0), abs=1e-12)

    def test_bound_json_positive(self, tmp_path):
        out = tmp_path / "bound.json"
        rc = cli_main(["bound", "--model", "ou", "--nu", "gauss:0,1", "--out", str(out)])
        assert rc == 0
        data = json.load(open(out))
        assert data["bound"] > 0.0

    def test_bound_grid_detail_csv(self, tmp_path):
        out = tmp_path / "b.json"
        detail = tmp_path / "lb.csv"
        rc = cli_main(["bound", "--model", "ou", "--nu", "gauss:0,1",
                       "--grid", "-2:2:5", "--csv", str(detail), "--out", str(out)])
        assert rc == 0
        lines = detail.read_text().splitlines()
        assert lines[0] == "x,local_bound"
        assert len(lines) == 6
        data = json.load(open(out))
        assert len(data["local_bound"]) == 5
        # symmetric model: detail values mirror around the center
        vals = [float(r.split(",")[1]) for r in lines[1:]]
        assert vals[0] == pytest.approx(vals[-1], rel=1e-9)

    def test_check_model_json(self, tmp_path):
        out = tmp_path / "cm.json"
        rc = cli_main(["check-model", "--model", "ou", "--out", str(out)])
        assert rc == 0
        data = json.load(open(out))
        assert data["es_ok"] and data["vs_diverges"] and data["g_finite"]

    def test_simulate_csv(self, tmp_path):
        out = tmp_path / "p.csv"
        rc = cli_main(["simulate", "--model", "ou", "--T", "0.1", "--dt", "0.01",
                       "--seed", "4", "--store-wiener", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "t,x,dW"
        assert len(lines) == 12
        assert lines[-1].endswith(",")

    def test_estimate_csv(self, tmp_path):
        out = tmp_path / "c.csv"
        rc = cli_main(["estimate", "--model", "ou", "--estimator", "edf", "--T", "1",
                       "--dt", "0.01", "--seed", "4", "--grid", "-2:2:5", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "x,estimate"
        assert len(lines) == 6

    def test_check_conditions_json(self, tmp_path):
        out = tmp_path / "cc.json"
        rc = cli_main(["check-conditions", "--model", "ou", "--nu", "gauss:0,1",
                       "--estimator", "unbiased:exp:delta=1", "--x", "0", "--out", str(out)])
        assert rc == 0
        data = json.load(open(out))
        assert data["influence_moment_ok"] is True
        inner = data["estimators"]["unbiased:exp:delta=1"]
        assert inner["weight_moment_ok"] is True
        assert inner["thresholds"]["0.0"]["sq_moment_ok"] is True

    def test_experiment_exit_and_files(self, tmp_path):
        cfg_path = tmp_path / "exp.json"
        json.dump(make_config(tmp_path / "out", replications=2), open(cfg_path, "w"))
        rc = cli_main(["experiment", "--config", str(cfg_path)])
        assert rc == 0
        produced = set(os.listdir(tmp_path / "out"))
        assert {"risk_edf.csv", "risk_unbiased_exp.csv", "result.json"} <= produced

    def test_unknown_flag_exits_2(self, capsys):
        rc = cli_main(["truth", "--model", "ou", "--grid", "0:1:3", "--frobnicate"])
        assert rc == 2
        assert "usage" in capsys.readouterr().err

    def test_validation_error_exits_2(self, tmp_path):
        cfg_path = tmp_path / "exp.json"
        json.dump(make_config(tmp_path, replications=0), open(cfg_path, "w"))
        assert cli_main(["experiment", "--config", str(cfg_path)]) == 2

    def test_divergent_model_exits_3(self):
        # null drift: the normalizer diverges under tail doubling
        rc = cli_main(["bound", "--model", "ou:theta=1,s=1", "--nu", "gauss:0,1",
                       "--grid", "0:1:2"])
        assert rc == 0  # sane baseline first
        rc = cli_main(["identity-checks", "--model", "quartic",
                       "--estimator", "unbiased:exp:delta=1", "--z-grid", "-1:1:3"])
        assert rc == 0

    def test_explosion_exits_4(self):
        rc = cli_main(["simulate", "--model", "quartic", "--T", "50", "--dt", "0.5",
                       "--seed", "1", "--x0", "40"])
        assert rc == 4

    def test_identity_checks_json(self, tmp_path):
        out = tmp_path / "idc.json"
        rc = cli_main(["identity-checks", "--model", "ou", "--estimator",
                       "unbiased:exp:delta=1", "--x", "0", "--z-grid", "-2:2:5",
                       "--seeds", "2", "--T", "4", "--dt", "0.001", "--out", str(out)])
        assert rc == 0
        data = json.load(open(out))
        assert data["derivative_identity_max_rel"] < 1e-6
        assert data["ode_residual_max_abs"] < 1e-3
        assert data["representation_rms"] < 0.1
