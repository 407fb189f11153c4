import hashlib
import json

import numpy as np
import pytest

from mnlqg.cli import main
from mnlqg.model import build_pendulum, write_config


def read_json(path):
    return json.loads(path.read_text())


def csv_rows(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


class TestAnalyze:
    def test_pendulum_radius(self, tmp_path):
        assert main([
            "analyze", "--pendulum", "--sigma2", "0.06", "--out", str(tmp_path)
        ]) == 0
        doc = read_json(tmp_path / "analysis.json")
        assert doc["rho_H"] == pytest.approx(0.9159, abs=2e-3)
        assert doc["rho_open"] > 1.0
        assert doc["expected_q"] == 1.0
        assert doc["sigma_x0"] == [[0.0, 0.0], [0.0, 0.0]]

    def test_lost_compensation_exits_4(self, tmp_path, capsys):
        code = main([
            "analyze", "--pendulum", "--sigma2", "0.20",
            "--compensator", "lqg", "--out", str(tmp_path),
        ])
        assert code == 4
        assert "mean-square compensation lost" in capsys.readouterr().err

    def test_non_convergence_exits_3(self, tmp_path, capsys):
        code = main([
            "analyze", "--pendulum", "--sigma2", "4.0", "--out", str(tmp_path)
        ])
        assert code == 3
        assert "did not converge" in capsys.readouterr().err


class TestSynthesize:
    def test_writes_gains(self, tmp_path):
        assert main([
            "synthesize", "--pendulum", "--sigma2", "0.06", "--out", str(tmp_path)
        ]) == 0
        doc = read_json(tmp_path / "gains.json")
        assert doc["converged"] is True
        assert np.array(doc["K"]).shape == (1, 2)
        assert np.array(doc["L"]).shape == (2, 1)

    def test_non_convergence_exits_3(self, tmp_path):
        assert main([
            "synthesize", "--pendulum", "--sigma2", "4.0", "--out", str(tmp_path)
        ]) == 3
        assert not (tmp_path / "gains.json").exists()


class TestConfigHandling:
    def test_config_file_round(self, tmp_path):
        system, weights, options = build_pendulum(0.06, 0.06)
        cfg = tmp_path / "cfg.json"
        write_config(cfg, system, weights, options)
        out = tmp_path / "out"
        assert main(["analyze", "--config", str(cfg), "--out", str(out)]) == 0
        assert read_json(out / "analysis.json")["rho_H"] == pytest.approx(0.9159, abs=2e-3)

    def test_sigma2_override_on_config(self, tmp_path):
        system, weights, options = build_pendulum(0.30, 0.30)
        cfg = tmp_path / "cfg.json"
        write_config(cfg, system, weights, options)
        out = tmp_path / "out"
        assert main([
            "analyze", "--config", str(cfg), "--sigma2", "0.06", "--out", str(out)
        ]) == 0
        assert read_json(out / "analysis.json")["rho_H"] == pytest.approx(0.9159, abs=2e-3)

    def test_missing_system_exits_2(self, tmp_path, capsys):
        assert main(["analyze", "--out", str(tmp_path)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_bad_config_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "broken.json"
        cfg.write_text("{not json")
        assert main(["analyze", "--config", str(cfg), "--out", str(tmp_path)]) == 2
        assert "parse error" in capsys.readouterr().err

    def test_unknown_flag_exits_2(self, capsys):
        assert main(["analyze", "--pendulum", "--frobnicate"]) == 2
        capsys.readouterr()

    def test_unknown_subcommand_exits_2(self, capsys):
        assert main(["transmogrify"]) == 2
        capsys.readouterr()


class TestSimulateTuneEvaluate:
    def test_pipeline(self, tmp_path):
        sim_out = tmp_path / "sim"
        assert main([
            "simulate", "--pendulum", "--sigma2", "0.06",
            "--steps", "20000", "--seed", "7", "--out", str(sim_out),
        ]) == 0
        trace_path = sim_out / "trace.csv"
        assert trace_path.exists()
        assert len(trace_path.read_text().splitlines()) == 20001

        tune_out = tmp_path / "tune"
        assert main([
            "tune", "--pendulum", "--sigma2", "0.06", "--trace", str(trace_path),
            "--out", str(tune_out),
        ]) == 0
        threshold = read_json(tune_out / "threshold.json")
        assert threshold["bound_at_alpha"] <= threshold["F"] == 0.05
        assert threshold["s"] == 4

        eval_out = tmp_path / "eval"
        assert main([
            "evaluate", "--trace", str(trace_path),
            "--threshold", str(tune_out / "threshold.json"), "--out", str(eval_out),
        ]) == 0
        rate = read_json(eval_out / "rate.json")
        assert rate["false_alarm_rate"] <= 0.05
        rows = csv_rows(eval_out / "alarms.csv")
        assert len(rows) == 20000
        assert sum(int(r["alarm"]) for r in rows) == rate["alarm_count"]

    def test_simulate_fixed_mismatch(self, tmp_path):
        assert main([
            "simulate", "--pendulum", "--sigma2", "0.06", "--mode", "fixed-mismatch",
            "--steps", "2000", "--out", str(tmp_path),
        ]) == 0

    def test_evaluate_needs_exactly_one_threshold_source(self, tmp_path, capsys):
        trace = tmp_path / "trace.csv"
        trace.write_text("k,x1,xhat1,u1,y1,r1,q,alarm\n0,0,0,0,0,0,0,0\n")
        assert main(["evaluate", "--trace", str(trace)]) == 2
        capsys.readouterr()

    def test_tune_reproducible(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        args = ["tune", "--pendulum", "--sigma2", "0.06", "--steps", "5000", "--seed", "3"]
        assert main(args + ["--out", str(out_a)]) == 0
        assert main(args + ["--out", str(out_b)]) == 0
        assert (out_a / "threshold.json").read_bytes() == (out_b / "threshold.json").read_bytes()


class TestCompare:
    def test_side_by_side(self, tmp_path):
        assert main([
            "compare", "--pendulum", "--sigma2", "0.20",
            "--steps", "20000", "--out", str(tmp_path),
        ]) == 0
        doc = read_json(tmp_path / "compare.json")
        assert doc["mlqg"]["alpha_star"] is not None
        assert doc["lqg"]["rho_H"] >= 1.0
        assert doc["lqg"]["alpha_star"] is None
        assert doc["lqg"]["sigma_r"] is None


class TestSweep:
    def test_table_rows_and_na_cells(self, tmp_path):
        assert main([
            "sweep", "--pendulum", "--grid", "0.06,4.0",
            "--steps", "4000", "--workers", "1", "--out", str(tmp_path),
        ]) == 0
        rows = csv_rows(tmp_path / "sweep.csv")
        assert [r["compensator"] for r in rows] == ["mlqg", "lqg", "mlqg", "lqg"]
        by_key = {(r["sigma2"], r["compensator"]): r for r in rows}
        ok = by_key[("0.06", "mlqg")]
        assert float(ok["rho_H"]) == pytest.approx(0.9159, abs=2e-3)
        assert ok["converged"] == "true"
        dead = by_key[("4.0", "mlqg")]
        assert dead["converged"] == "false"
        assert all(dead[c] == "N/A" for c in
                   ("rho_H", "Sigma_r", "E_q", "alpha_star", "empirical_false_alarm_rate"))
        # baseline at 4.0: gains exist but the loop is not compensated
        base = by_key[("4.0", "lqg")]
        assert base["converged"] == "true"
        assert float(base["rho_H"]) > 1.0
        assert base["Sigma_r"] == "N/A"

    def test_parallel_and_serial_outputs_identical(self, tmp_path):
        out_a, out_b = tmp_path / "serial", tmp_path / "par"
        args = ["sweep", "--pendulum", "--grid", "0.04,0.06", "--steps", "3000", "--seed", "11"]
        assert main(args + ["--workers", "1", "--out", str(out_a)]) == 0
        assert main(args + ["--workers", "2", "--out", str(out_b)]) == 0
        assert (out_a / "sweep.csv").read_bytes() == (out_b / "sweep.csv").read_bytes()

    def test_rejects_bad_grid(self, tmp_path, capsys):
        assert main(["sweep", "--pendulum", "--grid", "0.1,-0.2", "--out", str(tmp_path)]) == 2
        capsys.readouterr()


class TestManifest:
    def test_outputs_listed_and_hash_matches(self, tmp_path):
        system, weights, options = build_pendulum(0.06, 0.06)
        cfg = tmp_path / "cfg.json"
        write_config(cfg, system, weights, options)
        out = tmp_path / "out"
        assert main(["analyze", "--config", str(cfg), "--out", str(out)]) == 0
        manifest = read_json(out / "analyze.manifest.json")
        assert manifest["outputs"] == ["analysis.json"]
        for name in manifest["outputs"]:
            assert (out / name).exists()
        doc = json.loads(cfg.read_text())
        expected = hashlib.sha256(
            json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()
        assert manifest["config_sha256"] == expected
        assert manifest["config_path"] == str(cfg)
        assert manifest["version"]
        assert manifest["subcommand"] == "analyze"
