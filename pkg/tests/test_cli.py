from __future__ import annotations

import csv
import json

import pytest

from aipwlab import cli
from aipwlab.harness import ExperimentReport
from test_harness import cfg


@pytest.fixture
def config_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg(mode="both", replications=2000)))
    return p


def test_simulate(config_path, tmp_path):
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--config", str(config_path), "--reps", "3", "--out", str(out),
                     "--plot-data"]) == 0
    files = sorted(p.name for p in out.glob("trajectory_*.csv"))
    assert files == ["trajectory_0.csv", "trajectory_1.csv", "trajectory_2.csv"]
    rows = list(csv.reader(open(out / "trajectory_0.csv")))
    assert rows[0] == ["i", "x", "a", "y", "pi"] and len(rows) == 5
    assert (out / "trajectories_tidy.csv").exists()


def test_estimate_and_replay(config_path, tmp_path):
    out = tmp_path / "est"
    assert cli.main(["estimate", "--config", str(config_path), "--seed", "3", "--out", str(out)]) == 0
    rep = json.loads((out / "estimate.json").read_text())
    assert set(rep) == {"tau_hat", "scores", "regret", "B", "n", "seed"}
    assert rep["seed"] == 3 and len(rep["scores"]) == rep["n"] == 4
    trace = list(csv.reader(open(out / "regret_trace.csv")))
    assert trace[0] == ["i", "loss", "cum_loss", "cum_hindsight"] and len(trace) == 5
    out2 = tmp_path / "est2"
    assert cli.main(["estimate", "--config", str(config_path), "--trajectory", str(out / "trajectory.csv"),
                     "--out", str(out2)]) == 0
    assert json.loads((out2 / "estimate.json").read_text())["tau_hat"] == rep["tau_hat"]


def test_check_bounds_pass_and_deterministic(config_path, tmp_path, capsys):
    args = ["check-bounds", "--config", str(config_path), "--plot-data"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    a = (tmp_path / "a" / "report.json").read_bytes()
    assert a == (tmp_path / "b" / "report.json").read_bytes()
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
    assert (tmp_path / "a" / "checks_tidy.csv").exists()


def test_check_bounds_failure_exit_code(config_path, tmp_path, monkeypatch):
    failing = ExperimentReport({"checks": [{"name": "thm1", "lhs": 2.0, "rhs": 1.0, "tolerance": 0.0,
                                            "route": "exact", "pass": False}]})
    monkeypatch.setattr(cli, "run_experiment", lambda config: failing)
    assert cli.main(["check-bounds", "--config", str(config_path), "--out", str(tmp_path)]) == 1


def test_configuration_error_exit_code(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(cfg(mode="warp")))
    assert cli.main(["check-bounds", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_regret_audit(config_path, tmp_path):
    out = tmp_path / "audit"
    assert cli.main(["regret-audit", "--config", str(config_path), "--reps", "500", "--out", str(out),
                     "--plot-data"]) == 0
    rep = json.loads((out / "regret_audit.json").read_text())
    assert rep["violations"] == 0 and rep["pass"]
    assert (out / "regret_tidy.csv").exists()


def test_certify_lower_bound(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg(n=3)))
    out = tmp_path / "cert"
    assert cli.main(["certify-lower-bound", "--config", str(p), "--out", str(out)]) == 0
    rep = json.loads((out / "certificates.json").read_text())
    assert rep["pass"] and rep["floor_le_mse"]
    for key in ("s", "kl", "gap", "certified"):
        assert key in rep["outcome"]
    assert "floor" in rep["floor"]
