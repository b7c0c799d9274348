import json
import subprocess
import sys

import numpy as np
import pytest

from echosim.cli import main

from test_config_runner import base_config


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_oracle_prints_csv(capsys):
    assert main(["oracle", "--lambda", "1", "--r", "0.25", "--t-max", "1", "--dt", "0.5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("t,m_bar")
    t, m = lines[-1].split(",")[:2]
    assert float(t) == 1.0
    assert float(m) == pytest.approx(0.7197162433747426, rel=1e-12)


def test_oracle_writes_trace(tmp_path, capsys):
    assert main(["oracle", "--lambda", "2", "--r", "0.1", "--t-max", "2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "trace.csv").read_text().count("\n") == 202
    assert json.loads(capsys.readouterr().out)["status"] == "ok"


@pytest.mark.parametrize("argv", [
    ["oracle", "--lambda", "-1", "--r", "0.25", "--t-max", "1"],
    ["oracle", "--lambda", "1", "--r", "0.25"],
    ["frobnicate"],
    [],
])
def test_invalid_invocations_exit_2(argv, capsys):
    assert main(argv) == 2


def test_run_and_seed_override(tmp_path, capsys):
    cfg = write(tmp_path, base_config())
    assert main(["run", cfg, "--out", str(tmp_path / "o"), "--seed", "5"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert "trace.csv" in report["files"]
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["seed"] == 5


def test_unknown_key_exits_2(tmp_path, capsys):
    doc = base_config()
    doc["noise"]["colour"] = "pink"
    assert main(["run", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["category"] == "config-invalid"
    assert not (tmp_path / "o").exists()


def test_single_d_value_exits_2(tmp_path, capsys):
    doc = base_config("scan_d", scan={"d_values": [0.1]})
    assert main(["scan", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 2


def test_scan_rejects_other_modes(tmp_path, capsys):
    assert main(["scan", write(tmp_path, base_config()), "--out", str(tmp_path / "o")]) == 2


def test_numeric_abort_exits_3(tmp_path, capsys):
    doc = base_config()
    doc["grid"] = {"n_points": 64, "x_min": -6.0, "x_max": 6.0}
    doc["hamiltonian"] = {"kind": "free"}
    doc["noise"]["diffusion_d"] = 1.0
    doc["evolution"] = {"dt": 0.05, "t_max": 6.0, "store_every": 20}
    assert main(["run", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 3


def test_fit_failure_exits_4(tmp_path, capsys):
    doc = base_config(fit=True)
    doc["noise"]["diffusion_d"] = 1e-6
    assert main(["run", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 4
    assert json.loads(capsys.readouterr().err)["exit_code"] == 4


def test_lyapunov_subcommand(tmp_path, capsys):
    doc = base_config(lyapunov={"t_total": 20.0, "n_trajectories": 4, "dt": 0.01})
    doc["hamiltonian"] = {"kind": "inverted_oscillator", "lambda0": 1.0}
    doc["initial_state"] = {"kind": "gaussian", "sigma_x": 1.0}
    doc["run"]["lyapunov"]["spread_x"] = 0.0
    doc["run"]["lyapunov"]["spread_p"] = 0.0
    assert main(["lyapunov", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 0
    lam = json.loads((tmp_path / "o" / "lyapunov.json").read_text())
    assert lam["lambda"] == pytest.approx(1.0, rel=0.01)


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "echosim.cli", "oracle", "--lambda", "1", "--r", "0.5",
                           "--t-max", "0.1", "--dt", "0.05"], capture_output=True, text=True)
    assert proc.returncode == 0
    rows = proc.stdout.strip().splitlines()
    assert len(rows) == 4
    bad = subprocess.run([sys.executable, "-m", "echosim.cli", "oracle", "--lambda", "1"],
                         capture_output=True, text=True)
    assert bad.returncode == 2
