import copy
import json

import numpy as np
import pytest

from echosim import ConfigError, DecayTrace, ScenarioConfig, load_config, run_scan_d, run_scenario
from echosim.io import atomic_write_text, read_wigner, write_wigner
from echosim.runner import plateau_summary
from echosim import PhaseSpaceGrid, density_from_pure, make_cat_state, wigner_transform


def base_config(mode="ensemble", **run):
    doc = {
        "grid": {"n_points": 64, "x_min": -10.0, "x_max": 10.0, "hbar": 1.0},
        "hamiltonian": {"kind": "harmonic", "omega": 1.0},
        "initial_state": {"kind": "gaussian", "x0": 0.0, "p0": 0.0, "sigma_x": 1.0},
        "noise": {"kernel": "white", "diffusion_d": 0.05, "n_realizations": 8},
        "evolution": {"dt": 0.05, "t_max": 2.0, "store_every": 4},
        "run": {"mode": mode, "seed": 3},
    }
    doc["run"].update(run)
    return doc


# -- config ---------------------------------------------------------------------

def test_config_parses_and_defaults():
    cfg = ScenarioConfig.from_dict(base_config())
    assert cfg.grid.n_points == 64
    assert cfg.noise.n_realizations == 8
    assert cfg.evolution.n_steps == 40
    assert cfg.seed == 3
    doc = base_config()
    del doc["initial_state"]["sigma_x"]
    doc["grid"]["n_points"] = 128
    assert ScenarioConfig.from_dict(doc).initial_state["sigma_x"] == pytest.approx(np.sqrt(0.5))


@pytest.mark.parametrize("mutate", [
    lambda d: d["grid"].update(colour=1),
    lambda d: d.update(extra={}),
    lambda d: d["run"].update(mode="bogus"),
    lambda d: d["noise"].update(kernel="pink"),
    lambda d: d["noise"].update(variance_nu0=0.1),
    lambda d: d["noise"].update(n_realizations=1),
    lambda d: d["evolution"].update(dt=0.03),
    lambda d: d["evolution"].update(dt=2.0, t_max=4.0),
    lambda d: d["grid"].update(n_points="64"),
    lambda d: d["grid"].update(n_points=63.5),
    lambda d: d.pop("grid"),
    lambda d: d["run"].update(snapshot_times=[5.0]),
    lambda d: d["run"].update(n_jobs=0),
    lambda d: d["initial_state"].update(kind="cat"),
    lambda d: d["noise"].update(coupling="quartic"),
])
def test_invalid_configs_are_rejected(mutate):
    doc = base_config()
    mutate(doc)
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict(doc)


@pytest.mark.parametrize("d_values,ok", [
    ([0.01], False),
    ([0.01, 0.02, 0.04], False),
    ([0.01, 0.02, 0.04, 0.06], False),
    ([0.01, 0.02, 0.04, -0.08], False),
    ([0.01, 0.02, 0.04, 0.08], True),
])
def test_scan_validation(d_values, ok):
    doc = base_config("scan_d", scan={"d_values": d_values})
    if ok:
        ScenarioConfig.from_dict(doc)
    else:
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict(doc)


def test_load_config_sources(tmp_path):
    doc = base_config()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    for src in (doc, json.dumps(doc), str(path), path):
        assert load_config(src).to_dict() == doc
    with pytest.raises(ConfigError):
        load_config("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_with_diffusion_builds_scan_point():
    cfg = ScenarioConfig.from_dict(base_config("scan_d", scan={"d_values": [0.01, 0.02, 0.04, 0.08],
                                                              "solver": "master"}))
    sub = cfg.with_diffusion(0.04)
    assert sub.mode == "master"
    assert sub.diffusion_d == 0.04


# -- runs -------------------------------------------------------------------------

def test_zero_noise_run_gives_unit_echo(tmp_path):
    doc = base_config()
    doc["noise"]["diffusion_d"] = 0.0
    res = run_scenario(doc, output_dir=tmp_path)
    assert res.exit_code == 0
    trace = DecayTrace.from_csv((tmp_path / "trace.csv").read_text())
    assert np.allclose(trace.m_bar, 1.0, atol=1e-12)


def test_io_oracle_run(tmp_path):
    doc = base_config("io_oracle", oracle={"lambda0": 1.0, "r": 0.25})
    doc["evolution"] = {"dt": 0.5, "t_max": 2.0}
    res = run_scenario(doc, output_dir=tmp_path)
    assert res.exit_code == 0
    trace = DecayTrace.from_csv((tmp_path / "trace.csv").read_text())
    assert trace.m_bar[2] == pytest.approx(0.7197162433747426, rel=1e-12)


def test_rerun_is_byte_identical(tmp_path):
    doc = base_config(compute_sigma=True, snapshot_times=[1.0])
    a = run_scenario(doc, output_dir=tmp_path / "a")
    b = run_scenario(doc, output_dir=tmp_path / "b")
    assert a.exit_code == b.exit_code == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name != "manifest.json")
    assert "wigner_1.bin" in names and "wigner_1_rho_0.json" in names
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_manifest_reproduces_run(tmp_path):
    res = run_scenario(base_config(), output_dir=tmp_path / "a", seed=17)
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 17 and manifest["status"] == "ok" and manifest["exit_code"] == 0
    assert "trace.csv" in manifest["files"]
    again = run_scenario(tmp_path / "a" / "manifest.json", output_dir=tmp_path / "b")
    assert again.exit_code == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    other = run_scenario(base_config(), output_dir=tmp_path / "c", seed=18)
    assert (tmp_path / "a" / "trace.csv").read_bytes() != (tmp_path / "c" / "trace.csv").read_bytes()
    assert other.exit_code == 0


def test_master_mode_and_fit(tmp_path):
    doc = base_config("master", fit=True, fit_window=[0.5, 4.0])
    doc["hamiltonian"] = {"kind": "free", "mass": "inf"}
    doc["initial_state"] = {"kind": "gaussian", "sigma_x": 1.5}
    doc["evolution"] = {"dt": 0.05, "t_max": 4.0, "store_every": 1}
    doc["noise"]["diffusion_d"] = 0.2
    res = run_scenario(doc, output_dir=tmp_path)
    assert res.exit_code == 0
    assert (tmp_path / "ratefit.json").exists()
    assert res.trace.purity[-1] < res.trace.purity[0]


def test_numeric_abort_is_reported(tmp_path):
    doc = base_config()
    doc["grid"] = {"n_points": 64, "x_min": -6.0, "x_max": 6.0}
    doc["hamiltonian"] = {"kind": "free"}
    doc["noise"]["diffusion_d"] = 1.0
    doc["evolution"] = {"dt": 0.05, "t_max": 6.0, "store_every": 20}
    res = run_scenario(doc, output_dir=tmp_path)
    assert res.exit_code == 3
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "error" and manifest["error"]["category"] == "leakage-abort"


def test_fit_failure_is_reported(tmp_path):
    doc = base_config(fit=True)
    doc["noise"]["diffusion_d"] = 1e-6
    res = run_scenario(doc, output_dir=tmp_path)
    assert res.exit_code == 4
    assert (tmp_path / "trace.csv").exists()


def test_config_error_raises_before_output(tmp_path):
    doc = base_config()
    doc["grid"]["bogus"] = 1
    with pytest.raises(ConfigError):
        run_scenario(doc, output_dir=tmp_path / "x")
    assert not (tmp_path / "x").exists()


def test_harmonic_scan_has_no_plateau(tmp_path):
    doc = base_config("scan_d", scan={"d_values": [0.02, 0.04, 0.08, 0.16], "solver": "master"},
                      lyapunov={"t_total": 20.0, "n_trajectories": 4, "dt": 0.01})
    doc["evolution"] = {"dt": 0.05, "t_max": 20.0, "store_every": 4}
    res = run_scan_d(doc, tmp_path)
    lines = (tmp_path / "scan.csv").read_text().splitlines()
    assert lines[0] == "d,rate_lyapunov,rate_fgr,rate_err,lambda_ref"
    assert len(lines) == 5
    summary = json.loads((tmp_path / "scan.json").read_text())
    assert summary["plateau_detected"] is False
    assert res.exit_code in (0, 4)


def test_plateau_summary():
    assert plateau_summary([1, 2, 4, 8], [0.1, 0.3, 0.5, 0.52])["plateau_detected"]
    assert not plateau_summary([1, 2, 4, 8], [0.1, 0.2, 0.4, 0.8])["plateau_detected"]
    assert not plateau_summary([1, 2, 4, 8], [0.1, 0.2, np.nan, 0.8])["plateau_detected"]


# -- io -------------------------------------------------------------------------

def test_wigner_snapshot_round_trip(tmp_path):
    g = PhaseSpaceGrid(64, -6, 6)
    w = wigner_transform(density_from_pure(make_cat_state(g, 3.0, 0.8)))
    path = write_wigner(tmp_path, 1.5, w)
    back = read_wigner(path)
    assert np.array_equal(back.values, w.values)
    meta = json.loads(path.with_suffix(".json").read_text())
    assert meta["shape"] == [64, 64] and meta["dtype"] == "<f8" and meta["axes"] == ["x", "p"]
    assert meta["p_min"] == pytest.approx(w.p[0])
    assert len(path.read_bytes()) == 64 * 64 * 8


def test_atomic_write_leaves_no_temporaries(tmp_path):
    target = tmp_path / "sub" / "f.txt"
    atomic_write_text(target, "one")
    atomic_write_text(target, "two")
    assert target.read_text() == "two"
    assert [p.name for p in target.parent.iterdir()] == ["f.txt"]
