"""Scenario configuration: one JSON document, validated before any compute."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .exceptions import ConfigError
from .noise import NoiseProcess
from .phasespace import PhaseSpaceGrid, WaveFunction, make_cat_state, make_gaussian_state
from .propagators import (CouplingFunction, EvolutionParams, HamiltonianSpec,
                          check_time_step)

MODES = ("ensemble", "master", "scan_d", "io_oracle", "lyapunov")

_SCHEMA = {
    "grid": {"n_points", "x_min", "x_max", "hbar"},
    "hamiltonian": {"kind", "mass", "a4", "a2", "drive_amp", "drive_freq", "lambda0", "omega"},
    "initial_state": {"kind", "x0", "p0", "sigma_x", "separation", "phase"},
    "noise": {"kernel", "diffusion_d", "variance_nu0", "n_realizations", "coupling"},
    "evolution": {"dt", "t_max", "store_every"},
    "run": {"mode", "output_dir", "seed", "scan", "fit", "snapshot_times", "compute_purity",
            "compute_sigma", "n_jobs", "block_size", "oracle", "lyapunov", "fit_window",
            "check_dt"},
}
_SUB_SCHEMA = {
    "scan": {"d_values", "solver"},
    "oracle": {"lambda0", "r"},
    "lyapunov": {"t_total", "renorm_every", "n_trajectories", "dt", "spread_x", "spread_p"},
}
_REQUIRED = {
    "grid": {"n_points", "x_min", "x_max"},
    "evolution": {"dt", "t_max"},
    "run": {"mode"},
}

_SEED_MASK = (1 << 64) - 1


def _check_keys(block: dict, allowed: set, where: str):
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def _number(block, key, where, default=None, kind=float):
    if key not in block:
        if default is None:
            raise ConfigError(f"{where}.{key} is required")
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number")
    if kind is int:
        if float(v) != int(v):
            raise ConfigError(f"{where}.{key} must be an integer")
        return int(v)
    if not math.isfinite(v):
        raise ConfigError(f"{where}.{key} must be finite")
    return float(v)


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario.  ``raw`` keeps the document as given for the manifest."""

    raw: dict
    grid: PhaseSpaceGrid
    hamiltonian: HamiltonianSpec
    initial_state: dict
    noise: Optional[NoiseProcess]
    evolution: EvolutionParams
    mode: str
    output_dir: Optional[str]
    seed: int
    run: dict = field(default_factory=dict)

    # -- construction ------------------------------------------------------
    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        doc = copy.deepcopy(doc)
        _check_keys(doc, set(_SCHEMA), "config")
        for name, keys in _REQUIRED.items():
            if name not in doc:
                raise ConfigError(f"missing block {name!r}")
            missing = keys - set(doc[name])
            if missing:
                raise ConfigError(f"{name} is missing {sorted(missing)}")
        for name, block in doc.items():
            _check_keys(block, _SCHEMA[name], name)
        run = doc["run"]
        for name, keys in _SUB_SCHEMA.items():
            if run.get(name) is not None:
                _check_keys(run[name], keys, f"run.{name}")

        mode = run["mode"]
        if mode not in MODES:
            raise ConfigError(f"run.mode must be one of {MODES}, got {mode!r}")
        g = doc["grid"]
        grid = PhaseSpaceGrid(_number(g, "n_points", "grid", kind=int), _number(g, "x_min", "grid"),
                              _number(g, "x_max", "grid"), _number(g, "hbar", "grid", 1.0))
        hd = dict(doc.get("hamiltonian", {"kind": "free"}))
        kind = hd.pop("kind", "free")
        mass = hd.pop("mass", 1.0)
        mass = math.inf if mass in ("inf", None) else mass
        ham = HamiltonianSpec(kind, mass, hd)
        ev = doc["evolution"]
        evo = EvolutionParams(_number(ev, "dt", "evolution"), _number(ev, "t_max", "evolution"),
                              _number(ev, "store_every", "evolution", 1, kind=int))
        seed = _number(run, "seed", "run", 0, kind=int) & _SEED_MASK
        noise = None
        if "noise" in doc:
            noise = _noise_from(doc["noise"], seed)
        init = cls._initial_state_block(doc.get("initial_state", {}), grid)
        cfg = cls(raw=doc, grid=grid, hamiltonian=ham, initial_state=init, noise=noise,
                  evolution=evo, mode=mode, output_dir=run.get("output_dir"), seed=seed, run=run)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(doc)

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(text)

    @staticmethod
    def _initial_state_block(block, grid):
        kind = block.get("kind", "gaussian")
        if kind not in ("gaussian", "cat"):
            raise ConfigError("initial_state.kind must be 'gaussian' or 'cat'")
        default_sigma = math.sqrt(grid.hbar / 2)
        out = {"kind": kind,
               "x0": _number(block, "x0", "initial_state", 0.0),
               "p0": _number(block, "p0", "initial_state", 0.0),
               "sigma_x": _number(block, "sigma_x", "initial_state", default_sigma)}
        if kind == "cat":
            out["separation"] = _number(block, "separation", "initial_state")
            out["phase"] = _number(block, "phase", "initial_state", 0.0)
        return out

    # -- derived objects ---------------------------------------------------
    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None) -> "ScenarioConfig":
        doc = copy.deepcopy(self.raw)
        if seed is not None:
            doc["run"]["seed"] = int(seed)
        if output_dir is not None:
            doc["run"]["output_dir"] = str(output_dir)
        return ScenarioConfig.from_dict(doc)

    def with_diffusion(self, diffusion_d: float) -> "ScenarioConfig":
        doc = copy.deepcopy(self.raw)
        doc.setdefault("noise", {})["kernel"] = "white"
        doc["noise"]["diffusion_d"] = float(diffusion_d)
        doc["noise"].pop("variance_nu0", None)
        doc["run"]["mode"] = doc["run"].get("scan", {}).get("solver", "ensemble")
        doc["run"].pop("scan", None)
        return ScenarioConfig.from_dict(doc)

    def make_initial_state(self) -> WaveFunction:
        s = self.initial_state
        if s["kind"] == "cat":
            return make_cat_state(self.grid, s["separation"], s["sigma_x"], x_center=s["x0"],
                                  p0=s["p0"], phase=s["phase"])
        return make_gaussian_state(self.grid, s["x0"], s["p0"], s["sigma_x"])

    @property
    def coupling(self) -> CouplingFunction:
        return self.noise.coupling if self.noise is not None else CouplingFunction.position()

    @property
    def diffusion_d(self) -> float:
        if self.noise is None or self.noise.kernel != "white":
            return 0.0
        return self.noise.diffusion_d

    @property
    def check_dt(self) -> bool:
        return bool(self.run.get("check_dt", True))

    def validate(self):
        """Check every precondition that can be checked without running."""
        mode = self.mode
        if mode in ("ensemble", "master", "scan_d"):
            self.make_initial_state()
            if self.check_dt:
                check_time_step(self.grid, self.hamiltonian, self.evolution.dt)
        if mode in ("ensemble", "scan_d") and self.noise is None:
            raise ConfigError(f"mode {mode!r} needs a noise block")
        if mode == "ensemble" and self.noise.n_realizations < 2:
            raise ConfigError("an ensemble needs at least two realizations")
        if mode == "master" and self.noise is not None and self.noise.kernel != "white":
            raise ConfigError("the master equation needs a white-noise kernel")
        if mode == "scan_d":
            scan = self.run.get("scan")
            if not scan or "d_values" not in scan:
                raise ConfigError("scan_d needs run.scan.d_values")
            d = np.asarray(scan["d_values"], dtype=float)
            if d.ndim != 1 or d.size < 4:
                raise ConfigError("scan_d needs at least 4 d_values")
            if np.any(~np.isfinite(d)) or np.any(d <= 0):
                raise ConfigError("d_values must be positive and finite")
            if d.max() / d.min() < 8 * (1 - 1e-12):
                raise ConfigError("d_values must span at least a factor of 8")
            if scan.get("solver", "ensemble") not in ("ensemble", "master"):
                raise ConfigError("run.scan.solver must be 'ensemble' or 'master'")
        if mode == "io_oracle":
            oracle = self.run.get("oracle") or {}
            if not oracle and self.hamiltonian.kind != "inverted_oscillator":
                raise ConfigError("io_oracle needs run.oracle or an inverted_oscillator hamiltonian")
        if mode == "lyapunov" and not self.hamiltonian.has_kinetic:
            raise ConfigError("lyapunov mode needs a finite mass")
        for key in ("snapshot_times",):
            for ts in self.run.get(key, []) or []:
                if not 0 <= float(ts) <= self.evolution.t_max:
                    raise ConfigError(f"snapshot time {ts} outside [0, t_max]")
        nj = self.run.get("n_jobs", 1)
        if not isinstance(nj, int) or nj == 0:
            raise ConfigError("run.n_jobs must be a non-zero integer")

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def _noise_from(block: dict, seed: int) -> NoiseProcess:
    kernel = block.get("kernel", "white")
    coupling = block.get("coupling", "position")
    if coupling != "position":
        raise ConfigError("only the position coupling V(x)=x is configurable from JSON")
    n = _number(block, "n_realizations", "noise", 100, kind=int)
    if kernel == "white":
        if "variance_nu0" in block:
            raise ConfigError("variance_nu0 belongs to the flat kernel")
        return NoiseProcess.white(_number(block, "diffusion_d", "noise", 0.0), n, seed)
    if kernel == "flat":
        if "diffusion_d" in block:
            raise ConfigError("diffusion_d belongs to the white kernel")
        return NoiseProcess.flat(_number(block, "variance_nu0", "noise"), n, seed)
    raise ConfigError(f"noise.kernel must be 'white' or 'flat', got {kernel!r}")


def load_config(source: Any) -> ScenarioConfig:
    """Accept a path, a JSON string or a dict."""
    if isinstance(source, ScenarioConfig):
        return source
    if isinstance(source, dict):
        return ScenarioConfig.from_dict(_unwrap_manifest(source))
    text = str(source)
    if not text.lstrip().startswith("{"):
        try:
            text = Path(text).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return ScenarioConfig.from_dict(_unwrap_manifest(doc))


def _unwrap_manifest(doc):
    """A run manifest carries the full config under ``config``; rerun from it directly."""
    if isinstance(doc, dict) and "manifest_version" in doc and "config" in doc:
        return doc["config"]
    return doc
