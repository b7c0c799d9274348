"""Scenario orchestration: run a configured mode and persist its artifacts."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analytic import IOEchoParams, chaotic_sea_lyapunov, io_echo_exact
from .config import ScenarioConfig, load_config
from .exceptions import ConfigError, EchoSimError, FitError, NumericAbort
from .io import atomic_write_text, write_json, write_wigner
from .noise import run_ensemble
from .observables import (DecayTrace, RateFit, echo_curvature_ratio, fit_decay_rates,
                          log_slope, sigma_bar)
from .phasespace import density_from_pure, purity, wigner_transform
from .propagators import evolve_master, iter_unitary

log = logging.getLogger(__name__)

SCAN_COLUMNS = ("d", "rate_lyapunov", "rate_fgr", "rate_err", "lambda_ref")
PLATEAU_SPREAD = 0.25


@dataclass
class RunResult:
    exit_code: int
    output_dir: Optional[Path]
    files: list = field(default_factory=list)
    trace: Optional[DecayTrace] = None
    fit: Optional[RateFit] = None
    summary: dict = field(default_factory=dict)
    error: Optional[dict] = None


# -- helpers -----------------------------------------------------------------

def _reference_spread(cfg: ScenarioConfig, psi0):
    """Time-averaged ``Var x`` of the unperturbed state and the matching fringe wave vector."""
    var = [psi.var_x() for _, psi in iter_unitary(psi0, cfg.hamiltonian, cfg.evolution,
                                                  check_dt=cfg.check_dt)]
    mean_var = float(np.mean(var))
    return mean_var, math.sqrt(2 * mean_var) / cfg.grid.hbar


def _snapshot_times(cfg):
    return [float(t) for t in (cfg.run.get("snapshot_times") or [])]


def _write_snapshots(out: Path, snapshots: dict, files: list):
    for t, (rho0, rho_bar) in sorted(snapshots.items()):
        files.append(write_wigner(out, t, wigner_transform(rho_bar), "rho_bar"))
        files.append(write_wigner(out, t, wigner_transform(rho0), "rho_0"))


def _fit(cfg: ScenarioConfig, trace: DecayTrace, k_p_hint: Optional[float]) -> RateFit:
    window = cfg.run.get("fit_window")
    return fit_decay_rates(trace, cfg.diffusion_d, k_p_hint,
                           window=tuple(window) if window else None, random_state=cfg.seed)


def purity_rate(trace: DecayTrace, window) -> float:
    """``-d ln(purity)/dt`` over ``window`` by a least-squares log slope."""
    if trace.purity is None:
        raise ConfigError("trace has no purity column")
    return log_slope(trace.times, trace.purity, window)


# -- per-mode computations -----------------------------------------------------

def compute_ensemble_trace(cfg: ScenarioConfig, snapshots: bool = True):
    psi0 = cfg.make_initial_state()
    run = run_ensemble(psi0, cfg.hamiltonian, cfg.noise, cfg.evolution,
                       compute_purity=bool(cfg.run.get("compute_purity", True)),
                       compute_sigma=bool(cfg.run.get("compute_sigma", False)),
                       snapshot_times=_snapshot_times(cfg) if snapshots else (),
                       block_size=cfg.run.get("block_size"), n_jobs=cfg.run.get("n_jobs", 1),
                       check_dt=cfg.check_dt)
    return run.trace, run.snapshots


def compute_master_trace(cfg: ScenarioConfig, snapshots: bool = True):
    """Echo and purity from the master equation; the echo is ``<psi_0(t)| rho(t) |psi_0(t)>``."""
    psi0 = cfg.make_initial_state()
    grid = cfg.grid
    refs = [psi.amplitudes for _, psi in iter_unitary(psi0, cfg.hamiltonian, cfg.evolution,
                                                      check_dt=cfg.check_dt)]
    times = cfg.evolution.times
    n_t = len(times)
    want_sigma = bool(cfg.run.get("compute_sigma", False))
    snap_idx = {int(np.argmin(np.abs(times - ts))) for ts in (_snapshot_times(cfg) if snapshots else [])}
    m = np.empty(n_t)
    pur = np.empty(n_t)
    sb = np.full(n_t, np.nan) if want_sigma else None
    se = np.full(n_t, np.nan) if want_sigma else None
    snaps = {}
    counter = iter(range(n_t))

    def on_checkpoint(t, rho):
        i = next(counter)
        ref = refs[i]
        m[i] = float(np.real(ref.conj() @ rho.elements @ ref)) * grid.dx ** 2
        pur[i] = purity(rho)
        if want_sigma or i in snap_idx:
            rho0 = density_from_pure(type(psi0)(grid, ref))
            if want_sigma:
                w0, wb = wigner_transform(rho0), wigner_transform(rho)
                sb[i] = sigma_bar(wb)
                ratio = echo_curvature_ratio(w0, wb)
                se[i] = math.inf if ratio == 0 else 1 / math.sqrt(abs(ratio))
            if i in snap_idx:
                snaps[float(times[i])] = (rho0, rho)

    evolve_master(density_from_pure(psi0), cfg.hamiltonian, cfg.coupling, cfg.diffusion_d,
                  cfg.evolution, check_dt=cfg.check_dt, on_checkpoint=on_checkpoint)
    meta = {"solver": "master", "diffusion_d": cfg.diffusion_d}
    return DecayTrace(times, m, np.zeros(n_t), pur, sb, se, meta), snaps


def io_oracle_params(cfg: ScenarioConfig) -> IOEchoParams:
    oracle = cfg.run.get("oracle") or {}
    if oracle:
        if "lambda0" not in oracle or "r" not in oracle:
            raise ConfigError("run.oracle needs lambda0 and r")
        return IOEchoParams.from_r(float(oracle["lambda0"]), float(oracle["r"]))
    lam = cfg.hamiltonian.params["lambda0"]
    sigma_i = cfg.grid.hbar / (2 * cfg.initial_state["sigma_x"])
    return IOEchoParams.from_diffusion(lam, cfg.diffusion_d, sigma_i)


def compute_io_oracle_trace(cfg: ScenarioConfig) -> DecayTrace:
    params = io_oracle_params(cfg)
    times = cfg.evolution.times
    m = io_echo_exact(params, times)
    meta = {"solver": "io_oracle", "lambda0": params.lambda0, "r": params.r}
    return DecayTrace(times, m, np.zeros_like(m), metadata=meta)


def reference_lyapunov(cfg: ScenarioConfig) -> dict:
    """Benettin exponent around the initial state of ``cfg``."""
    opts = dict(cfg.run.get("lyapunov") or {})
    s = cfg.initial_state
    spread_x = opts.get("spread_x", s["sigma_x"])
    spread_p = opts.get("spread_p", cfg.grid.hbar / (2 * s["sigma_x"]))
    est = chaotic_sea_lyapunov(cfg.hamiltonian, s["x0"], s["p0"], spread_x, spread_p,
                               n_trajectories=int(opts.get("n_trajectories", 20)),
                               t_total=float(opts.get("t_total", 200.0)),
                               renorm_every=float(opts.get("renorm_every", 0.5)),
                               dt=float(opts.get("dt", 1e-3)), seed=cfg.seed)
    return {"lambda": est.lambda_, "stderr": est.stderr,
            "n_accepted": int(est.accepted.sum()), "n_trajectories": int(est.accepted.size),
            "per_trajectory": est.per_trajectory, "per_trajectory_stderr": est.per_trajectory_stderr,
            "initial_conditions": est.initial_conditions}


# -- scan ----------------------------------------------------------------------

def plateau_summary(d_values, rates) -> dict:
    """Plateau test on the larger-D half of the Lyapunov rates."""
    d = np.asarray(d_values, float)
    r = np.asarray(rates, float)
    order = np.argsort(d)
    upper = r[order][len(d) // 2:]
    if upper.size == 0 or not np.all(np.isfinite(upper)) or np.mean(upper) <= 0:
        return {"plateau_detected": False, "plateau_level": None, "plateau_spread": None}
    level = float(np.mean(upper))
    spread = float((upper.max() - upper.min()) / level)
    return {"plateau_detected": bool(spread < PLATEAU_SPREAD), "plateau_level": level,
            "plateau_spread": spread}


def _scan_point(cfg: ScenarioConfig, d: float, k_p_hint: float):
    sub = cfg.with_diffusion(d)
    if sub.mode == "master":
        trace, _ = compute_master_trace(sub, snapshots=False)
    else:
        trace, _ = compute_ensemble_trace(sub, snapshots=False)
    row = {"d": d, "trace": trace}
    try:
        fit = _fit(sub, trace, k_p_hint)
    except FitError as exc:
        row["error"] = {"category": exc.category, "message": str(exc), "exit_code": exc.exit_code}
        return row
    row["fit"] = fit
    if trace.purity is not None:
        try:
            row["purity_rate"] = purity_rate(trace, fit.fit_window)
        except FitError:
            row["purity_rate"] = None
    return row


def run_scan_d(cfg, output_dir=None) -> RunResult:
    """Scan the diffusion constant, fit each echo and tabulate the rates."""
    cfg = load_config(cfg)
    if cfg.mode != "scan_d":
        raise ConfigError("run_scan_d needs mode 'scan_d'")
    out = Path(output_dir or cfg.output_dir or ".")
    return _execute(cfg, out)


def _scan(cfg: ScenarioConfig, out: Path, files: list) -> RunResult:
    d_values = [float(v) for v in cfg.run["scan"]["d_values"]]
    psi0 = cfg.make_initial_state()
    _, k_p_hint = _reference_spread(cfg, psi0)
    try:
        lam = reference_lyapunov(cfg)
    except (FitError, NumericAbort) as exc:
        log.info("no reference Lyapunov exponent: %s", exc)
        lam = {"lambda": math.nan, "stderr": math.nan, "error": str(exc)}
    lambda_ref = lam["lambda"]

    n_jobs = cfg.run.get("n_jobs", 1)
    rows = []
    failure = None
    if n_jobs != 1:
        from joblib import Parallel, delayed
        try:
            rows = Parallel(n_jobs=n_jobs)(delayed(_scan_point)(cfg, d, k_p_hint) for d in d_values)
        except EchoSimError as exc:
            failure = exc
    else:
        for d in d_values:
            try:
                rows.append(_scan_point(cfg, d, k_p_hint))
            except EchoSimError as exc:
                failure = exc
                break
    done = {row["d"]: row for row in rows}
    lines = [",".join(SCAN_COLUMNS)]
    details = []
    lyap_rates = []
    for i, d in enumerate(d_values):
        row = done.get(d)
        fit = row.get("fit") if row else None
        lam_txt = repr(float(lambda_ref)) if math.isfinite(lambda_ref) else ""
        if fit is None:
            lines.append(f"{d!r},gap,gap,gap,{lam_txt}")
            lyap_rates.append(math.nan)
            details.append({"d": d, "gap": True,
                            "error": (row or {}).get("error") or
                            ({"category": failure.category, "message": str(failure)} if failure else None)})
            continue
        err = fit.rate_lyapunov_err if fit.rate_lyapunov > 0 else fit.rate_fgr_err
        lines.append(",".join([repr(d), repr(float(fit.rate_lyapunov)), repr(float(fit.rate_fgr)),
                               repr(float(err)), lam_txt]))
        lyap_rates.append(fit.rate_lyapunov)
        trace_name = f"trace_d{i:02d}.csv"
        atomic_write_text(out / trace_name, row["trace"].to_csv())
        files.append(out / trace_name)
        details.append({"d": d, "gap": False, "trace": trace_name, "fit": fit.to_dict(),
                        "purity_rate": row.get("purity_rate")})
    atomic_write_text(out / "scan.csv", "\n".join(lines) + "\n")
    files.append(out / "scan.csv")
    summary = plateau_summary(d_values, lyap_rates)
    summary.update({"lambda_ref": lambda_ref, "lambda_ref_stderr": lam.get("stderr"),
                    "k_p_hint": k_p_hint, "points": details,
                    "complete": all(not p["gap"] for p in details)})
    write_json(out / "scan.json", summary)
    files.append(out / "scan.json")
    if failure is not None:
        raise failure
    gaps = [p for p in details if p["gap"]]
    result = RunResult(0, out, files, summary=summary)
    if gaps:
        first = gaps[0]["error"] or {}
        result.exit_code = first.get("exit_code", FitError.exit_code)
        result.error = first
    return result


# -- entry point ---------------------------------------------------------------

def _single(cfg: ScenarioConfig, out: Path, files: list) -> RunResult:
    mode = cfg.mode
    snaps = {}
    if mode == "lyapunov":
        lam = reference_lyapunov(cfg)
        write_json(out / "lyapunov.json", lam)
        files.append(out / "lyapunov.json")
        return RunResult(0, out, files, summary={"lambda": lam["lambda"], "stderr": lam["stderr"]})
    if mode == "ensemble":
        trace, snaps = compute_ensemble_trace(cfg)
    elif mode == "master":
        trace, snaps = compute_master_trace(cfg)
    else:
        trace = compute_io_oracle_trace(cfg)
    atomic_write_text(out / "trace.csv", trace.to_csv())
    files.append(out / "trace.csv")
    _write_snapshots(out, snaps, files)
    result = RunResult(0, out, files, trace=trace, summary={"metadata": trace.metadata})
    if cfg.run.get("fit", False):
        hint = None
        if mode != "io_oracle" and cfg.diffusion_d > 0:
            _, hint = _reference_spread(cfg, cfg.make_initial_state())
        fit = _fit(cfg, trace, hint)
        write_json(out / "ratefit.json", fit.to_dict())
        files.append(out / "ratefit.json")
        result.fit = fit
    return result


def _execute(cfg: ScenarioConfig, out: Path) -> RunResult:
    out.mkdir(parents=True, exist_ok=True)
    files = []
    start = time.time()
    result = None
    error = None
    try:
        if cfg.mode == "scan_d":
            result = _scan(cfg, out, files)
        else:
            result = _single(cfg, out, files)
    except EchoSimError as exc:
        error = {"category": exc.category, "message": str(exc), "exit_code": exc.exit_code}
        result = RunResult(exc.exit_code, out, files, error=error)
    elapsed = time.time() - start
    doc = cfg.to_dict()
    doc["run"]["seed"] = cfg.seed
    doc["run"]["output_dir"] = str(out)
    manifest = {"manifest_version": 1, "code_version": __version__, "config": doc,
                "mode": cfg.mode, "seed": cfg.seed,
                "wall_clock": {"started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(start)),
                               "elapsed_s": elapsed},
                "status": "ok" if result.exit_code == 0 else "error",
                "exit_code": result.exit_code, "error": result.error,
                "files": sorted(p.name for p in map(Path, files))}
    write_json(out / "manifest.json", manifest)
    result.files = files + [out / "manifest.json"]
    return result


def run_scenario(config, output_dir=None, seed: Optional[int] = None) -> RunResult:
    """Run any mode.  Domain errors are caught and reported through ``exit_code``.

    Config errors are raised before any artifact is written.
    """
    cfg = load_config(config)
    if seed is not None or output_dir is not None:
        cfg = cfg.with_overrides(seed=seed, output_dir=output_dir)
    out = Path(cfg.output_dir or ".")
    return _execute(cfg, out)
