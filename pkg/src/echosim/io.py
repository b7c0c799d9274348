"""Atomic artifact writers: CSV traces, JSON documents and Wigner snapshots."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .phasespace import PhaseSpaceGrid, WignerFunction

WIGNER_DTYPE = "<f8"


def atomic_write_bytes(path, data: bytes):
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, doc):
    atomic_write_text(path, json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def snapshot_name(t: float) -> str:
    return f"wigner_{t:.6g}"


def write_wigner(directory, t: float, w: WignerFunction, label: str = "rho_bar") -> Path:
    """Store ``w.values`` as little-endian float64, C order ``[x, p]``, with a JSON sidecar."""
    directory = Path(directory)
    stem = snapshot_name(t) if label == "rho_bar" else f"{snapshot_name(t)}_{label}"
    values = np.ascontiguousarray(w.values, dtype=WIGNER_DTYPE)
    atomic_write_bytes(directory / f"{stem}.bin", values.tobytes())
    meta = {"t": float(t), "label": label, "shape": list(values.shape), "dtype": WIGNER_DTYPE,
            "order": "C", "axes": ["x", "p"], "grid": w.grid.as_dict(),
            "p_min": float(w.p[0]), "dp": float(w.grid.wigner_dp), "total": w.total()}
    write_json(directory / f"{stem}.json", meta)
    return directory / f"{stem}.bin"


def read_wigner(bin_path) -> WignerFunction:
    bin_path = Path(bin_path)
    meta = json.loads(bin_path.with_suffix(".json").read_text())
    g = meta["grid"]
    grid = PhaseSpaceGrid(g["n_points"], g["x_min"], g["x_max"], g["hbar"])
    values = np.frombuffer(bin_path.read_bytes(), dtype=meta["dtype"]).reshape(meta["shape"])
    return WignerFunction(grid, values.copy())
