"""Command line entry point ``echo-sim``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import IOEchoParams, io_echo_exact
from .config import load_config
from .exceptions import ConfigError, EchoSimError
from .io import atomic_write_text
from .observables import DecayTrace
from .runner import run_scenario

EXIT_OK = 0


def _error(exc: EchoSimError) -> int:
    print(json.dumps({"status": "error", "category": exc.category, "exit_code": exc.exit_code,
                      "message": str(exc)}), file=sys.stderr)
    return exc.exit_code


def _report(result) -> int:
    doc = {"status": "ok" if result.exit_code == 0 else "error", "exit_code": result.exit_code,
           "output_dir": str(result.output_dir), "files": sorted(Path(f).name for f in result.files)}
    if result.error:
        doc["error"] = result.error
        print(json.dumps(doc), file=sys.stderr)
    else:
        print(json.dumps(doc))
    return result.exit_code


def _run_config(args, expected_modes) -> int:
    cfg = load_config(args.config)
    if cfg.mode not in expected_modes:
        raise ConfigError(f"'{args.command}' expects run.mode in {sorted(expected_modes)}, got {cfg.mode!r}")
    return _report(run_scenario(cfg, output_dir=args.out, seed=args.seed))


def cmd_run(args) -> int:
    return _run_config(args, {"ensemble", "master", "io_oracle", "lyapunov", "scan_d"})


def cmd_scan(args) -> int:
    return _run_config(args, {"scan_d"})


def cmd_lyapunov(args) -> int:
    cfg = load_config(args.config)
    doc = cfg.to_dict()
    doc["run"]["mode"] = "lyapunov"
    doc["run"].pop("scan", None)
    return _report(run_scenario(doc, output_dir=args.out, seed=args.seed))


def cmd_oracle(args) -> int:
    if args.t_max < 0 or args.dt <= 0:
        raise ConfigError("need t_max >= 0 and dt > 0")
    params = IOEchoParams.from_r(args.lambda_, args.r)
    n = int(round(args.t_max / args.dt))
    times = np.arange(n + 1) * args.dt
    m = io_echo_exact(params, times)
    trace = DecayTrace(times, m, np.zeros_like(m))
    text = trace.to_csv()
    if args.out:
        out = Path(args.out)
        atomic_write_text(out / "trace.csv", text)
        print(json.dumps({"status": "ok", "exit_code": 0, "output_dir": str(out), "files": ["trace.csv"]}))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="echo-sim", description="Loschmidt echo and purity decay simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--out", default=None, help="override run.output_dir")

    p = sub.add_parser("run", help="run a scenario config (or a manifest.json)")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("scan", help="diffusion scan (mode scan_d)")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("lyapunov", help="Benettin exponent of the configured Hamiltonian")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_lyapunov)

    p = sub.add_parser("oracle", help="exact inverted-oscillator echo")
    p.add_argument("--lambda", dest="lambda_", type=float, required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--t-max", dest="t_max", type=float, required=True)
    p.add_argument("--dt", type=float, default=0.01, help="sampling interval (default 0.01)")
    common(p)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors, which matches config-invalid
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EchoSimError as exc:
        return _error(exc)


if __name__ == "__main__":
    sys.exit(main())
