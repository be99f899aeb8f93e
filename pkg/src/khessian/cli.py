"""Command-line entry point: ``khessian --mode counterexample --config run.json --out results/``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .experiments import ConfigError, ExperimentConfig, run
from .geometry import GeometryError
from .grid_solver import SolverError
from .output import OutputError, emit_outputs
from .radial import NoAdmissibleConstant


def _float_list(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="khessian", description=__doc__)
    p.add_argument("--config", help="JSON experiment configuration")
    p.add_argument("--out", help="output directory (overrides config 'out')")
    p.add_argument("--mode", choices=["counterexample", "measure", "barrier"])
    p.add_argument("--grid-h", type=_float_list, help="comma-separated grid spacings, coarse first")
    p.add_argument("--eps-list", type=_float_list, help="comma-separated decreasing hole radii")
    p.add_argument("--k", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    for key in ("out", "mode", "k", "workers"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    if args.grid_h is not None:
        data["grid_h"] = args.grid_h
    if args.eps_list is not None:
        data["eps_list"] = args.eps_list
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if not cfg.out:
            raise ConfigError("no output directory: pass --out or set 'out' in the config")
        results, dumps_ = run(cfg)
        # the output location is not part of the experiment, so reruns elsewhere compare byte for byte
        recorded = {k: v for k, v in cfg.to_dict().items() if k != "out"}
        path = emit_outputs(cfg.out, cfg.mode, recorded, results, dumps_, cfg.write_fields)
    except (ConfigError, OSError, json.JSONDecodeError, TypeError, OutputError) as exc:
        print(f"configuration/output error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, GeometryError, NoAdmissibleConstant) as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    summary = results.get("verdict") if cfg.mode == "counterexample" else "completed"
    print(f"{cfg.mode}: {summary} -> {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
