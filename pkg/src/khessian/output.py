"""Byte-deterministic report, field and level-set writers."""
from __future__ import annotations

import csv
import json
import math
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import CLASS_NAMES, EXTERIOR

SCHEMA_VERSION = "1"


class OutputError(OSError):
    pass


def load_schema() -> dict:
    text = resources.files("khessian").joinpath("schema/report_v1.json").read_text()
    return json.loads(text)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None, tuples to lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def report_document(mode: str, config: dict, results: dict) -> dict:
    return _clean({"schema_version": SCHEMA_VERSION, "mode": mode, "config": config, "results": results})


def dumps(document: dict) -> str:
    return json.dumps(document, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _fmt(v: float) -> str:
    return "nan" if not math.isfinite(v) else repr(float(v))


def write_field_csv(path: Path, field) -> None:
    """One row per node in lexicographic index order; exterior values written as nan."""
    g = field.grid
    d = g.dim
    header = [f"i{a}" for a in range(d)] + ["x", "y", "z"][:d] + ["value", "node_class"]
    idx = np.indices(g.shape).reshape(d, -1).T
    coords = g.coords.reshape(-1, d)
    vals = np.where(g.node_class == EXTERIOR, np.nan, field.values).ravel()
    cls = g.node_class.ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in range(idx.shape[0]):
            w.writerow([*idx[row].tolist(), *map(_fmt, coords[row]), _fmt(vals[row]), CLASS_NAMES[int(cls[row])]])


def write_polylines_csv(path: Path, level: float, polylines) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["polyline", "vertex", "x", "y", "level", "closed"])
        for pid, (xy, closed) in enumerate(polylines):
            for vid, (x, y) in enumerate(xy):
                w.writerow([pid, vid, _fmt(x), _fmt(y), _fmt(level), int(closed)])


def read_polylines_csv(path) -> list:
    """Inverse of :func:`write_polylines_csv`: list of (N x 2 array, closed flag)."""
    rows = list(csv.DictReader(open(path)))
    out = {}
    for r in rows:
        out.setdefault(int(r["polyline"]), ([], bool(int(r["closed"]))))[0].append((float(r["x"]), float(r["y"])))
    return [(np.asarray(v[0]), v[1]) for _, v in sorted(out.items())]


def emit_outputs(out_dir, mode: str, config: dict, results: dict, dumps_: dict | None = None, write_fields: bool = True) -> Path:
    """Write report.json, fields/*.csv and levelsets/*.csv under ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        report_path = out / "report.json"
        report_path.write_text(dumps(report_document(mode, config, results)))
        dumps_ = dumps_ or {}
        if write_fields and dumps_.get("fields"):
            (out / "fields").mkdir(exist_ok=True)
            for name, f in sorted(dumps_["fields"].items()):
                write_field_csv(out / "fields" / f"{name}.csv", f)
        if dumps_.get("levelsets"):
            (out / "levelsets").mkdir(exist_ok=True)
            for name, (level, lines) in sorted(dumps_["levelsets"].items()):
                write_polylines_csv(out / "levelsets" / f"{name}.csv", level, lines)
    except OSError as exc:
        raise OutputError(f"could not write outputs under {out}: {exc}") from exc
    return report_path
