"""Experiment pipelines: off-centre hole counterexample, measure study, barrier study."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from math import log

import numpy as np

from . import analysis, barriers
from .geometry import ConvexDomain, GeometryError, Grid, RingDomain
from .grid_solver import SolveOptions, SolverError, argmin_node, gradient_max_location, solve_hole_free, solve_ring
from .radial import ball_volume, boundary_scalings, profile_residual, solve_radial_ring
from .symfun import sigma_k

MODES = ("counterexample", "measure", "barrier")
GAP_RTOL = 1e-6


class ConfigError(ValueError):
    pass


def _default_measure() -> dict:
    return {
        "mode": "radial",
        "n": 4,
        "k": 2,
        "R": 1.0,
        "M": None,
        "eps_list": [0.1, 0.05, 0.025],
        "balls": [{"center": None, "radius": 0.5}],
        "tolerance": 0.02,
    }


def _default_barrier() -> dict:
    return {
        "radial_cases": [[5, 2], [4, 2], [3, 2], [2, 1], [6, 3], [4, 1]],
        "eps_list": [0.1, 0.05, 0.025],
        "R": 1.0,
        "M": 1.0,
        "grid": True,
    }


@dataclass
class ExperimentConfig:
    mode: str = "counterexample"
    domain: dict = field(default_factory=lambda: {"kind": "ball", "center": [0.0, 0.0], "radius": 1.0})
    k: int = 1
    hole: dict = field(default_factory=lambda: {"rule": "auto", "t": 0.5})
    eps_list: list = field(default_factory=lambda: [0.12, 0.08, 0.05])
    M: dict = field(default_factory=lambda: {"rule": "auto", "factor": 1.0})
    grid_h: list = field(default_factory=lambda: [1 / 128, 1 / 256])
    levels: int = 16
    eta_fractions: list = field(default_factory=lambda: [0.05, 0.1, 0.2])
    defect_threshold: float = 20.0
    gap_fraction: float = 0.25
    retain_fraction: float = 0.5
    solver: dict = field(default_factory=dict)
    measure: dict = field(default_factory=_default_measure)
    barrier: dict = field(default_factory=_default_barrier)
    out: str | None = None
    workers: int = 1
    write_fields: bool = True

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        if "measure" in data:
            cfg.measure = {**_default_measure(), **data["measure"]}
        if "barrier" in data:
            cfg.barrier = {**_default_barrier(), **data["barrier"]}
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        eps = [float(e) for e in self.eps_list]
        if not eps or any(a <= b for a, b in zip(eps, eps[1:])):
            raise ConfigError("eps_list must be non-empty and strictly decreasing")
        if not self.grid_h or any(h <= 0 for h in self.grid_h):
            raise ConfigError("grid_h must contain positive spacings")
        if self.mode in ("counterexample", "barrier") and min(eps) < 2 * max(self.grid_h):
            raise ConfigError("every eps must be at least 2h")
        if self.levels < 2:
            raise ConfigError("levels must be >= 2")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.hole.get("rule") not in ("auto", "explicit", "minimizer"):
            raise ConfigError("hole.rule must be auto, explicit or minimizer")
        if self.hole["rule"] == "auto" and not 0 < self.hole.get("t", 0.5) < 1:
            raise ConfigError("hole.t must lie in (0, 1)")
        if self.M.get("rule") not in ("auto", "explicit"):
            raise ConfigError("M.rule must be auto or explicit")
        if self.M["rule"] == "auto" and self.M.get("factor", 1.0) < 1.0:
            raise ConfigError("auto M factor must be >= 1")
        dim = len(self.domain.get("center", ()))
        if dim not in (2, 3):
            raise ConfigError("grid pipelines support d = 2 or 3")
        if not 1 <= self.k <= dim:
            raise ConfigError("k must satisfy 1 <= k <= d")
        try:
            self.outer()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad domain {self.domain!r}: {exc}") from exc

    def outer(self) -> ConvexDomain:
        d = dict(self.domain)
        kind = d.pop("kind", "ball")
        allowed = {"ball": {"center", "radius"}, "ellipsoid": {"center", "semi_axes"}, "p_ball": {"center", "radius", "p"}}
        if kind in allowed and set(d) - allowed[kind]:
            raise ConfigError(f"unknown keys {sorted(set(d) - allowed[kind])} for domain kind {kind!r}")
        if kind == "ball":
            return ConvexDomain.ball(d["center"], d["radius"])
        if kind == "ellipsoid":
            return ConvexDomain.ellipsoid(d["center"], d["semi_axes"])
        if kind == "p_ball":
            return ConvexDomain.p_ball(d["center"], d["radius"], d["p"])
        raise ConfigError(f"unknown domain kind {kind!r}")

    def solve_options(self) -> SolveOptions:
        return SolveOptions(**self.solver)


def _map(fn, items, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _interp(field_, x) -> float:
    return float(analysis._interp(np.nan_to_num(field_.values, nan=0.0), field_.grid, np.atleast_2d(x))[0])


def _grid_for(outer: ConvexDomain, h: float) -> Grid:
    return Grid.covering(outer, h)


# ---------------------------------------------------------------------------
# counterexample


def place_hole(cfg: ExperimentConfig, outer: ConvexDomain, psi, y: np.ndarray) -> np.ndarray:
    rule = cfg.hole["rule"]
    if rule == "minimizer":
        return y.copy()
    if rule == "explicit":
        return np.asarray(cfg.hole["center"], dtype=float)
    far = outer.farthest_boundary_point(y)
    return y + cfg.hole.get("t", 0.5) * (far - y)


def choose_depth(cfg: ExperimentConfig, outer: ConvexDomain, psi_min: float, x0, n: int, k: int) -> tuple[float, float]:
    M1 = barriers.choose_M1(psi_min, outer, n, k, center=x0)
    M = M1 * cfg.M.get("factor", 1.0) if cfg.M["rule"] == "auto" else float(cfg.M["value"])
    if cfg.M["rule"] == "auto":
        # both requirements on the depth, checked rather than trusted
        bdry = outer.boundary_samples
        assert M > -psi_min
        assert np.all(barriers.lower_barrier(bdry, 1e-300, M, n, k, x0) <= 0)
    return float(M), float(M1)


def _segment_tests(ef, x0, y, levels) -> list:
    out = []
    for lam in levels:
        if not -ef.M <= lam <= 0:
            out.append({"level": float(lam), "defect": None, "normalized": None, "worst_point": None})
            continue
        d, p = analysis.segment_defect(ef, x0, y, lam)
        out.append({"level": float(lam), "defect": d, "normalized": d / ef.M, "worst_point": p})
    return out


def _solve_and_test(cfg, outer, psi, h, eps, x0, y, M, levels_extra, n):
    """One ring solve plus every detector; errors are recorded, not raised."""
    k = cfg.k
    entry = {"eps": float(eps), "h": float(h)}
    try:
        ring = RingDomain(outer, tuple(x0), eps)
        u, rep = solve_ring(ring, _grid_for(outer, h), M, k, cfg.solve_options(), psi=psi)
    except (SolverError, GeometryError) as exc:
        entry.update({"status": "failed", "error": f"{type(exc).__name__}: {exc}"})
        return entry, None, None
    ef = analysis.extend_utilde(u)
    qrep = analysis.quasiconvexity_report(ef, cfg.levels, cfg.defect_threshold, extra_levels=levels_extra)
    seg = _segment_tests(ef, x0, y, levels_extra)
    est = analysis.verify_estimates(u, psi)
    loc, cls = gradient_max_location(u)
    i = qrep.worst_index
    candidates = [(qrep.defects[i], qrep.levels[i], "level_scan", qrep.witnesses[i])]
    candidates += [(s["defect"], s["level"], "segment_x0_y", {"worst_point": s["worst_point"]}) for s in seg if s["defect"] is not None]
    best = max(candidates, key=lambda c: c[0])
    entry.update(
        {
            "status": "converged",
            "solve": rep.to_dict(),
            "convexity": qrep.to_dict(),
            "segment_x0_y": seg,
            "estimates": est,
            "gradient_max_class": cls,
            "max_defect": float(best[0]),
            "max_defect_normalized": float(best[0] / M),
            "max_defect_level": float(best[1]),
            "max_defect_source": best[2],
            "max_defect_witness": best[3],
            "exceeds_threshold": bool(best[0] / M > cfg.defect_threshold * h),
        }
    )
    return entry, u, ef


def run_counterexample(cfg: ExperimentConfig) -> tuple[dict, dict]:
    """Hole-free solve, hole placement, ring solves over eps, detectors, verdict.

    Returns the report and a dict of fields to dump.
    """
    outer = cfg.outer()
    n = outer.dim
    k = cfg.k
    opts = cfg.solve_options()
    h0 = float(cfg.grid_h[0])
    psi = solve_hole_free(outer, _grid_for(outer, h0), k, opts)
    yi = argmin_node(psi)
    y = psi.grid.node_coord(yi)
    M0 = -float(psi.values[yi])
    x0 = place_hole(cfg, outer, psi, y)
    psi_x0 = _interp(psi, x0)
    gap = cfg.gap_fraction * M0
    if cfg.hole["rule"] != "minimizer" and psi_x0 < -M0 + gap * (1 - GAP_RTOL):
        raise ConfigError(f"hole centre too deep: psi(x0)={psi_x0:.6g} < -M0+gap={-M0 + gap:.6g}")
    M, M1 = choose_depth(cfg, outer, -M0, x0, n, k)
    etas = [f * (psi_x0 + M0) for f in cfg.eta_fractions]
    extra = [-M0 + e for e in etas if e > 0]

    def coarse(eps):
        return _solve_and_test(cfg, outer, psi, h0, eps, x0, y, M, extra, n)

    results = _map(coarse, cfg.eps_list, cfg.workers)
    per_eps = [r[0] for r in results]
    fields_out = {f"psi_h{_tag(h0)}": psi}
    levelsets = {}
    for (entry, u, ef), eps in zip(results, cfg.eps_list):
        if u is None:
            continue
        fields_out[f"u_eps{_tag(eps)}_h{_tag(h0)}"] = u
        if outer.dim == 2:
            lam = entry["max_defect_level"]
            levelsets[f"u_eps{_tag(eps)}_h{_tag(h0)}_level"] = (lam, analysis.level_set_polylines(ef, lam))

    flagged = [e for e in per_eps if e.get("exceeds_threshold")]
    refinement = None
    verdict = "not detected"
    detection = None
    if flagged:
        best = max(flagged, key=lambda e: e["max_defect_normalized"])
        detection = {k_: best[k_] for k_ in ("eps", "max_defect", "max_defect_normalized", "max_defect_level", "max_defect_witness")}
        verdict = "inconclusive"
        if len(cfg.grid_h) > 1:
            h1 = float(cfg.grid_h[1])
            psi1 = solve_hole_free(outer, _grid_for(outer, h1), k, opts)
            lam = best["max_defect_level"]
            entry1, u1, ef1 = _solve_and_test(cfg, outer, psi1, h1, best["eps"], x0, y, M, extra + [lam], n)
            if u1 is not None:
                d_lvl, wit = analysis.convexity_defect(ef1, lam)
                d_seg, _ = analysis.segment_defect(ef1, x0, y, lam)
                d1 = max(d_lvl, d_seg)
                retained = d1 / best["max_defect"] if best["max_defect"] > 0 else 0.0
                confirmed = bool(d1 / M > cfg.defect_threshold * h1 and retained >= cfg.retain_fraction)
                refinement = {
                    "h": h1,
                    "eps": best["eps"],
                    "level": lam,
                    "defect": d1,
                    "defect_normalized": d1 / M,
                    "retained_fraction": retained,
                    "confirmed": confirmed,
                    "solve": entry1["solve"],
                    "estimates_pass": entry1["estimates"]["pass"],
                    "gradient_max_class": entry1["gradient_max_class"],
                }
                if confirmed:
                    verdict = "detected"
            else:
                refinement = {"h": h1, "eps": best["eps"], "status": "failed", "error": entry1["error"]}
    report = {
        "psi": {"minimizer": y.tolist(), "minimizer_index": list(yi), "min_value": -M0, "solve": psi.report.to_dict()},
        "hole_center": x0.tolist(),
        "psi_at_hole_center": psi_x0,
        "gap": gap,
        "M": M,
        "M1": M1,
        "k": k,
        "n": n,
        "eta": etas,
        "eta_levels": extra,
        "threshold_h_units": cfg.defect_threshold,
        "per_eps": per_eps,
        "detection": detection,
        "refinement": refinement,
        "verdict": verdict,
        "gaps": [e["eps"] for e in per_eps if e["status"] != "converged"],
    }
    return report, {"fields": fields_out, "levelsets": levelsets}


def _tag(x: float) -> str:
    return f"{x:.6g}".replace(".", "p").replace("-", "m")


# ---------------------------------------------------------------------------
# measure study


def richardson(eps: list, values: list) -> dict:
    """Extrapolate to eps -> 0 from the last three points, estimating the order."""
    if len(values) < 2:
        return {"limit": float(values[-1]), "order": None}
    if len(values) == 2:
        return {"limit": float(values[-1]), "order": None}
    (e1, e2, e3), (m1, m2, m3) = eps[-3:], values[-3:]
    d1, d2 = m1 - m2, m2 - m3
    q = e2 / e3
    if d1 == 0 or d2 == 0 or d1 * d2 < 0:
        return {"limit": float(m3), "order": None}
    p = log(abs(d1 / d2)) / log(e1 / e2)
    limit = m3 - d2 / (q**p - 1.0)
    return {"limit": float(limit), "order": float(p)}


def _monotone(values: list) -> bool:
    d = np.diff(values)
    return bool(np.all(d < 0) or np.all(d > 0)) and bool(np.all(np.abs(d[1:]) < np.abs(d[:-1])))


def run_measure_study(cfg: ExperimentConfig) -> dict:
    mc = cfg.measure
    eps_list = [float(e) for e in mc["eps_list"]]
    if mc["mode"] == "radial":
        n, k, R = int(mc["n"]), int(mc["k"]), float(mc["R"])
        psi_min = -0.5 * barriers.quad_coeff(n, k) * R**2
        M = mc["M"] or barriers.choose_M1(psi_min, ConvexDomain.ball(np.zeros(2), R), n, k)
        profiles = _map(lambda e: solve_radial_ring(e, R, M, n, k), eps_list, cfg.workers)
        asserted = 2 * k <= n
        balls = []
        for b in mc["balls"]:
            r = float(b["radius"])
            vals = [analysis.hessian_measure(p, None, r) for p in profiles]
            split = [p.measure_split(r) for p in profiles]
            vol = ball_volume(n, r)
            ext = richardson(eps_list, vals)
            rel = abs(ext["limit"] - vol) / vol
            balls.append(
                {
                    "center": [0.0] * n,
                    "radius": r,
                    "eps": eps_list,
                    "measures": vals,
                    "measures_split": split,
                    "volume": vol,
                    "extrapolated": ext["limit"],
                    "order": ext["order"],
                    "relative_error": rel,
                    "monotone": _monotone(vals),
                    "assertion": "asserted" if asserted else "report_only",
                    "pass": bool(rel <= mc["tolerance"] and _monotone(vals)) if asserted else None,
                }
            )
        return {"mode": "radial", "n": n, "k": k, "R": R, "M": float(M), "balls": balls}
    return _grid_measure_study(cfg, eps_list)


def _grid_measure_study(cfg: ExperimentConfig, eps_list) -> dict:
    mc = cfg.measure
    outer = cfg.outer()
    k = int(mc.get("k", cfg.k))
    d = outer.dim
    h = float(cfg.grid_h[0])
    psi = solve_hole_free(outer, _grid_for(outer, h), k, cfg.solve_options())
    centre = np.asarray(outer.center, dtype=float)
    M = mc["M"] or barriers.choose_M1(float(np.nanmin(psi.values)), outer, d, k, center=centre)

    def one(eps):
        u, _ = solve_ring(RingDomain(outer, tuple(centre), eps), _grid_for(outer, h), M, k, cfg.solve_options(), psi=psi)
        return analysis.extend_utilde(u)

    efs = _map(one, eps_list, cfg.workers)
    balls = []
    for b in mc["balls"]:
        c = centre if b.get("center") is None else np.asarray(b["center"], float)
        r = float(b["radius"])
        vals = [analysis.hessian_measure(ef, c, r, k) for ef in efs]
        vol = ball_volume(d, r)
        ext = richardson(eps_list, vals)
        balls.append(
            {
                "center": c.tolist(),
                "radius": r,
                "eps": eps_list,
                "measures": vals,
                "volume": vol,
                "extrapolated": ext["limit"],
                "order": ext["order"],
                "relative_error": abs(ext["limit"] - vol) / vol,
                "monotone": _monotone(vals) if len(vals) > 2 else None,
                "assertion": "report_only",
                "pass": None,
            }
        )
    return {"mode": "grid", "n": d, "k": k, "h": h, "M": float(M), "balls": balls}


# ---------------------------------------------------------------------------
# barrier study


def barrier_identities(n: int, k: int, eps: float = 0.05, M: float = 1.0, R: float = 1.0, n_radii: int = 20) -> dict:
    """sigma_k of the radial Hessian spectra of both barriers at log-spaced radii."""
    radii = np.geomspace(eps * 1.01, 2 * R, n_radii)
    outer = ConvexDomain.ball(np.zeros(2), R)
    phi = barriers.upper_barrier(eps, M, n, k, outer)
    low_err, phi_err = 0.0, 0.0
    for r in radii:
        _, g1, g2 = barriers.lower_barrier_radial(r, eps, M, n, k)
        low_err = max(low_err, abs(sigma_k((float(g2),) + (float(g1) / r,) * (n - 1), k) - 1.0))
        _, p1, p2 = phi.radial(r)
        # relative to the size of the individual terms
        scale = max(abs(float(p2)), abs(float(p1)) / r) ** k
        phi_err = max(phi_err, abs(sigma_k((float(p2),) + (float(p1) / r,) * (n - 1), k)) / max(scale, 1.0))
    return {
        "n": n,
        "k": k,
        "case": barriers.phi_case(n, k),
        "lower_max_error": float(low_err),
        "phi_max_error": float(phi_err),
        "pass": bool(low_err <= 1e-12 and phi_err <= 1e-10),
    }


def radial_barrier_family(n: int, k: int, eps_list, R: float = 1.0, M: float | None = None) -> dict:
    psi_min = -0.5 * barriers.quad_coeff(n, k) * R**2
    outer = ConvexDomain.ball(np.zeros(2), R)
    M = max(M or 0.0, barriers.choose_M1(psi_min, outer, n, k))
    rows = []
    for eps in eps_list:
        prof = solve_radial_ring(eps, R, M, n, k)
        sc = boundary_scalings(prof)
        r = np.linspace(eps, R, 200)
        u = prof.u(r)
        lower = barriers.lower_barrier_radial(r, eps, M, n, k)[0]
        phi = barriers.upper_barrier(eps, M, n, k, outer)
        upper = phi.radial(r)[0]
        slack = 1e-9 * M
        rows.append(
            {
                "eps": float(eps),
                "a": float(prof.a),
                **{key: (float(v) if not isinstance(v, str) else v) for key, v in sc.items()},
                "sandwich": bool(np.all(lower <= u + slack) and np.all(u <= upper + slack)),
                "residual_max": float(np.max(np.abs(profile_residual(prof, r[1:-1])))),
            }
        )
    scaled = [row["scaled_gradient"] for row in rows]
    variation = (max(scaled) - min(scaled)) / max(scaled)
    return {
        "n": n,
        "k": k,
        "M": float(M),
        "case": barriers.phi_case(n, k),
        "rows": rows,
        "scaled_gradient_variation": float(variation),
        "scaling_pass": bool(variation < 0.15),
    }


def run_barrier_study(cfg: ExperimentConfig) -> dict:
    bc = cfg.barrier
    eps_list = [float(e) for e in bc["eps_list"]]
    identities = [barrier_identities(n, k) for n, k in bc["radial_cases"]]
    families = [radial_barrier_family(n, k, eps_list, bc["R"], bc.get("M")) for n, k in bc["radial_cases"]]
    grid = []
    if bc.get("grid", True):
        outer = cfg.outer()
        d = outer.dim
        centre = np.asarray(outer.center, dtype=float)
        for h in cfg.grid_h:
            psi = solve_hole_free(outer, _grid_for(outer, h), cfg.k, cfg.solve_options())
            M = barriers.choose_M1(float(np.nanmin(psi.values)), outer, d, cfg.k, center=centre)
            x0 = place_hole(cfg, outer, psi, psi.grid.node_coord(argmin_node(psi)))
            M = max(M, barriers.choose_M1(float(np.nanmin(psi.values)), outer, d, cfg.k, center=x0))

            def one(eps, h=h, psi=psi, M=M, x0=x0):
                u, rep = solve_ring(RingDomain(outer, tuple(x0), eps), _grid_for(outer, h), M, cfg.k, cfg.solve_options(), psi=psi)
                est = analysis.verify_estimates(u, psi)
                return {"h": float(h), "eps": float(eps), "M": float(M), "solve": rep.to_dict(), **est}

            grid.extend(_map(one, cfg.eps_list, cfg.workers))
    matrix = {
        "identities": all(r["pass"] for r in identities),
        "grid_estimates": all(r["pass"] for r in grid) if grid else None,
    }
    stability = _gradient_constant_stability(grid)
    return {"identities": identities, "radial_families": families, "grid": grid, "gradient_constant_stability": stability, "pass_matrix": matrix}


def _gradient_constant_stability(rows: list) -> list:
    """Relative change of the interior gradient constant between successive spacings."""
    by_eps = {}
    for r in rows:
        by_eps.setdefault(r["eps"], []).append((r["h"], r["interior_gradient_constant"]["value"]))
    out = []
    for eps, vals in sorted(by_eps.items(), reverse=True):
        vals.sort(reverse=True)
        for (h1, c1), (h2, c2) in zip(vals, vals[1:]):
            change = abs(c2 - c1) / c1
            out.append({"eps": eps, "h": [h1, h2], "constants": [c1, c2], "relative_change": change, "pass": bool(change <= 0.25)})
    return out


def run(cfg: ExperimentConfig) -> tuple[dict, dict]:
    """Dispatch on ``cfg.mode``; returns (results, dumps)."""
    if cfg.mode == "counterexample":
        return run_counterexample(cfg)
    if cfg.mode == "measure":
        return run_measure_study(cfg), {"fields": {}, "levelsets": {}}
    return run_barrier_study(cfg), {"fields": {}, "levelsets": {}}
