"""Sublevel-set convexity, Hessian measures, mollification and estimate checks."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import ceil

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from . import barriers
from .geometry import EXTERIOR, HOLE, NEAR_INNER, NEAR_OUTER, RingDomain
from .grid_solver import GridField, gradient_max_location, hole_scaling_factor
from .radial import RadialProfile
from .symfun import char_coeffs_batch

MAX_PAIRS = 10_000


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ExtendedField:
    """u on the ring, -M on the closed hole, 0 (the outer datum) outside Omega_1."""

    base: GridField
    values: np.ndarray
    M: float

    @property
    def grid(self):
        return self.base.grid

    @property
    def h(self) -> float:
        return self.base.grid.h

    @property
    def inside(self) -> np.ndarray:
        return self.grid.node_class != EXTERIOR

    def value_quantum(self) -> float:
        """Largest value change across one cell of the ring solution."""
        g = self.base.gradients()
        return float(self.h * np.max(np.linalg.norm(g, axis=-1)))


def extend_utilde(field: GridField, ring: RingDomain | None = None) -> ExtendedField:
    ring = field.domain if ring is None else ring
    if field.M is None:
        raise AnalysisError("extension needs a ring solution with a hole depth M")
    vals = np.array(field.values, dtype=float)
    cls = field.grid.node_class
    vals[cls == HOLE] = -field.M
    vals[cls == EXTERIOR] = 0.0
    return ExtendedField(field, vals, float(field.M))


def extend_hole_free(field: GridField) -> ExtendedField:
    """Wrap a hole-free solution so it can go through the same detectors."""
    vals = np.where(field.grid.node_class == EXTERIOR, 0.0, field.values)
    return ExtendedField(field, vals, float(-np.nanmin(field.values)))


# ---------------------------------------------------------------------------
# convexity


@dataclass
class LevelResult:
    level: float
    defect: float
    witness: dict | None
    hull_ratio: float
    n_nodes: int


def _boundary_nodes(S: np.ndarray) -> np.ndarray:
    interior = ndimage.binary_erosion(S, border_value=0)
    return np.argwhere(S & ~interior)


def _decimate(nodes: np.ndarray, max_pairs: int) -> np.ndarray:
    nb = len(nodes)
    keep = int((1 + np.sqrt(1 + 8 * max_pairs)) // 2)
    if nb <= keep:
        return nodes
    stride = ceil(nb / keep)
    return nodes[::stride]


def segment_values(values: np.ndarray, p, q, spacing: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Multilinear interpolation along [p, q] (index coordinates), sampled every ``spacing``."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    m = max(2, int(ceil(np.linalg.norm(q - p) / spacing)) + 1)
    s = np.linspace(0.0, 1.0, m)
    pts = p[None, :] + s[:, None] * (q - p)[None, :]
    return s, ndimage.map_coordinates(values, pts.T, order=1, mode="nearest")


def _pair_defects(values, nodes, lam, chunk=2000):
    """Max of (u - lam)+ along every pair segment; returns (defect, pair, sample point)."""
    nb = len(nodes)
    if nb < 2:
        return 0.0, None
    ii, jj = np.triu_indices(nb, k=1)
    best, best_w = 0.0, None
    for start in range(0, ii.size, chunk):
        a, b = ii[start : start + chunk], jj[start : start + chunk]
        P, Q = nodes[a].astype(float), nodes[b].astype(float)
        m = int(ceil(np.max(np.linalg.norm(Q - P, axis=1)))) + 1
        s = np.linspace(0.0, 1.0, max(m, 2))
        pts = P[:, None, :] + s[None, :, None] * (Q - P)[:, None, :]
        vals = ndimage.map_coordinates(values, pts.reshape(-1, values.ndim).T, order=1, mode="nearest")
        exc = vals.reshape(len(a), -1) - lam
        flat = int(np.argmax(exc))
        top = float(exc.flat[flat])
        if top > best:
            r, c = divmod(flat, exc.shape[1])
            best = top
            best_w = (nodes[a[r]], nodes[b[r]], pts[r, c])
    return best, best_w


def hull_ratio(S: np.ndarray, inside: np.ndarray) -> float:
    """(#nodes in conv(S) - #S) / #S, counting grid nodes of Omega_1."""
    pts = np.argwhere(S)
    if len(pts) <= S.ndim:
        return 0.0
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return 0.0
    lo, hi = pts.min(axis=0), pts.max(axis=0) + 1
    box = tuple(slice(a, b) for a, b in zip(lo, hi))
    cand = np.argwhere(inside[box]) + lo
    inside_hull = np.all(cand @ hull.equations[:, :-1].T + hull.equations[:, -1] <= 1e-9, axis=1)
    return float((inside_hull.sum() - len(pts)) / len(pts))


def convexity_defect(efield: ExtendedField, level: float, max_pairs: int = MAX_PAIRS) -> tuple[float, dict | None]:
    """Worst excess of u~ over ``level`` on segments joining boundary nodes of the sublevel set."""
    res = _level_result(efield, level, max_pairs)
    return res.defect, res.witness


def _level_result(efield: ExtendedField, level: float, max_pairs: int = MAX_PAIRS) -> LevelResult:
    if not -efield.M <= level <= 0:
        raise AnalysisError(f"level {level} outside [-M, 0]")
    S = efield.inside & (efield.values <= level)
    n_nodes = int(S.sum())
    if n_nodes <= 1:
        return LevelResult(level, 0.0, None, 0.0, n_nodes)
    nodes = _decimate(_boundary_nodes(S), max_pairs)
    defect, w = _pair_defects(efield.values, nodes, level)
    witness = None
    if w is not None and defect > 0:
        g = efield.grid
        p, q, x = w
        witness = {
            "endpoints": [g.node_coord(p).tolist(), g.node_coord(q).tolist()],
            "worst_point": g.node_coord(x).tolist(),
            "midpoint": (0.5 * (g.node_coord(p) + g.node_coord(q))).tolist(),
        }
    return LevelResult(level, float(defect), witness, hull_ratio(S, efield.inside), n_nodes)


def segment_defect(efield: ExtendedField, a, b, level: float) -> tuple[float, list]:
    """Excess of u~ over ``level`` along the physical segment [a, b]."""
    g = efield.grid
    pa = (np.asarray(a, float) - np.asarray(g.origin)) / g.h
    pb = (np.asarray(b, float) - np.asarray(g.origin)) / g.h
    s, vals = segment_values(efield.values, pa, pb)
    exc = vals - level
    i = int(np.argmax(exc))
    point = (np.asarray(a, float) + s[i] * (np.asarray(b, float) - np.asarray(a, float))).tolist()
    return max(0.0, float(exc[i])), point


@dataclass
class ConvexityReport:
    levels: list
    defects: list
    witnesses: list
    hull_ratios: list
    h: float
    M: float
    threshold: float
    verdicts: list = field(default_factory=list)

    @property
    def worst_index(self) -> int:
        return int(np.argmax(self.defects)) if self.defects else -1

    @property
    def max_defect(self) -> float:
        return max(self.defects) if self.defects else 0.0

    def to_dict(self) -> dict:
        i = self.worst_index
        return {
            "h": self.h,
            "M": self.M,
            "threshold_h_units": self.threshold,
            "levels": list(self.levels),
            "defects": list(self.defects),
            "normalized_defects": [d / self.M for d in self.defects],
            "hull_ratios": list(self.hull_ratios),
            "verdicts": list(self.verdicts),
            "witnesses": list(self.witnesses),
            "worst_level": self.levels[i] if i >= 0 else None,
            "worst_defect": self.max_defect,
        }


def classify_defect(defect: float, M: float, h: float, threshold: float) -> str:
    if defect <= 0:
        return "convex"
    return "nonconvex" if defect / M > threshold * h else "below_threshold"


def quasiconvexity_report(
    efield: ExtendedField, n_levels: int, threshold: float = 20.0, extra_levels=(), max_pairs: int = MAX_PAIRS
) -> ConvexityReport:
    """Segment-test ``n_levels`` evenly spaced levels strictly inside (-M, 0)."""
    if n_levels < 2:
        raise AnalysisError("need at least two levels")
    q = efield.value_quantum()
    levels = list(np.linspace(-efield.M + q, -q, n_levels)) + [float(v) for v in extra_levels]
    rep = ConvexityReport([], [], [], [], efield.h, efield.M, threshold)
    for lam in levels:
        r = _level_result(efield, float(lam), max_pairs)
        rep.levels.append(float(lam))
        rep.defects.append(r.defect)
        rep.witnesses.append(r.witness)
        rep.hull_ratios.append(r.hull_ratio)
        rep.verdicts.append(classify_defect(r.defect, efield.M, efield.h, threshold))
    return rep


def level_set_polylines(efield: ExtendedField, level: float) -> list:
    """Marching-squares contours of u~ = level (d = 2) in physical coordinates."""
    from skimage import measure

    if efield.grid.dim != 2:
        raise AnalysisError("level-set polylines are only emitted for d = 2")
    g = efield.grid
    out = []
    for c in measure.find_contours(efield.values, level):
        xy = np.asarray(g.origin) + g.h * c
        closed = bool(np.allclose(c[0], c[-1]))
        out.append((xy, closed))
    return out


# ---------------------------------------------------------------------------
# Hessian measures


def _central_hessians(values: np.ndarray, h: float, nodes: np.ndarray) -> np.ndarray:
    d = values.ndim
    H = np.empty((len(nodes), d, d))
    idx = tuple(nodes.T)
    u0 = values[idx]
    for i in range(d):
        e = np.zeros(d, int)
        e[i] = 1
        up = values[tuple((nodes + e).T)]
        um = values[tuple((nodes - e).T)]
        H[:, i, i] = (up - 2 * u0 + um) / h**2
        for j in range(i + 1, d):
            f = np.zeros(d, int)
            f[j] = 1
            v = (
                values[tuple((nodes + e + f).T)]
                - values[tuple((nodes + e - f).T)]
                - values[tuple((nodes - e + f).T)]
                + values[tuple((nodes - e - f).T)]
            ) / (4 * h**2)
            H[:, i, j] = H[:, j, i] = v
    return H


def hessian_measure(obj, center, radius: float, k: int | None = None) -> float:
    """Integral of sigma_k(D^2 u) over the ball B_radius(center).

    Grid fields use central differences of the extended function at every node
    in the ball; the flat part of the hole contributes nothing, the kink on
    the hole boundary is picked up by the adjacent nodes.  Radial profiles use
    the exact flux formula about the hole centre.
    """
    if isinstance(obj, RadialProfile):
        if radius > obj.R:
            raise AnalysisError("ball leaves the outer domain")
        return float(obj.measure(radius))
    ef = obj if isinstance(obj, ExtendedField) else extend_utilde(obj)
    base = ef.base
    k = base.k if k is None else k
    outer = base.outer
    c = np.asarray(center, dtype=float)
    if not outer.contains(c) or outer.boundary_distance_range(c)[0] <= radius:
        raise AnalysisError("ball is not contained in the outer domain")
    g = ef.grid
    in_ball = np.linalg.norm(g.coords - c, axis=-1) <= radius
    return hessian_measure_nodes(ef, in_ball, k)


def hessian_measure_nodes(efield: ExtendedField, mask: np.ndarray, k: int | None = None) -> float:
    """h^d times the sum of sigma_k(central-difference Hessian) over masked nodes of Omega_1."""
    k = efield.base.k if k is None else k
    g = efield.grid
    nodes = np.argwhere(mask & efield.inside)
    if len(nodes) == 0:
        return 0.0
    H = _central_hessians(efield.values, g.h, nodes)
    s = char_coeffs_batch(H)[:, k - 1]
    return float(np.sum(s) * g.h**g.dim)


def radial_measure_paths(profile: RadialProfile, radius: float) -> tuple[float, float]:
    """(flux form, volume plus inner-boundary mass) for cross-checking."""
    return float(profile.measure(radius)), float(profile.measure_split(radius))


def bump_kernel(h: float, radius: float, dim: int) -> np.ndarray:
    """Compactly supported exp(-1/(1-s^2)) bump sampled on the grid, unit discrete mass."""
    m = int(ceil(radius / h))
    ax = np.arange(-m, m + 1) * h
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    s2 = sum(x**2 for x in mesh) / radius**2
    with np.errstate(divide="ignore", over="ignore"):
        ker = np.where(s2 < 1.0, np.exp(-1.0 / (1.0 - np.minimum(s2, 1 - 1e-300))), 0.0)
    return ker / ker.sum()


def mollify(efield: ExtendedField, radius: float) -> ExtendedField:
    """Convolve u~ with the bump kernel; nodes whose kernel leaves Omega_1 keep their value."""
    h = efield.h
    if radius < 2 * h - 1e-12:
        raise AnalysisError("mollifier radius below 2h is not resolved by the grid")
    ker = bump_kernel(h, radius, efield.grid.dim)
    smooth = ndimage.correlate(efield.values, ker, mode="nearest")
    support = ker > 0
    outside = ~efield.inside
    touches = ndimage.binary_dilation(outside, structure=support)
    vals = np.where(touches, efield.values, smooth)
    return replace(efield, values=vals)


# ---------------------------------------------------------------------------
# a posteriori checks of the barrier estimates


def _sphere_dirs(d: int, m: int) -> np.ndarray:
    if d == 2:
        t = np.linspace(0.0, 2 * np.pi, m, endpoint=False)
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    i = np.arange(m) + 0.5
    phi = np.arccos(1 - 2 * i / m)
    theta = np.pi * (1 + 5**0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=-1)


def _interp(values, grid, X) -> np.ndarray:
    idx = (np.asarray(X) - np.asarray(grid.origin)) / grid.h
    return ndimage.map_coordinates(values, idx.T, order=1, mode="nearest")


def normal_derivatives(values, grid, points, normals, boundary_value: float, offsets=(2.0, 3.0)) -> np.ndarray:
    """One-sided normal derivative from the boundary datum and two interior samples."""
    s1, s2 = offsets[0] * grid.h, offsets[1] * grid.h
    u1 = _interp(values, grid, points + s1 * normals) - boundary_value
    u2 = _interp(values, grid, points + s2 * normals) - boundary_value
    # fit u = alpha s + beta s^2 through (s1, u1), (s2, u2)
    return (u1 * s2**2 - u2 * s1**2) / (s1 * s2 * (s2 - s1))


def verify_estimates(field: GridField, psi: GridField, n_samples: int = 64, n_balls: int = 200) -> dict:
    """Check ordering, boundary slopes, gradient maximum and interior gradient constant."""
    ring = field.domain
    g = field.grid
    d, k, M = g.dim, field.k, field.M
    n = field.n_equation
    eps, x0 = ring.hole_radius, np.asarray(ring.hole_center)
    X = g.coords
    act = g.active
    out = {}

    # ordering away from both boundaries
    lower = barriers.lower_barrier(X, eps, M, n, k, x0)
    dist_in = np.linalg.norm(X - x0, axis=-1) - eps
    dist_out = ring.outer.distance_to_boundary(X)
    far = act & (dist_in > 2 * g.h) & (dist_out > 2 * g.h)
    below = far & ~(lower < field.values)
    above = far & ~(field.values < psi.values)
    gap_lo = np.where(far, field.values - lower, np.inf)
    gap_hi = np.where(far, psi.values - field.values, np.inf)
    out["c0_ordering"] = {
        "checked_nodes": int(far.sum()),
        "violations_lower": int(below.sum()),
        "violations_upper": int(above.sum()),
        "min_gap_lower": float(gap_lo.min()),
        "min_gap_upper": float(gap_hi.min()),
        "worst_location": g.node_coord(np.unravel_index(int(np.argmin(np.minimum(gap_lo, gap_hi))), g.shape)).tolist(),
        "pass": bool(not below.any() and not above.any()),
    }

    # slopes on the hole boundary
    dirs = _sphere_dirs(d, n_samples)
    pts = x0 + eps * dirs
    un = normal_derivatives(field.values, g, pts, dirs, -M)
    low_slope = eps * barriers.quad_coeff(n, k)
    phi = barriers.upper_barrier(eps, M, n, k, ring.outer, ring.hole_center)
    phi_slope = float(phi.radial(eps)[1])
    out["inner_slopes"] = {
        "lower_barrier_slope": float(low_slope),
        "phi_slope": phi_slope,
        "min_slope": float(un.min()),
        "max_slope": float(un.max()),
        "pass": bool(np.all(un > low_slope) and np.all(un < phi_slope)),
    }

    # slopes on the outer boundary
    bpts = ring.outer.boundary_samples
    bpts = bpts[:: max(1, len(bpts) // n_samples)]
    nu = ring.outer.inward_normal(bpts)
    u_nu = normal_derivatives(field.values, g, bpts, nu, 0.0)
    psi_nu = normal_derivatives(psi.values, g, bpts, nu, 0.0)
    C = hole_scaling_factor(psi, ring, M)
    ok = (C * psi_nu < u_nu) & (u_nu < psi_nu)
    out["outer_slopes"] = {
        "scale_factor": float(C),
        "violations": int((~ok).sum()),
        "worst_margin": float(np.min(np.minimum(u_nu - C * psi_nu, psi_nu - u_nu))),
        "pass": bool(ok.all()),
    }

    # gradient maximum principle
    loc, cls = gradient_max_location(field)
    out["gradient_maximum"] = {
        "node": list(loc),
        "location": g.node_coord(loc).tolist(),
        "node_class": int(cls),
        "pass": bool(cls in (NEAR_INNER, NEAR_OUTER)),
    }

    # interior gradient constant sup |Du(y)| r / osc_B u
    grads = np.linalg.norm(field.gradients(), axis=-1)
    op = field.operator
    dist = np.minimum(dist_in, dist_out)
    cand = np.flatnonzero((act & (dist > 6 * g.h)).ravel())
    cand = cand[:: max(1, len(cand) // n_balls)]
    best = 0.0
    coords = X.reshape(-1, d)
    vals = field.values.ravel()
    act_flat = act.ravel()
    for flat in cand:
        r = 0.5 * dist.ravel()[flat]
        y = coords[flat]
        ball = act_flat & (np.linalg.norm(coords - y, axis=-1) <= r)
        osc = float(vals[ball].max() - vals[ball].min())
        if osc > 0:
            best = max(best, grads[op.index[flat]] * r / osc)
    out["interior_gradient_constant"] = {"value": float(best), "balls": int(len(cand))}
    out["pass"] = bool(
        out["c0_ordering"]["pass"]
        and out["inner_slopes"]["pass"]
        and out["outer_slopes"]["pass"]
        and out["gradient_maximum"]["pass"]
    )
    return out
