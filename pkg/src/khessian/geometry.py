"""Outer convex domains, ring domains and Cartesian grids with node tags."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

INTERIOR, NEAR_OUTER, NEAR_INNER, HOLE, EXTERIOR = 0, 1, 2, 3, 4
CLASS_NAMES = {
    INTERIOR: "interior",
    NEAR_OUTER: "near_outer",
    NEAR_INNER: "near_inner",
    HOLE: "hole",
    EXTERIOR: "exterior",
}


class GeometryError(ValueError):
    pass


class HoleTooSmallForGrid(GeometryError):
    pass


class NotACutArm(GeometryError):
    pass


@dataclass(frozen=True)
class ConvexDomain:
    """Ball, axis-aligned ellipsoid or p-ball with an analytic gauge.

    The gauge is 1-homogeneous about ``center``: a point is inside iff its
    gauge is below 1.
    """

    kind: str
    center: tuple
    radius: float = 1.0
    semi_axes: tuple | None = None
    p: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.kind not in ("ball", "ellipsoid", "p_ball"):
            raise GeometryError(f"unknown domain kind {self.kind!r}")
        if self.kind == "ellipsoid":
            if self.semi_axes is None or len(self.semi_axes) != len(self.center):
                raise GeometryError("ellipsoid needs one semi-axis per dimension")
            axes = tuple(float(a) for a in self.semi_axes)
            if min(axes) <= 0:
                raise GeometryError("semi-axes must be positive")
            object.__setattr__(self, "semi_axes", axes)
        elif self.radius <= 0:
            raise GeometryError("radius must be positive")
        if self.kind == "p_ball" and not 2.0 <= self.p <= 8.0:
            raise GeometryError("p-ball exponent restricted to 2 <= p <= 8")

    @classmethod
    def ball(cls, center, radius):
        return cls("ball", tuple(center), float(radius))

    @classmethod
    def ellipsoid(cls, center, semi_axes):
        return cls("ellipsoid", tuple(center), semi_axes=tuple(semi_axes))

    @classmethod
    def p_ball(cls, center, radius, p):
        return cls("p_ball", tuple(center), float(radius), p=float(p))

    @property
    def dim(self) -> int:
        return len(self.center)

    def gauge(self, x) -> np.ndarray:
        z = np.asarray(x, dtype=float) - np.asarray(self.center)
        if self.kind == "ball":
            return np.linalg.norm(z, axis=-1) / self.radius
        if self.kind == "ellipsoid":
            return np.linalg.norm(z / np.asarray(self.semi_axes), axis=-1)
        return np.sum(np.abs(z) ** self.p, axis=-1) ** (1.0 / self.p) / self.radius

    def contains(self, x) -> np.ndarray:
        return self.gauge(x) < 1.0

    def half_extent(self) -> np.ndarray:
        if self.kind == "ellipsoid":
            return np.asarray(self.semi_axes)
        return np.full(self.dim, self.radius)

    @cached_property
    def boundary_samples(self) -> np.ndarray:
        """Dense deterministic sample of boundary points."""
        if self.dim == 2:
            t = np.linspace(0.0, 2 * np.pi, 8192, endpoint=False)
            dirs = np.stack([np.cos(t), np.sin(t)], axis=-1)
        else:
            m = 20000
            i = np.arange(m) + 0.5
            phi = np.arccos(1 - 2 * i / m)
            theta = np.pi * (1 + 5**0.5) * i
            dirs = np.stack(
                [np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=-1
            )
            if self.dim != 3:
                raise GeometryError("boundary sampling supports d in {2, 3}")
        c = np.asarray(self.center)
        g = self.gauge(c + dirs)
        return c + dirs / g[:, None]

    def boundary_distance_range(self, point) -> tuple[float, float]:
        """(min, max) of |x - point| over the boundary."""
        point = np.asarray(point, dtype=float)
        c = np.asarray(self.center)
        if self.kind == "ball":
            r = np.linalg.norm(point - c)
            return self.radius - r, self.radius + r
        dist = np.linalg.norm(self.boundary_samples - point, axis=-1)
        return float(dist.min()), float(dist.max())

    def distance_to_boundary(self, X) -> np.ndarray:
        """Distance from interior points to the boundary (exact for balls)."""
        X = np.asarray(X, dtype=float)
        if self.kind == "ball":
            return np.abs(self.radius - np.linalg.norm(X - np.asarray(self.center), axis=-1))
        from scipy.spatial import cKDTree

        dist, _ = cKDTree(self.boundary_samples).query(X.reshape(-1, self.dim))
        return dist.reshape(X.shape[:-1])

    def inward_normal(self, x) -> np.ndarray:
        """Unit inward normal at boundary points (negated gauge gradient)."""
        x = np.asarray(x, dtype=float)
        z = x - np.asarray(self.center)
        if self.kind == "ball":
            g = z
        elif self.kind == "ellipsoid":
            g = z / np.asarray(self.semi_axes) ** 2
        else:
            g = np.sign(z) * np.abs(z) ** (self.p - 1)
        return -g / np.linalg.norm(g, axis=-1, keepdims=True)

    def farthest_boundary_point(self, point) -> np.ndarray:
        point = np.asarray(point, dtype=float)
        c = np.asarray(self.center)
        if self.kind == "ball":
            v = point - c
            nv = np.linalg.norm(v)
            if nv < 1e-14:
                e = np.zeros(self.dim)
                e[0] = 1.0
                return c + self.radius * e
            return c - self.radius * v / nv
        dist = np.linalg.norm(self.boundary_samples - point, axis=-1)
        return self.boundary_samples[int(np.argmax(dist))]

    def volume(self) -> float:
        from math import gamma, pi

        d = self.dim
        unit = pi ** (d / 2) / gamma(d / 2 + 1)
        if self.kind == "ball":
            return unit * self.radius**d
        if self.kind == "ellipsoid":
            return unit * float(np.prod(self.semi_axes))
        p = self.p
        return (2 * gamma(1 + 1 / p)) ** d / gamma(1 + d / p) * self.radius**d


@dataclass(frozen=True)
class RingDomain:
    """Omega_1 minus the closed ball B_eps(x0)."""

    outer: ConvexDomain
    hole_center: tuple
    hole_radius: float

    def __post_init__(self):
        x0 = tuple(float(c) for c in self.hole_center)
        object.__setattr__(self, "hole_center", x0)
        if len(x0) != self.outer.dim:
            raise GeometryError("hole centre dimension mismatch")
        if not self.hole_radius > 0:
            raise GeometryError("hole radius must be positive")
        if not self.outer.contains(np.asarray(x0)):
            raise GeometryError("hole centre outside the outer domain")
        dmin, _ = self.outer.boundary_distance_range(x0)
        if not dmin > self.hole_radius:
            raise GeometryError("closed hole must lie strictly inside the outer domain")

    @property
    def dim(self) -> int:
        return self.outer.dim

    def in_hole(self, x) -> np.ndarray:
        return np.linalg.norm(np.asarray(x) - np.asarray(self.hole_center), axis=-1) <= self.hole_radius


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform Cartesian grid; ``node_class`` is filled by :func:`classify_nodes`."""

    h: float
    origin: tuple
    shape: tuple
    node_class: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @classmethod
    def covering(cls, domain: ConvexDomain, h: float) -> "Grid":
        """Smallest grid with the domain centre on a node and >= 1 exterior layer."""
        if h <= 0:
            raise GeometryError("spacing must be positive")
        m = np.ceil(domain.half_extent() / h - 1e-9).astype(int) + 1
        origin = tuple(np.asarray(domain.center) - m * h)
        return cls(h=float(h), origin=origin, shape=tuple(int(v) for v in 2 * m + 1))

    @cached_property
    def axes(self) -> list:
        return [self.origin[i] + self.h * np.arange(n) for i, n in enumerate(self.shape)]

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (d,)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def node_coord(self, idx) -> np.ndarray:
        return np.asarray(self.origin) + self.h * np.asarray(idx, dtype=float)

    def nearest_index(self, x) -> tuple:
        idx = np.rint((np.asarray(x, dtype=float) - np.asarray(self.origin)) / self.h).astype(int)
        return tuple(int(i) for i in idx)

    @property
    def active(self) -> np.ndarray:
        return (self.node_class == INTERIOR) | (self.node_class == NEAR_OUTER) | (self.node_class == NEAR_INNER)

    def counts(self) -> dict:
        return {name: int(np.sum(self.node_class == c)) for c, name in CLASS_NAMES.items()}


def _shift(mask: np.ndarray, axis: int, step: int, fill: bool) -> np.ndarray:
    """mask of the neighbour at ``+step`` along ``axis``."""
    out = np.full_like(mask, fill)
    src = [slice(None)] * mask.ndim
    dst = [slice(None)] * mask.ndim
    if step > 0:
        src[axis], dst[axis] = slice(step, None), slice(None, -step)
    else:
        src[axis], dst[axis] = slice(None, step), slice(-step, None)
    out[tuple(dst)] = mask[tuple(src)]
    return out


def classify_nodes(grid: Grid, ring: RingDomain | ConvexDomain) -> Grid:
    """Tag every node as interior / near_outer / near_inner / hole / exterior.

    Passing a bare :class:`ConvexDomain` classifies for the hole-free problem.
    """
    outer = ring.outer if isinstance(ring, RingDomain) else ring
    if outer.dim != grid.dim:
        raise GeometryError("grid and domain dimensions differ")
    if isinstance(ring, RingDomain) and ring.hole_radius < 2 * grid.h - 1e-14:
        raise HoleTooSmallForGrid(f"eps={ring.hole_radius} < 2h={2 * grid.h}")
    X = grid.coords
    exterior = outer.gauge(X) >= 1.0
    hole = ring.in_hole(X) & ~exterior if isinstance(ring, RingDomain) else np.zeros(grid.shape, bool)
    active = ~exterior & ~hole
    # every face of the bounding box must be exterior
    for ax in range(grid.dim):
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[ax], hi[ax] = 0, -1
        if active[tuple(lo)].any() or active[tuple(hi)].any():
            raise GeometryError("grid does not cover the outer domain with an exterior layer")
    near_hole = np.zeros(grid.shape, bool)
    near_ext = np.zeros(grid.shape, bool)
    for ax in range(grid.dim):
        for step in (-1, 1):
            near_hole |= _shift(hole, ax, step, False)
            near_ext |= _shift(exterior, ax, step, True)
    cls = np.full(grid.shape, INTERIOR, dtype=np.int8)
    cls[exterior] = EXTERIOR
    cls[hole] = HOLE
    cls[active & near_ext] = NEAR_OUTER
    cls[active & near_hole] = NEAR_INNER
    return replace(grid, node_class=cls)


def _ray_sphere(x, v, c, r):
    """Smallest positive t with |x + t v - c| = r (v unit), or None."""
    w = x - c
    b = float(np.dot(w, v))
    q = float(np.dot(w, w)) - r * r
    disc = b * b - q
    if disc < 0:
        return None
    s = np.sqrt(disc)
    roots = sorted([-b - s, -b + s])
    for t in roots:
        if t > 0:
            return t
    return None


def boundary_intersection(x_node, direction, ring: RingDomain | ConvexDomain, h: float):
    """First crossing of the arm ``x_node + s*direction, 0 < s <= h`` with the boundary.

    Returns ``(theta, point, which)`` where ``theta = s/h`` and ``which`` is
    ``"inner"`` or ``"outer"``.
    """
    x = np.asarray(x_node, dtype=float)
    v = np.asarray(direction, dtype=float)
    v = v / np.linalg.norm(v)
    outer = ring.outer if isinstance(ring, RingDomain) else ring
    hits = []
    if isinstance(ring, RingDomain):
        c = np.asarray(ring.hole_center)
        if np.linalg.norm(x - c) > ring.hole_radius:
            t = _ray_sphere(x, v, c, ring.hole_radius)
            if t is not None and t <= h * (1 + 1e-12):
                hits.append((t, "inner"))
    if outer.gauge(x) < 1.0 and outer.gauge(x + h * v) >= 1.0:
        if outer.kind == "ball":
            t = _ray_sphere(x, v, np.asarray(outer.center), outer.radius)
        else:
            lo, hi = 0.0, h
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if outer.gauge(x + mid * v) < 1.0:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= 1e-16 * max(1.0, h):
                    break
            t = 0.5 * (lo + hi)
        hits.append((t, "outer"))
    if not hits:
        raise NotACutArm(f"arm from {x} along {v} does not cross the boundary within h")
    t, which = min(hits)
    t = min(t, h)
    return t / h, x + t * v, which
