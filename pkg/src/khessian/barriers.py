"""Closed-form sub- and supersolutions for the ring problem.

All barriers are radial about a centre point ``center`` (the hole centre).
Radial derivatives are returned alongside values so that their Hessian
spectra ``(g'', g'/r, ..., g'/r)`` can be fed to :mod:`khessian.symfun`.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, log

import numpy as np

from .geometry import ConvexDomain

M1_MARGIN = 0.05


class BarrierError(ValueError):
    pass


class InsufficientScaling(BarrierError):
    pass


def quad_coeff(n: int, k: int) -> float:
    """C(n,k)^(-1/k): the Hessian multiple of the identity solving sigma_k = 1."""
    return comb(n, k) ** (-1.0 / k)


def _radius(x, center) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    c = np.zeros(x.shape[-1]) if center is None else np.asarray(center, dtype=float)
    return np.linalg.norm(x - c, axis=-1)


def lower_barrier(x, eps: float, M: float, n: int, k: int, center=None):
    """(|x-c|^2 - eps^2) / (2 C(n,k)^(1/k)) - M, equal to -M on the hole boundary."""
    if M <= 0 or eps <= 0:
        raise BarrierError("need M > 0 and eps > 0")
    r = _radius(x, center)
    return 0.5 * quad_coeff(n, k) * (r**2 - eps**2) - M


def lower_barrier_radial(r, eps, M, n, k):
    """(value, g', g'') of the lower barrier as a function of radius."""
    c = quad_coeff(n, k)
    r = np.asarray(r, dtype=float)
    return 0.5 * c * (r**2 - eps**2) - M, c * r, np.full_like(r, c)


def phi_case(n: int, k: int) -> str:
    """Which supersolution family applies: compares n/k with 2 exactly."""
    if n > 2 * k:
        return "power_super"
    if n == 2 * k:
        return "log_super"
    return "power_super_small"


@dataclass(frozen=True)
class RadialBarrier:
    """Supersolution phi with sigma_k(D^2 phi) = 0 away from the centre."""

    kind: str
    constant: float
    eps: float
    M: float
    n: int
    k: int
    center: tuple

    @property
    def alpha(self) -> float:
        return 2.0 - self.n / self.k

    def radial(self, r):
        """(value, g', g'') at radius r > 0."""
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise BarrierError("supersolution is singular at its centre")
        C, e, M, a = self.constant, self.eps, self.M, self.alpha
        if self.kind == "log_super":
            return C * np.log(r / e) - M, C / r, -C / r**2
        sign = -1.0 if self.kind == "power_super" else 1.0
        val = sign * C * (r**a - e**a) - M
        return val, sign * C * a * r ** (a - 1), sign * C * a * (a - 1) * r ** (a - 2)

    def __call__(self, x):
        r = _radius(x, self.center)
        return self.radial(r)[0]


def upper_barrier(eps: float, M: float, n: int, k: int, outer: ConvexDomain, center=None) -> RadialBarrier:
    """Build phi with the smallest constant that keeps phi >= 0 on the outer boundary.

    phi increases with radius, so the binding boundary point is the one
    nearest to the centre.
    """
    center = tuple(np.zeros(outer.dim)) if center is None else tuple(float(c) for c in center)
    rho, _ = outer.boundary_distance_range(center)
    if not rho > eps:
        raise BarrierError("hole does not fit inside the outer domain")
    kind = phi_case(n, k)
    a = 2.0 - n / k
    if kind == "log_super":
        C = M / log(rho / eps)
    elif kind == "power_super":
        C = M / (eps**a - rho**a)
    else:
        C = M / (rho**a - eps**a)
    return RadialBarrier(kind, float(C), float(eps), float(M), n, k, center)


def upper_barrier_phi(x, eps, M, n, k, outer: ConvexDomain, center=None):
    """Pointwise value of phi; raises at the centre."""
    return upper_barrier(eps, M, n, k, outer, center)(x)


def choose_M1(psi_min: float, outer: ConvexDomain, n: int, k: int, center=None, margin: float = M1_MARGIN) -> float:
    """Depth making psi a supersolution and the lower barrier a subsolution.

    ``center`` is the hole centre the lower barrier is built around; it
    defaults to the origin.
    """
    if psi_min >= 0:
        raise BarrierError("psi_min must be negative")
    center = np.zeros(outer.dim) if center is None else np.asarray(center, dtype=float)
    _, rmax = outer.boundary_distance_range(center)
    return max(-psi_min, 0.5 * quad_coeff(n, k) * rmax**2) * (1.0 + margin)


def scaled_supersolution(psi_field, factor: float, M: float | None = None):
    """Return factor * psi; with factor >= 1 this is a subsolution of the ring problem.

    ``psi_field`` may be an array or anything with a ``values`` attribute and a
    ``replace_values`` method (a GridField).
    """
    values = getattr(psi_field, "values", psi_field)
    values = np.asarray(values, dtype=float)
    if M is not None and factor * np.nanmin(values) > -M:
        raise InsufficientScaling(f"factor*min(psi)={factor * np.nanmin(values):.4g} > -M={-M:.4g}")
    scaled = factor * values
    if hasattr(psi_field, "replace_values"):
        return psi_field.replace_values(scaled)
    return scaled
