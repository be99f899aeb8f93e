"""Radially symmetric ring problem solved to quadrature accuracy.

For radial u the k-Hessian is in divergence form,

    sigma_k = C(n-1,k-1) / (k r^(n-1)) * (r^(n-k) u'^k)',

so ``u'(r)^k = r^k / C(n,k) + a r^(k-n)`` for a single constant ``a`` fixed by
the depth condition ``int_eps^R u' dr = M``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, gamma, pi

import numpy as np
from scipy import integrate, optimize

from .symfun import sigma_k


class NoAdmissibleConstant(ValueError):
    pass


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere in R^n."""
    return 2 * pi ** (n / 2) / gamma(n / 2)


def ball_volume(n: int, r: float) -> float:
    return pi ** (n / 2) / gamma(n / 2 + 1) * r**n


def radial_sigma_k(u_prime, u_double_prime, r, n: int, k: int):
    """sigma_k of the spectrum (u'', u'/r repeated n-1 times)."""
    r = np.asarray(r, dtype=float)
    q = np.asarray(u_prime) / r
    return comb(n - 1, k - 1) * np.asarray(u_double_prime) * q ** (k - 1) + comb(n - 1, k) * q**k


def radial_spectrum(u_prime, u_double_prime, r, n):
    return (float(u_double_prime),) + (float(u_prime) / float(r),) * (n - 1)


def _root(z, k):
    """Real k-th root, odd roots keep the sign."""
    if k % 2:
        return np.sign(z) * np.abs(z) ** (1.0 / k)
    return np.maximum(z, 0.0) ** (1.0 / k)


@dataclass
class RadialProfile:
    eps: float
    R: float
    M: float
    n: int
    k: int
    a: float
    quad_tol: float = 1e-10
    r_mesh: np.ndarray = field(default=None, repr=False)
    u_values: np.ndarray = field(default=None, repr=False)
    monotone: bool = True

    @property
    def cnk(self) -> int:
        return comb(self.n, self.k)

    def _inner(self, r):
        r = np.asarray(r, dtype=float)
        return r**self.k / self.cnk + self.a * r ** (self.k - self.n)

    def du(self, r):
        return _root(self._inner(r), self.k)

    def d2u(self, r):
        """Analytic derivative of the closed-form u'."""
        r = np.asarray(r, dtype=float)
        n, k, a = self.n, self.k, self.a
        z = self._inner(r)
        dz = k * r ** (k - 1) / self.cnk + a * (k - n) * r ** (k - n - 1)
        if k == 1:
            return dz
        with np.errstate(divide="ignore"):
            return dz * np.abs(z) ** (1.0 / k - 1.0) / k

    def u(self, r):
        """u(r) = -M + int_eps^r u'.

        Radii are sorted; the first piece from eps uses adaptive quadrature and
        the gaps between consecutive radii use 24-point Gauss-Legendre.
        """
        r = np.asarray(r, dtype=float)
        flat = np.atleast_1d(r).ravel()
        order = np.argsort(flat, kind="stable")
        rs = flat[order]
        if rs.size == 0:
            return flat.reshape(r.shape)
        first, _ = integrate.quad(self.du, self.eps, rs[0], epsabs=self.quad_tol * 1e-2, epsrel=self.quad_tol, limit=200)
        x, w = np.polynomial.legendre.leggauss(24)
        lo, hi = rs[:-1], rs[1:]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        gaps = (self.du(mid[:, None] + half[:, None] * x[None, :]) * w).sum(axis=1) * half
        vals = np.empty_like(rs)
        vals[0] = first
        vals[1:] = first + np.cumsum(gaps)
        out = np.empty_like(flat)
        out[order] = vals - self.M
        return out.reshape(r.shape) if r.ndim else out[0]

    def __call__(self, r):
        return self.u(r)

    def measure(self, r: float) -> float:
        """Hessian measure of the extended profile on B_r(centre), via the flux at r."""
        return comb(self.n - 1, self.k - 1) / self.k * sphere_area(self.n) * r ** (self.n - self.k) * self.du(r) ** self.k

    def measure_split(self, r: float) -> float:
        """Same measure as Lebesgue volume of the annulus plus the mass on the hole boundary."""
        if r <= self.eps:
            return 0.0
        inner = comb(self.n - 1, self.k - 1) / self.k * sphere_area(self.n) * self.eps ** (self.n - self.k) * self.du(self.eps) ** self.k
        vol = ball_volume(self.n, r) - ball_volume(self.n, self.eps)
        return vol + inner


def _depth(a, eps, R, n, k, tol):
    prof = RadialProfile(eps, R, 0.0, n, k, a)
    val, _ = integrate.quad(prof.du, eps, R, epsabs=tol * 1e-2, epsrel=tol, limit=200)
    return val


def solve_radial_ring(eps: float, R: float, M: float, n: int, k: int, tol: float = 1e-10, mesh_size: int = 400) -> RadialProfile:
    """Radial solution on eps < r < R with u(eps) = -M and u(R) = 0."""
    if not 0 < eps < R or M <= 0:
        raise ValueError("need 0 < eps < R and M > 0")
    cnk = comb(n, k)
    a_min = -(eps**n) / cnk
    depth = lambda a: _depth(a, eps, R, n, k, tol)  # noqa: E731
    if k == 1:
        lo = min(-1.0, a_min)
        while depth(lo) > M:
            lo *= 2.0
    else:
        lo = a_min + 1e-14 * eps**n
        if depth(lo) > M:
            raise NoAdmissibleConstant(
                f"depth {M} below the minimal admissible depth {depth(lo):.6g} (eps={eps}, n={n}, k={k})"
            )
    hi = max(1.0, abs(lo))
    while depth(hi) < M:
        hi *= 2.0
    a = optimize.brentq(lambda a: depth(a) - M, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    prof = RadialProfile(eps, R, M, n, k, a, quad_tol=tol)
    prof.monotone = bool(np.all(prof.du(np.linspace(eps, R, 2001)) >= 0))
    if not prof.monotone and k >= 2:
        raise NoAdmissibleConstant("non-monotone profile is not k-admissible for k >= 2")
    r = eps + (R - eps) * (np.linspace(0.0, 1.0, mesh_size) ** 2)
    prof.r_mesh = r
    increments = [integrate.quad(prof.du, r[i], r[i + 1], epsabs=tol * 1e-3, epsrel=tol)[0] for i in range(len(r) - 1)]
    prof.u_values = -M + np.concatenate([[0.0], np.cumsum(increments)])
    return prof


def hole_free_radial(R: float, n: int, k: int):
    """psi(r) = (r^2 - R^2) / (2 C(n,k)^(1/k)), the hole-free radial solution."""
    c = comb(n, k) ** (-1.0 / k)
    return lambda r: 0.5 * c * (np.asarray(r, dtype=float) ** 2 - R**2)


def boundary_scalings(profile: RadialProfile) -> dict:
    """Quantities whose uniform boundedness in eps the boundary estimates assert."""
    e = profile.eps
    du = float(profile.du(e))
    d2u = float(profile.d2u(e))
    n, k = profile.n, profile.k
    if n > 2 * k:
        scaled = e * du
    elif n == 2 * k:
        scaled = du * e * abs(np.log(e))
    else:
        scaled = du * e ** (n / k - 1)
    ratio = d2u / (du / e) if du != 0 else float("nan")
    return {
        "du_eps": du,
        "eps_du_eps": e * du,
        "d2u_eps": d2u,
        "normal_ratio": ratio,
        "scaled_gradient": scaled,
        "regime": "n/k>2" if n > 2 * k else ("n/k=2" if n == 2 * k else "n/k<2"),
    }


def profile_residual(profile: RadialProfile, radii) -> np.ndarray:
    """sigma_k(radial Hessian) - 1 at the given radii, through symfun on the full spectrum."""
    out = []
    for r in np.atleast_1d(radii):
        spec = radial_spectrum(profile.du(r), profile.d2u(r), r, profile.n)
        out.append(sigma_k(spec, profile.k) - 1.0)
    return np.asarray(out)
