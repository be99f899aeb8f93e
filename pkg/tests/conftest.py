import itertools
import math

import numpy as np
import pytest

from khessian import barriers
from khessian.geometry import ConvexDomain, Grid, RingDomain
from khessian.grid_solver import solve_hole_free, solve_ring


def brute_sigma(lam, k):
    """Subset enumeration with compensated summation; also returns the sum of |terms|."""
    terms = [math.prod(c) for c in itertools.combinations([float(v) for v in lam], k)]
    return math.fsum(terms), math.fsum(abs(t) for t in terms)


def annulus_k1(eps, M, R=1.0):
    """Closed form of Delta u = 1 on eps < r < R, u(eps) = -M, u(R) = 0."""
    # u = r^2/4 + a log r + c
    a = (-M + (R**2 - eps**2) / 4) / math.log(eps / R)
    c = -R**2 / 4 - a * math.log(R)
    return lambda r: np.asarray(r) ** 2 / 4 + a * np.log(r) + c, a


@pytest.fixture(scope="session")
def disk():
    return ConvexDomain.ball((0.0, 0.0), 1.0)


def _offcenter(disk, k, h, eps, x0=(0.5, 0.0)):
    grid = Grid.covering(disk, h)
    psi = solve_hole_free(disk, grid, k)
    M = barriers.choose_M1(float(np.nanmin(psi.values)), disk, 2, k, center=x0)
    ring = RingDomain(disk, x0, eps)
    u, rep = solve_ring(ring, Grid.covering(disk, h), M, k, psi=psi)
    return psi, u, rep


@pytest.fixture(scope="session")
def offcenter_k1(disk):
    return _offcenter(disk, 1, 1 / 64, 0.12)


@pytest.fixture(scope="session")
def offcenter_k2(disk):
    return _offcenter(disk, 2, 1 / 32, 0.12, x0=(0.3, 0.1))


@pytest.fixture(scope="session")
def centered_k1(disk):
    """Centred annulus, eps = 0.1, M = 1, h = 1/64."""
    ring = RingDomain(disk, (0.0, 0.0), 0.1)
    return solve_ring(ring, Grid.covering(disk, 1 / 64), 1.0, 1)
