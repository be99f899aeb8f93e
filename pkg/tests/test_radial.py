import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import annulus_k1
from khessian import barriers
from khessian.geometry import ConvexDomain
from khessian.radial import (
    NoAdmissibleConstant,
    _depth,
    boundary_scalings,
    hole_free_radial,
    profile_residual,
    radial_sigma_k,
    solve_radial_ring,
)
from khessian.symfun import in_gamma_k, sigma_k

DISK = ConvexDomain.ball((0, 0), 1.0)


def auto_M(n, k, R=1.0):
    return barriers.choose_M1(-0.5 * barriers.quad_coeff(n, k) * R**2, ConvexDomain.ball((0, 0), R), n, k)


def test_radial_sigma_examples():
    for n in range(2, 7):
        for k in range(1, n + 1):
            assert radial_sigma_k(0.8, 1.0, 0.8, n, k) == pytest.approx(math.comb(n, k))
    assert radial_sigma_k(0.3, 2.0, 0.5, 3, 1) == pytest.approx(2.0 + 2 * 0.3 / 0.5)
    spec = (2.0, 0.6, 0.6, 0.6)
    assert radial_sigma_k(0.3, 2.0, 0.5, 4, 2) == pytest.approx(sigma_k(spec, 2), rel=1e-12)


def test_annulus_k1():
    prof = solve_radial_ring(0.1, 1.0, 1.0, 2, 1)
    exact, a = annulus_k1(0.1, 1.0)
    assert prof.a == pytest.approx(a, rel=1e-9)
    r = np.linspace(0.1, 1.0, 57)
    np.testing.assert_allclose(prof.u(r), exact(r), atol=1e-9)
    assert prof.u(0.1) == pytest.approx(-1.0, abs=1e-12)
    assert prof.u(1.0) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("n,k", [(2, 1), (3, 2), (4, 2), (5, 3)])
def test_zero_constant_is_the_quadratic(n, k):
    eps, M = 0.2, 0.5
    c = barriers.quad_coeff(n, k)
    R = math.sqrt(eps**2 + 2 * M / c)
    prof = solve_radial_ring(eps, R, M, n, k)
    assert abs(prof.a) <= 1e-9
    r = np.linspace(eps, R, 31)
    np.testing.assert_allclose(prof.u(r), barriers.lower_barrier_radial(r, eps, M, n, k)[0], atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([(2, 1), (3, 1), (4, 2), (5, 2), (3, 2)]), st.floats(-1e-3, 1.0), st.floats(1e-3, 0.5))
def test_depth_monotone_in_a(nk, a, da):
    n, k = nk
    eps = 0.1
    lo = max(a, -(eps**n) / math.comb(n, k) + 1e-12)
    assert _depth(lo + da, eps, 1.0, n, k, 1e-10) > _depth(lo, eps, 1.0, n, k, 1e-10)


@pytest.mark.parametrize("n,k", [(2, 1), (4, 1), (3, 2), (4, 2), (5, 2), (6, 3), (4, 4)])
def test_profile_invariants(n, k):
    prof = solve_radial_ring(0.05, 1.0, auto_M(n, k), n, k)
    r = np.linspace(0.05, 1.0, 102)[1:-1]
    assert np.max(np.abs(profile_residual(prof, r))) <= 1e-8
    assert np.all(prof.du(r) >= 0)
    for rr in r[::7]:
        spec = (float(prof.d2u(rr)),) + (float(prof.du(rr)) / rr,) * (n - 1)
        assert in_gamma_k(spec, k)
    assert prof.u(1.0) == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(prof.u(prof.r_mesh), prof.u_values, atol=1e-9)


def test_unreachable_depth():
    with pytest.raises(NoAdmissibleConstant):
        solve_radial_ring(0.1, 1.0, 1e-4, 3, 2)
    with pytest.raises(ValueError):
        solve_radial_ring(0.5, 0.4, 1.0, 2, 1)


@pytest.mark.parametrize("n,k", [(5, 2), (4, 2), (3, 2), (2, 1)])
def test_radial_sandwich(n, k):
    M = auto_M(n, k)
    for eps in (0.1, 0.05):
        prof = solve_radial_ring(eps, 1.0, M, n, k)
        r = np.linspace(eps, 1.0, 300)
        u = prof.u(r)
        assert np.all(barriers.lower_barrier_radial(r, eps, M, n, k)[0] <= u + 1e-10)
        phi = barriers.upper_barrier(eps, M, n, k, DISK)
        assert np.all(u <= phi.radial(r)[0] + 1e-10)


@pytest.mark.parametrize("n,k", [(4, 1), (4, 2), (6, 3)])
def test_converges_to_hole_free(n, k):
    psi = hole_free_radial(1.0, n, k)
    M = auto_M(n, k)
    r = np.linspace(0.25, 1.0, 50)
    errs = [np.max(np.abs(solve_radial_ring(e, 1.0, M, n, k).u(r) - psi(r))) for e in (0.1, 0.05, 0.025)]
    assert errs[0] > errs[1] > errs[2]


def test_boundary_scalings():
    eps_list = (0.1, 0.05, 0.025)
    s4 = [boundary_scalings(solve_radial_ring(e, 1.0, 1.0, 4, 1)) for e in eps_list]
    v = [s["scaled_gradient"] for s in s4]
    assert (max(v) - min(v)) / max(v) < 0.15
    assert all(s["regime"] == "n/k>2" for s in s4)
    s2 = [boundary_scalings(solve_radial_ring(e, 1.0, 1.0, 2, 1)) for e in eps_list]
    v = [s["scaled_gradient"] for s in s2]
    assert (max(v) - min(v)) / max(v) < 0.15
    for s in s4 + s2:
        assert -3.0 < s["normal_ratio"] < 3.0


def test_measure_paths_agree():
    for n, k in [(4, 2), (2, 1), (3, 2)]:
        prof = solve_radial_ring(0.05, 1.0, auto_M(n, k), n, k)
        for r in (0.2, 0.5, 0.9):
            assert prof.measure(r) == pytest.approx(prof.measure_split(r), rel=1e-12)
    prof = solve_radial_ring(0.1, 1.0, 1.0, 2, 1)
    _, a = annulus_k1(0.1, 1.0)
    assert prof.measure(0.5) == pytest.approx(np.pi * 0.25 + 2 * np.pi * a, rel=1e-9)
