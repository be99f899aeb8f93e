import numpy as np
import pytest

from khessian import analysis
from khessian.analysis import AnalysisError, ExtendedField
from khessian.geometry import HOLE, ConvexDomain, Grid, RingDomain, classify_nodes
from khessian.grid_solver import GridField, solve_hole_free, solve_ring
from khessian.radial import solve_radial_ring

H = 1 / 64


def function_field(f, h=H, M=1.0, domain=None):
    """ExtendedField for an explicit function on the unit disk."""
    disk = domain or ConvexDomain.ball((0, 0), 1.0)
    g = classify_nodes(Grid.covering(disk, h), disk)
    vals = np.where(g.node_class != 4, f(g.coords), 0.0)
    base = GridField(g, vals, 1, disk)
    return ExtendedField(base, vals, M)


def two_wells(X, p=0.5):
    return np.minimum(np.linalg.norm(X - [p, 0], axis=-1), np.linalg.norm(X + [p, 0], axis=-1)) - 1.0


def test_extension(offcenter_k1):
    _, u, _ = offcenter_k1
    ef = analysis.extend_utilde(u)
    hole = u.grid.node_class == HOLE
    assert np.all(ef.values[hole] == -u.M)
    act = u.grid.active
    np.testing.assert_array_equal(ef.values[act], u.values[act])
    assert ef.values[ef.inside].min() == -u.M


def test_convex_function_zero_defect():
    ef = function_field(lambda X: np.sum(X**2, -1) - 1.0)
    for lam in (-0.9, -0.5, -0.1, 0.0):
        d, w = analysis.convexity_defect(ef, lam)
        assert d == 0.0 and w is None


def test_two_wells_defect_and_witness():
    ef = function_field(two_wells)
    lam = -0.7
    d, w = analysis.convexity_defect(ef, lam, max_pairs=10**6)
    exact = np.sqrt(0.5**2 + 0.3**2) - 1.0 - lam
    assert abs(d - exact) <= 2 * H
    x, y = w["worst_point"]
    assert abs(x) <= 2 * H and abs(abs(y) - 0.3) <= 3 * H
    # decimated pair sample still sees the defect
    d2, _ = analysis.convexity_defect(ef, lam)
    assert d2 > 0.8 * exact
    r = analysis._level_result(ef, lam)
    assert r.hull_ratio > 0.1


def test_defect_range_and_degenerate_levels():
    ef = function_field(lambda X: np.sum(X**2, -1) - 1.0)
    with pytest.raises(AnalysisError):
        analysis.convexity_defect(ef, 0.1)
    with pytest.raises(AnalysisError):
        analysis.convexity_defect(ef, -1.5)
    d, w = analysis.convexity_defect(ef, -1.0)
    assert d == 0.0 and w is None


def test_segment_defect_symmetric():
    ef = function_field(two_wells)
    a, b = (-0.6, 0.05), (0.55, -0.1)
    assert analysis.segment_defect(ef, a, b, -0.7)[0] == pytest.approx(analysis.segment_defect(ef, b, a, -0.7)[0], abs=1e-12)


def test_report_levels_and_radial_control(centered_k1):
    u, _ = centered_k1
    ef = analysis.extend_utilde(u)
    rep = analysis.quasiconvexity_report(ef, 2)
    assert len(rep.levels) == 2
    q = ef.value_quantum()
    assert rep.levels[0] == pytest.approx(-ef.M + q) and rep.levels[-1] == pytest.approx(-q)
    rep = analysis.quasiconvexity_report(ef, 12)
    assert max(rep.defects) <= 5 * u.grid.h
    assert set(rep.verdicts) <= {"convex", "below_threshold"}
    with pytest.raises(AnalysisError):
        analysis.quasiconvexity_report(ef, 1)


def test_monge_ampere_ring_sublevels_convex(offcenter_k2):
    _, u, _ = offcenter_k2
    rep = analysis.quasiconvexity_report(analysis.extend_utilde(u), 10)
    assert max(rep.defects) <= 5 * u.grid.h


def test_measure_ball_away_from_hole(offcenter_k1, offcenter_k2):
    for _, u, _ in (offcenter_k1, offcenter_k2):
        m = analysis.hessian_measure(u, (-0.45, 0.0), 0.3)
        assert abs(m - np.pi * 0.09) <= 4 * u.grid.h


def test_measure_grid_vs_radial(centered_k1):
    u, _ = centered_k1
    prof = solve_radial_ring(0.1, 1.0, 1.0, 2, 1)
    for r in (0.3, 0.5, 0.7):
        grid = analysis.hessian_measure(u, (0.0, 0.0), r)
        radial = analysis.hessian_measure(prof, None, r)
        assert abs(grid - radial) <= 3 * u.grid.h * r * 2 * np.pi
        flux, split = analysis.radial_measure_paths(prof, r)
        assert flux == pytest.approx(split, rel=1e-12)


def test_measure_additive_and_contained(offcenter_k1):
    _, u, _ = offcenter_k1
    ef = analysis.extend_utilde(u)
    X = u.grid.coords
    b1 = np.linalg.norm(X - [-0.4, 0.2], axis=-1) <= 0.2
    b2 = np.linalg.norm(X - [0.5, 0.0], axis=-1) <= 0.3
    assert not (b1 & b2).any()
    total = analysis.hessian_measure_nodes(ef, b1 | b2)
    parts = analysis.hessian_measure_nodes(ef, b1) + analysis.hessian_measure_nodes(ef, b2)
    assert total == pytest.approx(parts, rel=1e-13)
    with pytest.raises(AnalysisError):
        analysis.hessian_measure(u, (0.8, 0.0), 0.3)
    with pytest.raises(AnalysisError):
        analysis.hessian_measure(solve_radial_ring(0.1, 1.0, 1.0, 2, 1), None, 1.5)


def test_mollify_constant_and_linear():
    ef = function_field(lambda X: np.full(X.shape[:-1], -0.3))
    m = analysis.mollify(ef, 4 * H)
    np.testing.assert_allclose(m.values[ef.inside], -0.3, atol=1e-14)
    ef = function_field(lambda X: 0.4 * X[..., 0] - 0.2 * X[..., 1] - 0.5)
    m = analysis.mollify(ef, 4 * H)
    far = ef.base.outer.distance_to_boundary(ef.grid.coords) > 4 * H + 2 * H
    np.testing.assert_allclose(m.values[far & ef.inside], ef.values[far & ef.inside], atol=1e-12)
    with pytest.raises(AnalysisError):
        analysis.mollify(ef, 1.5 * H)


def test_mollified_measure_stabilises(offcenter_k2):
    _, u, _ = offcenter_k2
    ef = analysis.extend_utilde(u)
    h = u.grid.h
    c, r = u.domain.hole_center, 0.35
    base = analysis.hessian_measure(ef, c, r)
    devs = [abs(analysis.hessian_measure(analysis.mollify(ef, f * h), c, r) - base) for f in (8, 4, 2)]
    assert devs[0] >= devs[1] >= devs[2]


def test_level_set_polylines_closed(centered_k1):
    u, _ = centered_k1
    ef = analysis.extend_utilde(u)
    lines = analysis.level_set_polylines(ef, -0.5)
    assert len(lines) == 1
    xy, closed = lines[0]
    assert closed
    r = np.linalg.norm(xy, axis=-1)
    assert r.std() < u.grid.h


def test_verify_estimates(offcenter_k1, offcenter_k2):
    for psi, u, _ in (offcenter_k1, offcenter_k2):
        rep = analysis.verify_estimates(u, psi)
        assert rep["c0_ordering"]["pass"], rep["c0_ordering"]
        assert rep["inner_slopes"]["pass"], rep["inner_slopes"]
        assert rep["outer_slopes"]["pass"], rep["outer_slopes"]
        assert rep["gradient_maximum"]["pass"]
        assert np.isfinite(rep["interior_gradient_constant"]["value"])


def test_interior_gradient_constant_stable_under_refinement(disk):
    consts = []
    for h in (1 / 32, 1 / 64):
        psi = solve_hole_free(disk, Grid.covering(disk, h), 1)
        ring = RingDomain(disk, (0.5, 0.0), 0.12)
        u, _ = solve_ring(ring, Grid.covering(disk, h), 0.6, 1)
        consts.append(analysis.verify_estimates(u, psi)["interior_gradient_constant"]["value"])
    assert abs(consts[1] - consts[0]) / consts[0] <= 0.25
