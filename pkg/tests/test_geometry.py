import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from khessian.geometry import (
    EXTERIOR,
    HOLE,
    INTERIOR,
    NEAR_INNER,
    NEAR_OUTER,
    ConvexDomain,
    GeometryError,
    Grid,
    HoleTooSmallForGrid,
    NotACutArm,
    RingDomain,
    boundary_intersection,
    classify_nodes,
)


def test_domain_validation():
    with pytest.raises(GeometryError):
        ConvexDomain.ball((0, 0), -1.0)
    with pytest.raises(GeometryError):
        ConvexDomain.p_ball((0, 0), 1.0, 1.5)
    with pytest.raises(GeometryError):
        ConvexDomain.ellipsoid((0, 0), (1.0, 0.0))


@pytest.mark.parametrize(
    "dom",
    [ConvexDomain.ball((0.1, 0), 1.0), ConvexDomain.ellipsoid((0, 0), (1.0, 0.6)), ConvexDomain.p_ball((0, 0), 1.0, 4)],
)
def test_gauge_membership_consistent(dom):
    rng = np.random.default_rng(0)
    X = rng.uniform(-1.3, 1.3, size=(500, 2))
    assert np.array_equal(dom.contains(X), dom.gauge(X) < 1)
    np.testing.assert_allclose(dom.gauge(dom.boundary_samples), 1.0, atol=1e-12)


def test_hole_count_matches_area(disk):
    ring = RingDomain(disk, (0.0, 0.0), 0.1)
    g = classify_nodes(Grid.covering(disk, 0.02), ring)
    count = int(np.sum(g.node_class == HOLE))
    assert abs(count - np.pi * 0.1**2 / 0.02**2) <= 0.05 * np.pi * 0.1**2 / 0.02**2


def test_tangent_hole_rejected(disk):
    with pytest.raises(GeometryError):
        RingDomain(disk, (0.9, 0.0), 0.1)


def test_hole_too_small(disk):
    with pytest.raises(HoleTooSmallForGrid):
        classify_nodes(Grid.covering(disk, 0.02), RingDomain(disk, (0.0, 0.0), 0.03))


def test_node_classes_partition_and_layers(disk):
    ring = RingDomain(disk, (0.3, -0.2), 0.15)
    g = classify_nodes(Grid.covering(disk, 0.05), ring)
    nc = g.node_class
    assert set(np.unique(nc)) <= {INTERIOR, NEAR_OUTER, NEAR_INNER, HOLE, EXTERIOR}
    # at least one exterior layer on every face
    for ax in range(2):
        assert np.all(np.take(nc, 0, axis=ax) == EXTERIOR)
        assert np.all(np.take(nc, -1, axis=ax) == EXTERIOR)
    # interior nodes have all axis neighbours active
    act = g.active
    for ax in range(2):
        for s in (1, -1):
            nb = np.roll(act, -s, axis=ax)
            assert np.all(nb[nc == INTERIOR])
    X = g.coords
    r = np.linalg.norm(X - np.array([0.3, -0.2]), axis=-1)
    assert np.array_equal(nc == HOLE, r <= 0.15)


def test_classification_deterministic(disk):
    ring = RingDomain(disk, (0.3, -0.2), 0.15)
    a = classify_nodes(Grid.covering(disk, 0.05), ring).node_class
    b = classify_nodes(Grid.covering(disk, 0.05), ring).node_class
    assert np.array_equal(a, b)


def test_interior_area_converges(disk):
    ring = RingDomain(disk, (0.0, 0.0), 0.2)
    area = np.pi * (1 - 0.04)
    errs = []
    for h in (1 / 16, 1 / 32, 1 / 64, 1 / 128):
        g = classify_nodes(Grid.covering(disk, h), ring)
        errs.append(abs(g.active.sum() * h**2 - area))
        assert errs[-1] <= 8 * h
    assert errs[-1] < errs[0]


def test_cut_arm_examples(disk):
    h = 0.05
    eps = 0.2
    ring = RingDomain(disk, (0.1, 0.0), eps)
    node = np.array([0.1 + eps + 0.4 * h, 0.0])
    theta, pt, which = boundary_intersection(node, np.array([-1.0, 0.0]), ring, h)
    assert which == "inner" and theta == pytest.approx(0.4, abs=1e-12)
    theta, pt, which = boundary_intersection(np.array([1 - 0.25 * h, 0.0]), np.array([1.0, 0.0]), ring, h)
    assert which == "outer" and theta == pytest.approx(0.25, abs=1e-12)
    with pytest.raises(NotACutArm):
        boundary_intersection(np.array([0.5, 0.0]), np.array([1.0, 0.0]), ring, h)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 2 * np.pi), st.floats(0.05, 0.95))
def test_p_ball_intersection_on_boundary(angle, frac):
    dom = ConvexDomain.p_ball((0, 0), 1.0, 4)
    h = 0.05
    b = dom.boundary_samples[int(angle / (2 * np.pi) * len(dom.boundary_samples)) % len(dom.boundary_samples)]
    ax = int(np.argmax(np.abs(b)))
    e = np.zeros(2)
    e[ax] = np.sign(b[ax])
    node = b - frac * h * e
    if dom.gauge(node) >= 1:
        return
    theta, pt, which = boundary_intersection(node, e, dom, h)
    assert which == "outer"
    assert abs(dom.gauge(pt) - 1.0) <= 1e-12
    assert 0 < theta <= 1


def test_distance_and_normal(disk):
    X = np.array([[0.0, 0.0], [0.5, 0.0], [0.0, -0.9]])
    np.testing.assert_allclose(disk.distance_to_boundary(X), [1.0, 0.5, 0.1], atol=1e-12)
    np.testing.assert_allclose(disk.inward_normal(np.array([[1.0, 0.0]])), [[-1.0, 0.0]], atol=1e-12)
    ell = ConvexDomain.ellipsoid((0, 0), (2.0, 1.0))
    assert ell.farthest_boundary_point((0.5, 0.0))[0] == pytest.approx(-2.0, abs=1e-3)
    assert ell.volume() == pytest.approx(2 * np.pi)
