import math

import numpy as np

from mapdrive import geom


def test_heading_convention():
    # 0 deg = +y (north), positive counter-clockwise
    assert geom.heading_of((0, 1)) == 0.0
    assert geom.heading_of((-1, 0)) == 90.0
    assert geom.heading_of((1, 0)) == -90.0
    assert geom.heading_of((0, -1)) == -180.0


def test_normalize_heading_range():
    rng = np.random.default_rng(0)
    for h in rng.uniform(-1000, 1000, 500):
        w = geom.normalize_heading(h)
        assert -180.0 <= w < 180.0
        # same angle modulo 360
        assert math.isclose(math.cos(math.radians(w)), math.cos(math.radians(h)), abs_tol=1e-9)
        assert math.isclose(math.sin(math.radians(w)), math.sin(math.radians(h)), abs_tol=1e-9)


def test_heading_to_unit_roundtrip():
    rng = np.random.default_rng(1)
    for h in rng.uniform(-180, 179.99, 200):
        u = geom.heading_to_unit(h)
        assert math.isclose(geom.heading_of(u), h, abs_tol=1e-9)
        assert math.isclose(np.linalg.norm(u), 1.0, abs_tol=1e-12)


def test_point_and_tangent_at():
    pl = np.array([[0.0, 0.0], [0.0, 10.0], [5.0, 10.0]])
    cums = geom.cumulative_lengths(pl)
    assert np.allclose(geom.point_at(pl, cums, 0.0), [0, 0])
    assert np.allclose(geom.point_at(pl, cums, 4.0), [0, 4])
    assert np.allclose(geom.point_at(pl, cums, 12.0), [2, 10])
    assert np.allclose(geom.point_at(pl, cums, 99.0), [5, 10])  # clamped
    assert np.allclose(geom.tangent_at(pl, cums, 4.0), [0, 1])
    assert np.allclose(geom.tangent_at(pl, cums, 12.0), [1, 0])
    # right-open pieces: exactly at the joint the next piece wins
    assert np.allclose(geom.tangent_at(pl, cums, 10.0), [1, 0])
    # at the very end the last piece is used
    assert np.allclose(geom.tangent_at(pl, cums, 15.0), [1, 0])


def test_project_to_polyline_against_dense_sampling():
    rng = np.random.default_rng(7)
    pl = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 8.0], [4.0, 14.0]])
    cums = geom.cumulative_lengths(pl)
    total = cums[-1]
    dense_s = np.linspace(0, total, int(total * 100) + 1)  # 1 cm sampling
    dense_pts = np.array([geom.point_at(pl, cums, s) for s in dense_s])
    for _ in range(50):
        p = rng.uniform(-5, 20, 2)
        s, q, d = geom.project_to_polyline(pl, p)
        dists = np.linalg.norm(dense_pts - p, axis=1)
        k = int(np.argmin(dists))
        assert d <= dists[k] + 1e-6
        assert abs(s - dense_s[k]) < 0.02 or abs(d - dists[k]) < 1e-6
        assert math.isclose(np.linalg.norm(np.asarray(q) - p), d, abs_tol=1e-12)


def test_projection_tie_keeps_smallest_arclength():
    # square U shape: point equidistant from the two vertical arms
    pl = np.array([[0.0, 0.0], [0.0, 10.0], [10.0, 10.0], [10.0, 0.0]])
    s, q, d = geom.project_to_polyline(pl, (5.0, 5.0))
    assert math.isclose(d, 5.0, abs_tol=1e-12)
    assert s <= 10.0  # first arm wins the tie


def test_circumradius_and_menger():
    # three points on the unit circle
    assert math.isclose(geom.circumradius((1, 0), (0, 1), (-1, 0)), 1.0, rel_tol=1e-12)
    assert geom.circumradius((0, 0), (1, 1), (2, 2)) == math.inf
    assert geom.menger_curvature((0, 0), (1, 1), (2, 2)) == 0.0
    # radius-100 circle points -> curvature 0.01
    a = geom.arc_points((0, 0), 100.0, 0.0, 30.0, step_m=2.0)
    k = geom.menger_curvature(a[0], a[len(a) // 2], a[-1])
    assert math.isclose(k, 0.01, rel_tol=1e-9)


def test_rotate_points():
    pts = np.array([[1.0, 0.0], [0.0, 2.0]])
    out = geom.rotate_points(pts, 90.0)
    assert np.allclose(out, [[0, 1], [-2, 0]], atol=1e-12)
