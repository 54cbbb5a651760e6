import numpy as np
import pytest
from hypothesis import given, strategies as st

from ergodic_hjb import geometry as geo
from ergodic_hjb.errors import BadDelta, OutsideCollar

SHAPES = {
    "interval": geo.interval(-1.0, 1.0),
    "ball": geo.ball((0.0, 0.0), 1.0),
    "annulus": geo.annulus((0.0, 0.0), 0.5, 1.0),
    "halfplane": geo.halfplane_patch(0.5),
}


def collar_points(geom, n, seed=0):
    """Random points strictly inside the collar (and away from the ball centre)."""
    rng = np.random.default_rng(seed)
    lo, hi = geom.bounding_box
    out = []
    while sum(len(o) for o in out) < n:
        x = rng.uniform(lo - 0.2, hi + 0.2, size=(4 * n, geom.dimension))
        d = geo.signed_distance(geom, x)
        ok = np.abs(d) < 0.95 * geom.smoothness_radius
        if geom.shape in ("ball", "annulus"):
            ok &= np.linalg.norm(x, axis=1) > 0.05
        out.append(x[ok])
    return np.vstack(out)[:n]


class TestSignedDistance:
    def test_ball_center(self):
        assert geo.signed_distance(SHAPES["ball"], [0.0, 0.0]) == pytest.approx(1.0)

    def test_interval_point(self):
        assert geo.signed_distance(SHAPES["interval"], 0.4) == pytest.approx(0.6)

    def test_exterior_is_negative(self):
        assert geo.signed_distance(SHAPES["ball"], [2.0, 0.0]) == pytest.approx(-1.0)

    def test_boundary_is_zero(self):
        pts, _ = geo.boundary_points(SHAPES["annulus"], 64)
        assert np.abs(geo.signed_distance(SHAPES["annulus"], pts)).max() < 1e-12

    @pytest.mark.parametrize("name", list(SHAPES))
    def test_one_lipschitz(self, name):
        geom = SHAPES[name]
        rng = np.random.default_rng(3)
        lo, hi = geom.bounding_box
        x = rng.uniform(lo - 0.5, hi + 0.5, size=(2000, geom.dimension))
        y = rng.uniform(lo - 0.5, hi + 0.5, size=(2000, geom.dimension))
        gap = np.abs(geo.signed_distance(geom, x) - geo.signed_distance(geom, y))
        assert np.all(gap <= np.linalg.norm(x - y, axis=1) + 1e-12)


class TestDistanceJet:
    def test_ball_closed_form(self):
        x = np.array([0.9, 0.0])
        d, g, H = geo.distance_jet(SHAPES["ball"], x)
        xh = x / 0.9
        assert d == pytest.approx(0.1)
        np.testing.assert_allclose(g, -xh, atol=1e-14)
        np.testing.assert_allclose(H, -(np.eye(2) - np.outer(xh, xh)) / 0.9, atol=1e-14)

    def test_halfplane(self):
        d, g, H = geo.distance_jet(SHAPES["halfplane"], [0.3, 0.05])
        assert d == pytest.approx(0.05)
        np.testing.assert_array_equal(g, [0.0, 1.0])
        np.testing.assert_array_equal(H, np.zeros((2, 2)))

    def test_interval(self):
        d, g, H = geo.distance_jet(SHAPES["interval"], 0.5)
        assert d == pytest.approx(0.5)
        assert np.ravel(g)[0] == -1.0
        assert np.ravel(H)[0] == 0.0

    def test_outside_collar(self):
        with pytest.raises(OutsideCollar):
            geo.distance_jet(SHAPES["ball"], [0.1, 0.0])

    @pytest.mark.parametrize("name", list(SHAPES))
    def test_unit_gradient(self, name):
        geom = SHAPES[name]
        x = collar_points(geom, 10_000, seed=1)
        _, g, _ = geo.distance_jet(geom, x)
        norms = np.linalg.norm(g.reshape(len(x), -1), axis=1)
        assert np.abs(norms - 1).max() <= 1e-9

    @pytest.mark.parametrize("name", list(SHAPES))
    def test_finite_differences(self, name):
        geom = SHAPES[name]
        n = geom.dimension
        x = collar_points(geom, 400, seed=2)
        # keep central-difference stencils on one side of the interval's midpoint kink
        if name == "interval":
            x = x[np.abs(x[:, 0]) > 1e-3]
        d, g, H = geo.distance_jet(geom, x)
        g = g.reshape(len(x), n)
        H = H.reshape(len(x), n, n)
        h = 1e-5
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            dp = geo.signed_distance(geom, x + e)
            dm = geo.signed_distance(geom, x - e)
            np.testing.assert_allclose((dp - dm) / (2 * h), g[:, j], atol=1e-6)
            gp = geo.distance_jet(geom, x + e)[1].reshape(len(x), n)
            gm = geo.distance_jet(geom, x - e)[1].reshape(len(x), n)
            np.testing.assert_allclose((gp - gm) / (2 * h), H[:, :, j], atol=1e-5)

    @pytest.mark.parametrize("name", ["ball", "annulus", "halfplane", "interval"])
    def test_eikonal_consistency(self, name):
        geom = SHAPES[name]
        x = collar_points(geom, 500, seed=4)
        d, g, _ = geo.distance_jet(geom, x)
        g = g.reshape(len(x), -1)
        t = 0.01 * geom.smoothness_radius
        room = np.abs(d) + t < 0.95 * geom.smoothness_radius
        if name == "interval":
            room &= np.abs(x[:, 0]) > 2 * t
        moved = geo.signed_distance(geom, x[room] + t * g[room])
        np.testing.assert_allclose(moved, d[room] + t, atol=1e-9)


@given(st.floats(0.05, 0.95), st.floats(-np.pi, np.pi))
def test_ball_gradient_points_to_center(r_frac, theta):
    geom = SHAPES["ball"]
    r = 1 - 0.5 * r_frac
    x = r * np.array([np.cos(theta), np.sin(theta)])
    _, g, H = geo.distance_jet(geom, x)
    np.testing.assert_allclose(g, -x / r, atol=1e-12)
    # the Hessian of d annihilates the normal direction
    np.testing.assert_allclose(H @ g, 0.0, atol=1e-12)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_sign_matches_membership(a, b):
    geom = SHAPES["annulus"]
    r = np.hypot(a, b)
    d = geo.signed_distance(geom, [a, b])
    if 0.5 < r < 1:
        assert d > 0
    elif r < 0.5 or r > 1:
        assert d < 0


class TestRings:
    def test_interval_ring(self):
        pts = geo.ring_points(SHAPES["interval"], 0.1)
        x = pts[:, 0]
        assert np.all(((x > -1) & (x < -0.9)) | ((x > 0.9) & (x < 1)))

    def test_ball_ring(self):
        r = np.linalg.norm(geo.ring_points(SHAPES["ball"], 0.25), axis=1)
        assert np.all((r > 0.75) & (r < 1))

    def test_bad_delta(self):
        with pytest.raises(BadDelta):
            geo.ring_points(SHAPES["ball"], 10.0)

    def test_halfplane_window(self):
        pts = geo.ring_points(SHAPES["halfplane"], 0.1)
        assert np.all(np.abs(pts[:, 0]) <= 0.5)
        assert np.all((pts[:, 1] > 0) & (pts[:, 1] < 0.1))

    @given(st.floats(0.01, 0.5))
    def test_ring_points_inside_ring(self, delta):
        d = geo.signed_distance(SHAPES["annulus"], geo.ring_points(SHAPES["annulus"], delta * 0.5, 16))
        assert np.all((d > 0) & (d < delta * 0.5))


def test_from_dict_roundtrip():
    g = geo.from_dict({"shape": "ball", "center": [0.5, 0.0], "radius": 2.0})
    assert g.smoothness_radius == 1.0
    assert geo.from_dict(g.to_dict()).to_dict() == g.to_dict()


def test_project_to_boundary_lands_on_boundary():
    x = np.array([[1.3, 0.2], [0.2, -0.95]])
    p = geo.project_to_boundary(SHAPES["ball"], x)
    np.testing.assert_allclose(np.linalg.norm(p, axis=1), 1.0, atol=1e-14)
