import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from mppentropy.exceptions import DomainError, InputError
from mppentropy.manifold import get_manifold, householder_frame, unit_ball_volume

TAGS = ["circle", "torus2", "sphere1", "sphere2", "sphere3"]


def rng(seed=0):
    return np.random.default_rng(seed)


# distance -------------------------------------------------------------------

def test_sphere_distance_antipodal_and_orthogonal():
    S = get_manifold("sphere2")
    assert S.distance([1, 0, 0], [-1, 0, 0]) == pytest.approx(np.pi, abs=1e-15)
    assert S.distance([1, 0, 0], [0, 1, 0]) == pytest.approx(np.pi / 2, abs=1e-15)


def test_circle_distance_wraps():
    C = get_manifold("circle")
    expected = min(abs(6.2 - 0.1), 2 * np.pi - abs(6.2 - 0.1))
    assert float(C.distance(0.1, 6.2)) == pytest.approx(expected, abs=1e-14)
    assert expected == pytest.approx(0.18319, abs=1e-5)


def test_sphere_distance_accurate_for_close_points():
    S = get_manifold("sphere2")
    eps = 1e-9
    b = np.array([np.cos(eps), np.sin(eps), 0.0])
    assert S.distance([1, 0, 0], b) == pytest.approx(eps, rel=1e-6)


def test_unnormalized_sphere_point_rejected():
    with pytest.raises(InputError):
        get_manifold("sphere2").as_points([1.0, 1.0, 0.0])


def test_unknown_tag_rejected():
    with pytest.raises(InputError):
        get_manifold("hyperbolic")


@pytest.mark.parametrize("tag", TAGS)
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_distance_metric_axioms(tag, seed):
    M = get_manifold(tag)
    a, b, c = M.sample_uniform(rng(seed), 3)
    dab, dba = M.distance(a, b), M.distance(b, a)
    assert dab == pytest.approx(dba, abs=1e-14)
    assert M.distance(a, a) == pytest.approx(0.0, abs=1e-7)
    assert 0 <= dab <= M.diameter + 1e-12
    assert M.distance(a, c) <= dab + M.distance(b, c) + 1e-12


# exp / log --------------------------------------------------------------------

@pytest.mark.parametrize("tag", TAGS)
def test_exp_of_zero_is_base(tag):
    M = get_manifold(tag)
    x = M.sample_uniform(rng(1), 5)
    np.testing.assert_allclose(M.exp(x, np.zeros((5, M.dim))), x, atol=1e-15)


def test_circle_exp_and_log():
    C = get_manifold("circle")
    assert float(C.exp(0.0, 1.5)[0]) == pytest.approx(1.5)
    assert float(C.log(0.0, 1.0)[0]) == pytest.approx(1.0)


def test_sphere_exp_quarter_turn():
    S = get_manifold("sphere2")
    base = np.array([0.0, 0.0, 1.0])
    E = S.tangent_basis(base)
    coef = E @ np.array([1.0, 0.0, 0.0])
    v = np.pi / 2 * coef / np.linalg.norm(coef)
    out = S.exp(base, v)
    np.testing.assert_allclose(out, [1.0, 0.0, 0.0], atol=1e-15)
    # closed form geodesic cos r base + sin r dir
    r = 0.7
    out = S.exp(base, r * coef / np.linalg.norm(coef))
    np.testing.assert_allclose(out, np.cos(r) * base + np.sin(r) * np.array([1, 0, 0]), atol=1e-15)


@pytest.mark.parametrize("tag", TAGS)
def test_log_of_base_is_zero(tag):
    M = get_manifold(tag)
    x = M.sample_uniform(rng(2), 4)
    np.testing.assert_allclose(M.log(x, x), 0.0, atol=1e-12)


@pytest.mark.parametrize("tag", TAGS)
def test_exp_log_round_trip_1000_pairs(tag):
    M = get_manifold(tag)
    g = rng(3)
    a = M.sample_uniform(g, 1000)
    v = g.standard_normal((1000, M.dim))
    v *= (g.random(1000) * (np.pi - 0.1) / np.linalg.norm(v, axis=1))[:, None]
    b = M.exp(a, v)
    assert np.max(M.distance(M.exp(a, M.log(a, b)), b)) < 1e-9
    np.testing.assert_allclose(M.distance(a, b), np.linalg.norm(v, axis=1), atol=1e-12)


def test_exp_rejects_injectivity_radius():
    S = get_manifold("sphere2")
    with pytest.raises(DomainError):
        S.exp([0, 0, 1.0], [np.pi, 0.0])
    with pytest.raises(DomainError):
        S.log([0, 0, 1.0], [0, 0, -1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 0.1))
def test_householder_frame_orthogonal(v):
    x = np.asarray(v) / np.linalg.norm(v)
    H = householder_frame(x)
    np.testing.assert_allclose(H @ H.T, np.eye(3), atol=1e-14)
    np.testing.assert_allclose(np.abs(H[:, -1] @ x), 1.0, atol=1e-14)


# volume density -------------------------------------------------------------

def test_volume_density_values():
    C = get_manifold("circle")
    assert float(C.volume_density(0.3, 2.0)) == 1.0
    S = get_manifold("sphere2")
    assert float(S.volume_density([0, 0, 1.0], [1.0, 0, 0])) == pytest.approx(2 / np.pi, abs=1e-15)
    eta = np.array([0, 0, 1.0])
    nu = np.array([np.sin(1e-8), 0, np.cos(1e-8)])
    assert float(S.volume_density(eta, nu)) == pytest.approx(1.0, abs=1e-12)


def test_volume_density_matches_numeric_jacobian():
    """det of d exp_eta at v with |v| = pi/2, by central differences."""
    S = get_manifold("sphere2")
    eta = np.array([0.0, 0.0, 1.0])
    v = np.array([np.pi / 2, 0.0])
    h = 1e-6
    J = np.empty((3, 2))
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        J[:, i] = (S.exp(eta, v + e) - S.exp(eta, v - e)) / (2 * h)
    det = np.sqrt(np.linalg.det(J.T @ J))
    nu = S.exp(eta, v)
    assert det == pytest.approx(float(S.volume_density(eta, nu)), abs=1e-6)


# sampling ----------------------------------------------------------------------

def test_uniform_sphere_mean():
    x = get_manifold("sphere2").sample_uniform(rng(4), 100_000)
    assert np.all(np.abs(x.mean(axis=0)) <= 0.02)


@pytest.mark.parametrize("tag", ["circle", "torus2"])
def test_uniform_angles_chi_square(tag):
    x = get_manifold(tag).sample_uniform(rng(5), 100_000)
    for col in x.T:
        counts, _ = np.histogram(col, bins=20, range=(0, 2 * np.pi))
        assert chisquare(counts).pvalue > 0.001


@pytest.mark.parametrize("tag", TAGS)
def test_random_isometries_preserve_distance(tag):
    M = get_manifold(tag)
    pts = M.sample_uniform(rng(6), 20)
    moved = M.random_isometries(rng(7), 3, pts)
    for k in range(3):
        np.testing.assert_allclose(M.distance(moved[k][:-1], moved[k][1:]),
                                   M.distance(pts[:-1], pts[1:]), atol=1e-12)


# quadrature ----------------------------------------------------------------------

@pytest.mark.parametrize("tag", TAGS)
def test_quadrature_weights_sum_to_volume(tag):
    M = get_manifold(tag)
    _, w = M.quadrature_grid(64 if M.dim < 3 else 16)
    assert w.sum() == pytest.approx(M.total_volume, rel=1e-12)


def test_quadrature_sphere_total_and_second_moment():
    S = get_manifold("sphere2")
    x, w = S.quadrature_grid(64)
    assert abs(w.sum() - 4 * np.pi) < 1e-8
    assert abs(np.dot(w, x[:, 0] ** 2) - 4 * np.pi / 3) < 1e-6


def test_quadrature_circle_cos_squared():
    x, w = get_manifold("circle").quadrature_grid(128)
    assert abs(np.dot(w, np.cos(x[:, 0]) ** 2) - np.pi) < 1e-10


def test_quadrature_sphere3_moment():
    S = get_manifold("sphere3")
    x, w = S.quadrature_grid(24)
    assert np.dot(w, x[:, 2] ** 2) == pytest.approx(2 * np.pi ** 2 / 4, rel=1e-10)


def test_quadrature_resolution_guard():
    with pytest.raises(InputError):
        get_manifold("sphere2").quadrature_grid(4)


def _cap_area(tag, r):
    if tag in ("circle", "sphere1"):
        return 2 * r
    if tag == "torus2":
        return np.pi * r ** 2
    if tag == "sphere2":
        return 2 * np.pi * (1 - np.cos(r))
    return 2 * np.pi * (r - np.sin(r) * np.cos(r))


@pytest.mark.parametrize("tag", TAGS)
@pytest.mark.parametrize("radius", [0.1, 0.3, 1.2])
def test_cap_quadrature_area_and_volume_identity(tag, radius):
    M = get_manifold(tag)
    c = M.sample_uniform(rng(8), 1)[0]
    pts, w = M.cap_quadrature(c, radius)
    assert w.sum() == pytest.approx(_cap_area(tag, radius), rel=1e-10)
    assert np.all(M.distance(np.broadcast_to(c, pts.shape), pts) <= radius + 1e-12)
    th = M.volume_density(np.broadcast_to(c, pts.shape), pts)
    assert np.dot(w, 1 / th) == pytest.approx(radius ** M.dim * unit_ball_volume(M.dim), rel=1e-10)
