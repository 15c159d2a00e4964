import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rapg.errors import AntipodalPoints, DomainError, NotOrthonormal, ShapeMismatch
from rapg.geometry import (
    Euclidean,
    Oblique,
    Sphere,
    curvature_constants,
    sectional_curvature_oblique,
)

MANIFOLDS = [Sphere(3), Sphere(20), Oblique(5, 3), Oblique(30, 4)]
seeds = st.integers(0, 2**31 - 1)


def _pair(M, rng, max_dist=2.5):
    x = M.random_point(rng)
    t = rng.uniform(0.05, max_dist)
    v = M.random_tangent(rng, x, t)
    return x, v


@pytest.mark.parametrize("M", MANIFOLDS, ids=repr)
@given(seed=seeds)
@settings(max_examples=40, deadline=None)
def test_exp_log_round_trip(M, seed):
    rng = np.random.default_rng(seed)
    x, v = _pair(M, rng)
    y = M.exp(x, v)
    M.check_point(y)
    # v stays below pi per column so log recovers it
    assert np.max(np.abs(M.log(x, y) - v)) <= 1e-10
    assert np.max(np.abs(M.exp(x, M.log(x, y)) - y)) <= 1e-10


@pytest.mark.parametrize("M", MANIFOLDS, ids=repr)
@given(seed=seeds)
@settings(max_examples=40, deadline=None)
def test_transport_is_isometry_into_tangent_space(M, seed):
    rng = np.random.default_rng(seed)
    x, v = _pair(M, rng)
    y = M.exp(x, v)
    a, b = M.random_tangent(rng, x), M.random_tangent(rng, x, 2.0)
    ta, tb = M.transport(x, y, a), M.transport(x, y, b)
    M.check_tangent(y, ta)
    assert abs(M.inner(y, ta, tb) - M.inner(x, a, b)) <= 1e-12
    # the geodesic velocity is carried to the velocity at the end point
    assert np.allclose(M.transport(x, y, v), -M.log(y, x), atol=1e-10)
    # and transport back is the identity
    assert np.allclose(M.transport(y, x, ta), a, atol=1e-12)


@pytest.mark.parametrize("M", MANIFOLDS, ids=repr)
@given(seed=seeds)
@settings(max_examples=25, deadline=None)
def test_d_exp_matches_central_differences(M, seed):
    rng = np.random.default_rng(seed)
    x, eta = _pair(M, rng, 2.0)
    v = M.random_tangent(rng, x)
    h = 1e-6
    fd = (M.exp(x, eta + h * v) - M.exp(x, eta - h * v)) / (2 * h)
    assert np.max(np.abs(M.d_exp(x, eta, v) - fd)) <= 1e-5


@pytest.mark.parametrize("M", MANIFOLDS, ids=repr)
@given(seed=seeds)
@settings(max_examples=25, deadline=None)
def test_d_exp_adjoint_identity(M, seed):
    rng = np.random.default_rng(seed)
    x, eta = _pair(M, rng, 2.0)
    z = M.exp(x, eta)
    v, w = M.random_tangent(rng, x), M.random_tangent(rng, z)
    lhs = M.inner(z, M.d_exp(x, eta, v), w)
    rhs = M.inner(x, v, M.d_exp_adjoint(x, eta, w))
    assert abs(lhs - rhs) <= 1e-12


def test_small_and_zero_steps():
    M = Sphere(4)
    x = M.normalize(np.arange(1.0, 5.0))
    assert np.allclose(M.exp(x, M.zero(x)), x, rtol=0, atol=4e-16)
    assert np.allclose(M.log(x, x), 0.0)
    v = M.random_tangent(np.random.default_rng(0), x, 1e-12)
    assert np.allclose(M.log(x, M.exp(x, v)), v, rtol=0, atol=1e-15)


def test_antipodal_points_raise():
    M = Sphere(3)
    x = np.array([1.0, 0.0, 0.0])
    with pytest.raises(AntipodalPoints):
        M.log(x, -x)
    with pytest.raises(AntipodalPoints):
        M.transport(x, -x, np.array([0.0, 1.0, 0.0]))


def test_distance_known_values():
    M = Sphere(3)
    e1, e2 = np.eye(3)[0], np.eye(3)[1]
    assert M.dist(e1, e2) == pytest.approx(np.pi / 2, abs=1e-15)
    O = Oblique(3, 2)
    X = np.stack([e1, e1], axis=1)
    Y = np.stack([e2, e1], axis=1)
    assert O.dist(X, Y) == pytest.approx(np.pi / 2, abs=1e-15)
    assert np.allclose(O.column_dists(X, Y), [np.pi / 2, 0.0])


def test_shape_and_domain_checks():
    M = Oblique(4, 2)
    with pytest.raises(ShapeMismatch):
        M.project_tangent(np.ones((4, 2)), np.ones(8))
    with pytest.raises(DomainError):
        M.check_point(np.ones((4, 2)))


def test_tangent_basis_orthonormal():
    for M in MANIFOLDS + [Euclidean(5)]:
        x = M.random_point(np.random.default_rng(1))
        B = np.reshape(M.tangent_basis(x), (M.dim, -1))
        assert B.shape[0] == M.dim
        assert np.allclose(B @ B.T, np.eye(M.dim), atol=1e-12)
        if not isinstance(M, Euclidean):
            for b in M.tangent_basis(x):
                M.check_tangent(x, b)


def test_euclidean_is_flat():
    M = Euclidean(6)
    rng = np.random.default_rng(3)
    x, y, v = rng.standard_normal((3, 6))
    assert np.array_equal(M.exp(x, v), x + v)
    assert np.array_equal(M.log(x, y), y - x)
    assert np.array_equal(M.transport(x, y, v), v)
    assert np.array_equal(M.d_exp(x, v, y), y)


@given(seed=seeds)
@settings(max_examples=100, deadline=None)
def test_oblique_sectional_curvature_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    M = Oblique(6, 3)
    x = M.random_point(rng)
    u = M.random_tangent(rng, x)
    v = M.project_tangent(x, rng.standard_normal(M.shape))
    v = v - M.inner(x, u, v) * u
    v /= M.norm(x, v)
    K = sectional_curvature_oblique(u, v)
    assert -1e-12 <= K <= 1 + 1e-12


def test_oblique_sectional_curvature_extremes():
    n, p = 4, 3
    u = np.zeros((n, p))
    v = np.zeros((n, p))
    u[0, 1], v[2, 1] = 1.0, 1.0
    assert sectional_curvature_oblique(u, v) == 1.0
    w = np.zeros((n, p))
    w[2, 0] = 1.0
    assert sectional_curvature_oblique(u, w) == 0.0
    with pytest.raises(NotOrthonormal):
        sectional_curvature_oblique(u, u)


def test_curvature_constants_closed_forms():
    neg = curvature_constants(-1.0, 0.0, 1.0)
    assert neg.zeta == pytest.approx(1.3130352855, abs=1e-9)
    assert neg.delta == 1.0
    pos = curvature_constants(0.0, 1.0, np.pi / 3)
    assert pos.delta == pytest.approx(0.6045997881, abs=1e-9)
    assert pos.zeta == 1.0
    flat = curvature_constants(0.0, 0.0, 5.0)
    assert (flat.zeta, flat.delta) == (1.0, 1.0)
    with pytest.raises(DomainError):
        curvature_constants(0.0, 1.0, np.pi)
    with pytest.raises(DomainError):
        curvature_constants(0.0, 1.0, 0.0)


@given(kmin=st.floats(-4, 0), kmax=st.floats(0, 4), D=st.floats(1e-3, 1.0))
def test_curvature_constants_ordering(kmin, kmax, D):
    prof = curvature_constants(kmin, kmax, D)
    assert prof.zeta >= 1.0 >= prof.delta
