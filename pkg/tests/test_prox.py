import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rapg.errors import DimensionTooLarge
from rapg.geometry import Euclidean, Oblique, Sphere
from rapg.objective import L1Norm, SquaredDistance
from rapg.prox import (
    SOLVERS,
    ProxProblem,
    ell_value,
    register_solver,
    solve,
    solve_grid_oracle,
    stationarity_residual,
)

seeds = st.integers(0, 2**31 - 1)


def _random_problem(M, rng, gscale=2.0, lam_frac=0.3):
    y = M.random_point(rng)
    g = M.random_tangent(rng, y, rng.uniform(0, gscale))
    c = rng.uniform(1, 5)
    lam = rng.uniform(0, lam_frac * c)
    return ProxProblem(M, y, g, c, L1Norm(lam))


def test_coeff_must_exceed_rho():
    M = Sphere(3)
    y = np.eye(3)[0]
    with pytest.raises(ValueError):
        ProxProblem(M, y, np.zeros(3), 0.5, L1Norm(1.0, rho=1.0))


def test_no_l1_term_gives_gradient_step():
    M = Sphere(4)
    rng = np.random.default_rng(0)
    y = M.random_point(rng)
    g = M.random_tangent(rng, y, 0.7)
    p = ProxProblem(M, y, g, 2.0, L1Norm(0.0))
    sol = solve(p)
    assert np.allclose(sol.eta, -g / 2.0)
    assert stationarity_residual(p, -g / 2.0) == pytest.approx(0.0, abs=1e-15)


@given(seed=seeds)
@settings(max_examples=50, deadline=None)
def test_euclidean_closed_form_kkt(seed):
    rng = np.random.default_rng(seed)
    n = 12
    M = Euclidean(n)
    y, g = rng.standard_normal((2, n))
    c, lam = rng.uniform(0.5, 3), rng.uniform(0, 2)
    p = ProxProblem(M, y, g, c, L1Norm(lam))
    sol = solve(p)
    x = y + sol.eta
    # optimality of c/2 |x - (y - g/c)|^2 + lam |x|_1, checked coordinatewise
    grad = c * (x - y) + g
    nz = x != 0
    assert np.allclose(grad[nz], -lam * np.sign(x[nz]), atol=1e-12)
    assert np.all(np.abs(grad[~nz]) <= lam + 1e-12)
    assert sol.residual <= 1e-12


def test_residual_at_zero_lower_bound():
    M = Sphere(5)
    y = M.normalize(np.array([1.0, 0.5, 0.0, 0.0, 0.2]))
    g = M.project_tangent(y, np.array([0.0, 0.0, 10.0, 0.0, 0.0]))
    lam = 1.0
    p = ProxProblem(M, y, g, 2.0, L1Norm(lam))
    r0 = stationarity_residual(p, M.zero(y))
    # the third coordinate is zero at y and its gradient entry exceeds lam by 9
    assert r0 >= np.max(np.abs(g)) - lam - 1e-12


@given(seed=seeds)
@settings(max_examples=40, deadline=None)
def test_sphere_solver_matches_grid_oracle(seed):
    rng = np.random.default_rng(seed)
    p = _random_problem(Sphere(3), rng)
    sol = solve(p)
    ora = solve_grid_oracle(p)
    assert abs(sol.ell_at_eta - ora.ell_at_eta) <= 1e-6
    assert sol.ell_at_eta <= sol.ell_at_zero
    assert sol.ell_at_eta <= ora.ell_at_eta + 1e-9


@given(seed=seeds, n=st.integers(3, 40), p=st.integers(1, 5))
@settings(max_examples=60, deadline=None)
def test_descent_contract_and_convergence(seed, n, p):
    rng = np.random.default_rng(seed)
    M = Oblique(n, p)
    prob = _random_problem(M, rng, gscale=5.0, lam_frac=1.0)
    sol = solve(prob)
    assert sol.ell_at_eta <= sol.ell_at_zero
    assert sol.ell_at_eta == pytest.approx(ell_value(prob, sol.eta), rel=1e-12, abs=1e-12)
    # the working ball is imposed column by column
    angles = np.linalg.norm(sol.eta, axis=0)
    assert np.all(angles <= np.pi / 2 + 1e-12)
    assert np.allclose(sol.z, M.exp(prob.y, sol.eta), atol=1e-12)
    if np.all(angles < np.pi / 2 - 1e-2):
        # interior solution: the residual certifies stationarity
        scale = 1 + np.linalg.norm(prob.g) + prob.h.lam * np.sqrt(M.ambient_size)
        assert sol.residual <= 1e-6 * scale


def test_sparse_solutions_have_exact_zeros():
    M = Sphere(30)
    rng = np.random.default_rng(3)
    y = M.random_point(rng)
    p = ProxProblem(M, y, M.random_tangent(rng, y, 0.1), 5.0, L1Norm(1.0))
    sol = solve(p)
    assert np.sum(sol.z == 0.0) > 0
    assert sol.converged


def test_subgradient_solver_close_to_default():
    rng = np.random.default_rng(5)
    for _ in range(5):
        p = _random_problem(Sphere(3), rng, lam_frac=0.1)
        a = solve(p)
        b = solve(p, method="subgradient", max_iters=2000)
        assert b.ell_at_eta <= b.ell_at_zero
        assert b.ell_at_eta - a.ell_at_eta <= 1e-3


def test_register_solver_slot():
    calls = []

    def closed(p, tol, max_iters):
        calls.append(1)
        return SOLVERS["sphere_pg"](p, tol, max_iters)

    register_solver("test_slot", closed)
    try:
        p = _random_problem(Sphere(3), np.random.default_rng(6))
        solve(p, method="test_slot")
        assert calls == [1]
    finally:
        SOLVERS.pop("test_slot")


def test_grid_oracle_dimension_limit():
    M = Sphere(5)
    p = _random_problem(M, np.random.default_rng(7))
    with pytest.raises(DimensionTooLarge):
        solve_grid_oracle(p)


def test_proximal_inequality_on_convex_instance():
    # half squared distance on a small cap, l1 weighted so that rho covers its concavity
    M = Sphere(3)
    rng = np.random.default_rng(8)
    target = M.normalize(np.array([1.0, 1.2, 0.9]))
    f = SquaredDistance(M, target)
    lam, rho, L, D = 0.01, 0.02, 1.0, 0.4
    mu = D / np.tan(D)
    for _ in range(10):
        y = M.exp(target, M.random_tangent(rng, target, 0.1))
        p = ProxProblem(M, y, f.grad(y), L, L1Norm(lam, rho))
        sol = solve(p)
        xp = sol.z
        F = lambda x: f.value(x) + lam * np.sum(np.abs(x))
        for _ in range(50):
            x = M.exp(y, M.random_tangent(rng, y, rng.uniform(0, 0.1)))
            lx = M.log(y, x)
            rhs = 0.5 * (L - rho) * np.sum((lx - sol.eta) ** 2) - 0.5 * (L - mu) * np.sum(lx**2)
            assert F(x) - F(xp) >= rhs - 1e-12
