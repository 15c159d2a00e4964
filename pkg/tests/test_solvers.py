import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from rapg.bench.experiment import ExperimentConfig, build_problem
from rapg.errors import InvalidParams
from rapg.geometry import Euclidean
from rapg.objective import CompositeObjective, L1Norm, LeastSquares
from rapg.solvers import (
    RapgParams,
    SolverState,
    Termination,
    check_D11,
    d11_margin,
    default_theta,
    growth_check,
    make_params,
    min_A0,
    next_schedule,
    potential,
    rapg_step,
    rate_bound,
    rate_constants,
    run,
    schedule_sweep,
    validate_params,
)

seeds = st.integers(0, 2**31 - 1)


@st.composite
def valid_params(draw):
    L = draw(st.floats(1e-2, 1e4))
    rho = draw(st.floats(0, 1)) * L * 0.5
    mu = rho + draw(st.floats(0, 1)) * (L - rho) * 0.99
    xi = draw(st.floats(1, 5))
    lower = max((rho + (mu - rho) * xi) / L, 1.0)
    theta = lower * (1 + draw(st.floats(1e-6, 2.0))) if lower > 1 else 1.0
    p = make_params(L, mu, rho, xi=xi, A0=1.0, theta=theta)
    bound = p.xi * (p.xi - 1) / (1 - p.r * p.xi) if p.r * p.xi < 1 else math.inf
    assume(math.isfinite(bound))
    A0 = bound + draw(st.floats(1e-3, 1e3))
    return replace(p, A0=A0)


def test_exact_schedule_without_strong_convexity():
    p = RapgParams(L=2.0, mu=0.5, rho=0.5, xi=1.0, theta=1.0, A0=6.0)
    s = next_schedule(p, 6.0)
    assert s.A_next == pytest.approx(9.0, abs=1e-14)
    assert s.beta == pytest.approx(1.0, abs=1e-14)
    assert s.gamma == pytest.approx(3.0, abs=1e-14)
    assert s.tau == pytest.approx(1 / 3, abs=1e-14)
    assert next_schedule(p, 12.0).A_next == pytest.approx(16.0, abs=1e-14)


@given(p=valid_params())
@settings(max_examples=200, deadline=None)
def test_schedule_invariants(p):
    A = p.A0
    for k in range(50):
        s = next_schedule(p, A)
        assert s.A_next > A
        assert 0 < s.beta <= 1
        assert s.gamma > 1
        assert 0 < s.tau < 1
        assert s.G_next > 0 and s.P_next > 0 and s.P_k > 0
        assert s.E_next > 0
        assert s.root_residual <= 1e-9
        # A_next solves xi (A_next - A)^2 = A_next (xi + r A_next) up to rounding
        lhs = p.xi * (s.A_next - A) ** 2
        rhs = s.A_next * (p.xi + p.r * s.A_next)
        assert lhs == pytest.approx(rhs, rel=1e-9)
        A = s.A_next


def test_schedule_sweep_counts_nothing_on_valid_grid():
    rng = np.random.default_rng(0)
    r = rng.uniform(0, 0.5, 100)
    xi = rng.uniform(1, 3, 100)
    A0 = xi * (xi - 1) / (1 - r * xi).clip(1e-3) + 1e-2
    ok = r * xi < 1
    rep = schedule_sweep(r[ok], xi[ok], A0[ok], 2000)
    assert rep.ok, rep.violations
    assert rep.max_root_residual <= 1e-9


def test_validate_params_rejections():
    good = make_params(10.0, 1.0, 0.1)
    validate_params(good)
    bad = [
        replace(good, L=0.5),
        replace(good, mu=0.05),
        replace(good, xi=0.5),
        replace(good, zeta=0.9),
        replace(good, delta=1.1),
        replace(good, theta=0.9),
        replace(good, xi=3.0, zeta=1.0, A0=1e-6),
    ]
    for p in bad:
        with pytest.raises(InvalidParams):
            validate_params(p)


def test_theta_at_its_lower_bound():
    # with mu > rho the bound makes r xi = 1, which no finite A0 admits
    p = make_params(1.0, 0.99, 0.0, xi=3.28125, A0=1e3)
    assert p.theta == pytest.approx(0.99 * 3.28125)
    with pytest.raises(InvalidParams, match="equality"):
        validate_params(p)
    # with mu = rho the bound is rho / L, reachable only when rho = L, which L > mu excludes
    assert default_theta(2.0, 0.5, 0.5, 3.0) == 1.0


def test_make_params_clamps_mu():
    p = make_params(10.0, -0.3, 0.002)
    assert p.mu == 0.002
    assert p.theta == 1.0


def test_condition_classification_and_min_A0():
    flat = make_params(10.0, 1.0)
    assert validate_params(flat).applicable_condition == "i"
    two = make_params(10.0, 1.0, xi=1.5, A0=1.0)
    rep = validate_params(two)
    assert rep.applicable_condition == "ii"
    A0 = min_A0(two)
    rep = validate_params(replace(two, A0=A0))
    assert rep.satisfied and rep.A1 >= rep.A1_lower
    curved = make_params(10.0, 1.0, xi=1.6, A0=2.0, zeta=1.2, delta=0.8)
    rep = validate_params(curved)
    assert rep.applicable_condition == "iii"
    A0 = min_A0(curved)
    assert validate_params(replace(curved, A0=A0)).satisfied
    low = replace(curved, xi=1.3)
    assert validate_params(low).applicable_condition == "none"
    with pytest.raises(InvalidParams):
        validate_params(curved, lam=5.0)


def test_D11_holds_along_schedule_under_curved_condition():
    p = make_params(10.0, 1.0, xi=1.6, A0=2.0, zeta=1.2, delta=0.8)
    p = replace(p, A0=min_A0(p))
    A = p.A0
    for _ in range(2000):
        s = next_schedule(p, A)
        assert check_D11(s, p), d11_margin(s, p)
        A = s.A_next


def test_D11_trivial_in_flat_case():
    p = make_params(10.0, 1.0)
    s = next_schedule(p, p.A0)
    assert d11_margin(s, p) == 0.0


def _lasso(seed=0, m=30, n=50, lam=0.1):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    f = LeastSquares(B, b)
    return f, CompositeObjective(f.manifold, f, L1Norm(lam))


def _nag_reference(f, lam, p, x0, n_steps):
    """Flat-space recursion written directly from soft-thresholding."""
    c = p.theta * p.L
    x, z, A = x0.copy(), x0.copy(), p.A0
    xs = [x]
    for _ in range(n_steps):
        A_next = (1 + 2 * A + math.sqrt(1 + 4 * A)) / 2  # xi = 1, r = 0
        beta = 1.0
        gamma = (A_next - A)
        tau = 1.0 / (gamma * A / A_next + 1.0)
        y = x + tau * (z - x)
        v = y - f.grad(y) / c
        xn = np.sign(v) * np.maximum(np.abs(v) - lam / c, 0.0)
        z = beta * z + (1 - beta) * y + gamma * (xn - y)
        x, A = xn, A_next
        xs.append(x)
    return xs


def test_flat_reduction_matches_recursion():
    f, obj = _lasso()
    p = make_params(f.L, 0.0, 0.0)
    x0 = np.zeros(50)
    ref = _nag_reference(f, 0.1, p, x0, 100)
    st_ = SolverState(x0.copy(), x0.copy(), p.A0)
    for k in range(100):
        st_ = rapg_step(st_, p, obj)
        assert np.max(np.abs(st_.x - ref[k + 1])) <= 1e-12 * (1 + np.max(np.abs(ref[k + 1])))


def test_growth_and_rate_bounds_on_lasso():
    f, obj = _lasso(1)
    p = make_params(f.L * (1 + 1e-9), f.mu, 0.0)
    x0 = np.zeros(50)
    rec = run(x0, p, obj, termination=Termination(max_iters=300, eta_tol=0.0))
    assert growth_check(rec.column("A"), p).ok()
    long = run(x0, p, obj, termination=Termination(max_iters=5000, eta_tol=1e-28))
    F_star = min(long.column("F"))
    x_star = long.x_final
    bound = rate_bound(p, obj.value(x0) - F_star, np.linalg.norm(x_star), rec.column("k"))
    assert np.all(rec.column("F") - F_star <= bound + 1e-10)


def test_rate_constants():
    p = make_params(4.0, 1.0, A0=0.5)
    C1, C2 = rate_constants(p, 2.0, 3.0)
    w = 4.0 + 0.5
    assert C1 == pytest.approx(2.0 + w / 1.0 * 9.0)
    assert C2 == pytest.approx(2.0 + w * 9.0)
    assert rate_bound(p, 2.0, 3.0, 0) == pytest.approx(min(C1, 2 * C2 / (2 * math.sqrt(0.5)) ** 2))


def test_potential_vanishes_at_minimizer():
    f, obj = _lasso(2)
    p = make_params(f.L, 0.0)
    x = np.ones(50)
    st_ = SolverState(x, x.copy(), 1.0)
    assert potential(st_, x, obj.value(x), p, obj) == 0.0


def test_rpg_is_monotone_on_convex_problem():
    f, obj = _lasso(3)
    p = make_params(f.L * (1 + 1e-9), 0.0)
    rec = run(np.zeros(50), p, obj, termination=Termination(max_iters=300), algorithm="RPG")
    F = rec.column("F")
    assert np.all(np.diff(F) <= 1e-12 * (1 + np.abs(F[:-1])))
    assert rec.monotone_violations == 0


def test_run_termination_reasons():
    f, obj = _lasso(4)
    p = make_params(f.L * (1 + 1e-9), f.mu)
    x0 = np.zeros(50)
    r = run(x0, p, obj, termination=Termination(max_iters=20))
    assert r.reason == "max_iters" and r.iterations == 20
    assert len(r.rows["k"]) == 21
    e = run(x0, p, obj, termination=Termination(max_iters=10000, eta_tol=1e-10))
    assert e.reason == "eta"
    eta = e.column("eta_norm")[-1]
    assert (p.L * eta) ** 2 < 1e-10 * 50
    ref = run(x0, p, obj, termination=Termination(F_ref=e.F_final + 1e-3))
    assert ref.reason == "reference" and ref.F_final < e.F_final + 1e-3
    seen = []
    run(x0, p, obj, termination=Termination(max_iters=3, callback=lambda s, n: seen.append(n.k)))
    assert seen == [1, 2, 3]
    with pytest.raises(ValueError):
        run(x0, p, obj, algorithm="FISTA")


def test_sphere_quadratic_instance_stays_in_orthant():
    prob = build_problem(ExperimentConfig(model="SphereQuadratic", n=3, lam=0.01, rho=0.02))
    assert np.all(prob.x0 > 0)
    assert np.all(prob.info["target"] > 0)
