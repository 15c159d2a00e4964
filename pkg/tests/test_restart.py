import numpy as np
import pytest

from rapg.errors import InvalidParams, LEscalationDiverged
from rapg.objective import CompositeObjective, L1Norm, LeastSquares
from rapg.prox import ProxProblem, ProxSolution, solve
from rapg.restart import (
    SafeguardConfig,
    SafeguardState,
    ar_rapg_run,
    line_search,
    reference_values,
    safeguard,
)
from rapg.solvers import Termination, make_params, run


def _lasso(seed=0, m=30, n=50, lam=0.1):
    rng = np.random.default_rng(seed)
    f = LeastSquares(rng.standard_normal((m, n)), rng.standard_normal(m))
    return f, CompositeObjective(f.manifold, f, L1Norm(lam))


def test_config_validation():
    SafeguardConfig()
    for kw in [dict(N_min=0), dict(N0=20), dict(tau_L=1.0), dict(sigma=1.0), dict(iota=0.0), dict(N_ls=0)]:
        with pytest.raises(InvalidParams):
            SafeguardConfig(**kw)


def test_line_search_accepts_descent_direction():
    f, obj = _lasso()
    x = np.zeros(50)
    eta = -f.grad(x) / f.L
    ls = line_search(x, eta, SafeguardConfig(), obj)
    assert ls.accepted and ls.iters == 0 and ls.alpha == 1.0
    assert ls.accepted_F <= obj.value(x) - 1e-4 * np.sum(eta**2)


def test_line_search_rejects_ascent_after_budget():
    f, obj = _lasso()
    x = np.zeros(50)
    eta = f.grad(x)
    cfg = SafeguardConfig(N_ls=3, iota=0.5)
    ls = line_search(x, eta, cfg, obj)
    assert not ls.accepted
    assert ls.iters == 3 and ls.alpha == 0.125
    assert ls.f_evals == 5


def test_safeguard_trigger_and_updates():
    f, obj = _lasso(1)
    p = make_params(f.L, 0.0)
    cfg = SafeguardConfig()
    x_tilde = np.zeros(50)
    # a current iterate much worse than the reference forces a restart
    x_bad = np.full(50, 5.0)
    st = SafeguardState(x_tilde, 5, p.L, 5)
    out = safeguard(st, x_bad, x_bad, 10.0, p, cfg, obj)
    assert out.triggered
    assert out.new_A_k == p.A0
    assert np.array_equal(out.new_x_k, out.new_z_k)
    assert out.F_trial < obj.value(x_tilde)
    assert out.N_next == 4 and out.L_next == pytest.approx(1.1 * p.L)
    # a current iterate better than the trial leaves the state alone and widens N
    x_star = run(x_tilde, p, obj, termination=Termination(max_iters=2000)).x_final
    out = safeguard(st, x_star, x_star, 10.0, p, cfg, obj)
    assert not out.triggered
    assert out.N_next == 6 and out.L_next == p.L
    assert out.new_A_k == 10.0


def test_safeguard_at_N_max_keeps_L():
    f, obj = _lasso(1)
    p = make_params(f.L, 0.0)
    st = SafeguardState(np.zeros(50), 10, p.L, 10)
    out = safeguard(st, np.full(50, 5.0), np.full(50, 5.0), 1.0, p, SafeguardConfig(), obj)
    assert out.triggered and out.L_next == p.L and out.N_next == 9


def test_safeguard_escalates_small_L_and_caps():
    f, obj = _lasso(2)
    small = make_params(f.L * 1e-3, 0.0)
    st = SafeguardState(np.zeros(50), 5, small.L, 5)
    out = safeguard(st, np.zeros(50), np.zeros(50), 1.0, small, SafeguardConfig(), obj)
    assert out.escalations > 0
    assert out.prox_solves == out.escalations + 1

    def no_progress(pp: ProxProblem) -> ProxSolution:
        # a step that always increases F defeats every line search
        s = solve(pp)
        return ProxSolution(pp.g * 10, s.ell_at_eta, s.ell_at_zero, s.residual, 1)

    with pytest.raises(LEscalationDiverged):
        safeguard(st, np.zeros(50), np.zeros(50), 1.0, small, SafeguardConfig(), obj, prox=no_progress)


def test_ar_rapg_reference_sequence_monotone_and_converges():
    f, obj = _lasso(3)
    p = make_params(f.L * (1 + 1e-9), 0.0)
    rec = ar_rapg_run(np.zeros(50), p, SafeguardConfig(), obj, termination=Termination(max_iters=3000))
    assert rec.reason == "eta"
    ref = reference_values(rec)
    assert np.all(np.diff(ref) <= 1e-12 * (1 + np.abs(ref[:-1])))
    plain = run(np.zeros(50), p, obj, termination=Termination(max_iters=3000), algorithm="RPG")
    assert rec.F_final <= plain.F_final + 1e-8
    # check indices follow k_{i+1} = k_i + N_{i+1}
    ks = [e["k"] for e in rec.safeguard_log]
    Ns = [e["N_next"] for e in rec.safeguard_log]
    assert ks[0] == 5
    assert all(b - a == n for a, b, n in zip(ks, ks[1:], Ns))
    assert all(2 <= e["N_next"] <= 10 for e in rec.safeguard_log)


def test_ar_rapg_recovers_from_underestimated_L():
    f, obj = _lasso(4)
    p = make_params(f.L * 0.3, 0.0)
    rec = ar_rapg_run(np.zeros(50), p, SafeguardConfig(), obj, termination=Termination(max_iters=3000))
    assert rec.column("L_est")[-1] > p.L
    assert int(np.nansum(rec.column("restart"))) > 0
    ref = reference_values(rec)
    assert np.all(np.diff(ref) <= 1e-12 * (1 + np.abs(ref[:-1])))
