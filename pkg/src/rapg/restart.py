"""Adaptive restart driver (AR-RAPG) with a periodic descent safeguard.

Every ``N_i`` accelerated steps the safeguard takes a line-searched proximal
gradient step from the reference point ``x_tilde``. If that beats the current
iterate, acceleration restarts from the better point and the Lipschitz
estimate grows; the check interval shrinks after a restart and widens
otherwise.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import AntipodalPoints, InvalidParams, LEscalationDiverged
from .objective import CompositeObjective
from .prox import ProxProblem, solve
from .solvers import (
    ProxFn,
    RapgParams,
    RunRecord,
    SolverState,
    Termination,
    eta_criterion,
    rapg_step,
    validate_params,
)

log = logging.getLogger(__name__)

L_CAP_FACTOR = 1e12


@dataclass(frozen=True)
class SafeguardConfig:
    N0: int = 5
    N_min: int = 2
    N_max: int = 10
    L_init: float | None = None
    tau_L: float = 1.1
    sigma: float = 1e-4
    iota: float = 0.5
    N_ls: int = 3
    auto_theta: bool = True

    def __post_init__(self):
        if not (1 <= self.N_min <= self.N0 <= self.N_max):
            raise InvalidParams("need 1 <= N_min <= N0 <= N_max")
        if not self.tau_L > 1:
            raise InvalidParams("tau_L must exceed 1")
        if not (0 < self.sigma < 1 and 0 < self.iota < 1):
            raise InvalidParams("sigma and iota must lie in (0, 1)")
        if self.N_ls < 1:
            raise InvalidParams("N_ls must be positive")


@dataclass
class SafeguardState:
    x_tilde: np.ndarray
    N_i: int
    L_est: float
    next_check_k: int
    i: int = 0
    F_tilde: float = math.nan


@dataclass
class SafeguardOutcome:
    triggered: bool
    new_x_k: np.ndarray
    new_z_k: np.ndarray
    new_A_k: float
    N_next: int
    L_next: float
    ls_iters: int
    alpha: float
    F_trial: float = math.nan
    F_tilde: float = math.nan
    eta_norm: float = math.nan
    prox_residual: float = math.nan
    escalations: int = 0
    prox_solves: int = 0
    f_evals: int = 0


@dataclass
class LineSearchResult:
    alpha: float
    iters: int
    accepted_F: float
    accepted: bool
    f_evals: int


def line_search(x_tilde, eta, cfg: SafeguardConfig, obj: CompositeObjective, F_tilde: float | None = None):
    """Backtrack ``alpha`` in ``{1, iota, iota^2, ...}`` until the Armijo-type decrease holds.

    At most ``N_ls`` shrinks are tried. ``accepted`` is false when the budget
    is exhausted, which tells the caller to enlarge ``L``.
    """
    M = obj.manifold
    evals = 0
    if F_tilde is None:
        F_tilde = obj.value(x_tilde)
        evals += 1
    e2 = float(np.sum(eta * eta))
    alpha, it = 1.0, 0
    F_try = obj.value(M.exp(x_tilde, alpha * eta))
    evals += 1
    while F_try > F_tilde - cfg.sigma * alpha * e2 and it < cfg.N_ls:
        alpha *= cfg.iota
        it += 1
        F_try = obj.value(M.exp(x_tilde, alpha * eta))
        evals += 1
    accepted = it < cfg.N_ls
    return LineSearchResult(alpha, it, F_try, accepted, evals)


def safeguard(
    st: SafeguardState,
    x_k,
    z_k,
    A_k: float,
    p: RapgParams,
    cfg: SafeguardConfig,
    obj: CompositeObjective,
    prox: ProxFn = solve,
    F_k: float | None = None,
) -> SafeguardOutcome:
    """One safeguard pass. ``p`` supplies ``A0``, ``rho`` and ``theta``; its ``L`` is replaced by ``st.L_est``."""
    M = obj.manifold
    L_init = cfg.L_init if cfg.L_init is not None else p.L
    L = st.L_est
    F_tilde = st.F_tilde if not math.isnan(st.F_tilde) else obj.value(st.x_tilde)
    evals = 1
    if F_k is None:
        F_k = obj.value(x_k)
        evals += 1
    escalations = solves = 0
    while True:
        pl = p.with_L(L, cfg.auto_theta)
        g = obj.f.grad(st.x_tilde)
        sol = prox(ProxProblem(M, st.x_tilde, g, pl.coeff, obj.h, p.rho))
        solves += 1
        ls = line_search(st.x_tilde, sol.eta, cfg, obj, F_tilde)
        evals += ls.f_evals
        if ls.accepted:
            break
        L *= cfg.tau_L
        escalations += 1
        if L > L_CAP_FACTOR * L_init:
            raise LEscalationDiverged(f"L estimate {L:.3e} exceeds {L_CAP_FACTOR:g} x L_init")
    trial = M.exp(st.x_tilde, ls.alpha * sol.eta)
    F_trial = ls.accepted_F
    if not F_trial <= F_tilde + 1e-12 * (1 + abs(F_tilde)):
        log.warning("safeguard trial increased F: %.3e > %.3e", F_trial, F_tilde)
    common = dict(
        ls_iters=ls.iters, alpha=ls.alpha, F_trial=F_trial, F_tilde=F_tilde,
        eta_norm=float(np.sqrt(np.sum(sol.eta**2))), prox_residual=sol.residual,
        escalations=escalations, prox_solves=solves, f_evals=evals,
    )
    if F_trial < F_k:
        if st.N_i != cfg.N_max:
            L *= cfg.tau_L
        return SafeguardOutcome(True, trial, trial.copy(), p.A0, max(st.N_i - 1, cfg.N_min), L, **common)
    return SafeguardOutcome(False, x_k, z_k, A_k, min(st.N_i + 1, cfg.N_max), L, **common)


def ar_rapg_run(
    x0,
    p: RapgParams,
    cfg: SafeguardConfig,
    obj: CompositeObjective,
    prox: ProxFn = solve,
    termination: Termination | None = None,
) -> RunRecord:
    """AR-RAPG: RAPG steps interleaved with safeguard passes at ``k == j``.

    ``safeguard_log`` on the returned record holds one dict per pass with the
    reference values ``F(x_tilde_i)``, the trial value and the outcome.
    """
    term = termination or Termination()
    validate_params(p)
    M = obj.manifold
    size = M.ambient_size
    L_init = cfg.L_init if cfg.L_init is not None else p.L
    pk = p.with_L(L_init, cfg.auto_theta) if L_init != p.L else p
    x0 = np.array(x0, dtype=float)
    state = SolverState(x0, x0.copy(), pk.A0)
    F = obj.value(x0)
    sg = SafeguardState(x0.copy(), cfg.N0, L_init, cfg.N0, 0, F)
    rec = RunRecord("AR-RAPG")
    t0 = time.perf_counter_ns()
    solves = 0
    while True:
        k = state.k
        if term.F_ref is not None and F < term.F_ref:
            rec.reason = "reference"
            break
        if k >= term.max_iters:
            rec.reason = "max_iters"
            break
        restart = flag = sg_evals = 0
        if k == sg.next_check_k:
            out = safeguard(sg, state.x, state.z, state.A, pk, cfg, obj, prox, F_k=F)
            solves += out.prox_solves
            sg_evals = out.f_evals
            flag = 1
            restart = int(out.triggered)
            rec.safeguard_log.append({
                "k": k, "i": sg.i, "F_tilde": out.F_tilde, "F_trial": out.F_trial,
                "F_k": F, "triggered": out.triggered, "alpha": out.alpha,
                "ls_iters": out.ls_iters, "L_before": sg.L_est, "L_after": out.L_next,
                "escalations": out.escalations, "N_i": sg.N_i, "N_next": out.N_next,
                "eta_norm": out.eta_norm, "prox_residual": out.prox_residual,
            })
            if out.L_next != pk.L:
                pk = pk.with_L(out.L_next, cfg.auto_theta)
            if out.triggered:
                state = SolverState(out.new_x_k, out.new_z_k, out.new_A_k, k)
                F = out.F_trial
            sg = SafeguardState(state.x.copy(), out.N_next, out.L_next,
                                sg.next_check_k + out.N_next, sg.i + 1, F)
        try:
            new = rapg_step(state, pk, obj, prox)
        except AntipodalPoints as exc:
            log.warning("AR-RAPG stopped at k=%d: %s", k, exc)
            rec.reason = "domain"
            break
        solves += 1
        sol, sch = new.last_prox, new.schedule
        eta_norm = M.norm(new.y, new.last_eta)
        rec.add(
            k=k, F=F, eta_norm=eta_norm, A=state.A, beta=sch.beta, gamma=sch.gamma, tau=sch.tau,
            L_est=pk.L, restart=restart, safeguard=flag, prox_solves=solves,
            wall_ns=time.perf_counter_ns() - t0, prox_residual=sol.residual,
            inner_iters=sol.inner_iters, safeguard_fevals=sg_evals,
        )
        if term.callback is not None:
            term.callback(state, new)
        if eta_criterion(pk.L, eta_norm, size, term.eta_tol):
            rec.reason = "eta"
            rec.x_final = state.x
            rec.x_tilde, rec.L_final = sg.x_tilde, pk.L
            return rec
        state, F = new, obj.value(new.x)
    rec.x_final = state.x
    rec.add(k=state.k, F=F, A=state.A, L_est=pk.L, restart=0, safeguard=0, prox_solves=solves,
            wall_ns=time.perf_counter_ns() - t0, safeguard_fevals=0)
    rec.x_tilde, rec.L_final = sg.x_tilde, pk.L
    return rec


def reference_stationarity(rec: RunRecord, p: RapgParams, obj: CompositeObjective, prox: ProxFn = solve,
                           auto_theta: bool = True) -> float:
    """Norm of the safeguard prox step at the final reference point ``x_tilde`` of an AR-RAPG run.

    Zero exactly at stationary points of ``F``, so it is the computable
    surrogate for stationarity of the limit.
    """
    if rec.x_tilde is None:
        raise ValueError("record has no reference point; run ar_rapg_run first")
    pl = p.with_L(rec.L_final, auto_theta)
    g = obj.f.grad(rec.x_tilde)
    sol = prox(ProxProblem(obj.manifold, rec.x_tilde, g, pl.coeff, obj.h, p.rho))
    return obj.manifold.norm(rec.x_tilde, sol.eta)


def reference_values(rec: RunRecord) -> np.ndarray:
    """``F(x_tilde_i)`` for every safeguard pass, followed by the final reference ``F(x_tilde)``."""
    vals = [e["F_tilde"] for e in rec.safeguard_log]
    if rec.safeguard_log:
        last = rec.safeguard_log[-1]
        vals.append(last["F_trial"] if last["triggered"] else last["F_k"])
    return np.asarray(vals, dtype=float)
