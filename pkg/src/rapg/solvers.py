"""Accelerated (RAPG) and plain (RPG) Riemannian proximal gradient methods.

The accelerated method keeps three sequences. ``y`` is a point on the
geodesic from ``x`` toward ``z``; ``x`` is advanced by a proximal step from
``y``; ``z`` collects the momentum, transported to the new ``x``. The scalar
schedule ``A_k`` drives the mixing weights ``beta``, ``gamma`` and ``tau``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import AntipodalPoints, InvalidParams
from .objective import CompositeObjective
from .prox import ProxProblem, ProxSolution, solve

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class RapgParams:
    L: float
    mu: float
    rho: float = 0.0
    zeta: float = 1.0
    delta: float = 1.0
    xi: float = 1.0
    theta: float = 1.0
    A0: float = 1e-3

    @property
    def r(self) -> float:
        """``(mu - rho) / (theta L - rho)``."""
        return (self.mu - self.rho) / (self.theta * self.L - self.rho)

    @property
    def coeff(self) -> float:
        """Coefficient of the quadratic term in the proximal model."""
        return self.theta * self.L

    @property
    def rate(self) -> float:
        """Geometric contraction factor ``1 - sqrt(r / xi)``."""
        return 1.0 - math.sqrt(self.r / self.xi)

    @property
    def kappa(self) -> float:
        return (self.theta * self.L - self.rho) * self.xi / (self.mu - self.rho)

    def with_L(self, L: float, auto_theta: bool = True) -> "RapgParams":
        theta = default_theta(L, self.mu, self.rho, self.xi) if auto_theta else self.theta
        return replace(self, L=L, theta=theta)


def default_theta(L: float, mu: float, rho: float, xi: float) -> float:
    return max((rho + (mu - rho) * xi) / L, 1.0)


def make_params(L, mu, rho=0.0, xi=1.0, A0=1e-3, zeta=1.0, delta=1.0, theta=None) -> RapgParams:
    """Parameters with the default ``theta`` rule; ``mu < rho`` is clamped to ``rho``."""
    if mu < rho:
        log.warning("mu=%g below rho=%g; clamping mu to rho", mu, rho)
        mu = rho
    if theta is None:
        theta = default_theta(L, mu, rho, xi)
    return RapgParams(L=L, mu=mu, rho=rho, zeta=zeta, delta=delta, xi=xi, theta=theta, A0=A0)


@dataclass
class ConditionReport:
    applicable_condition: str
    theta_lower: float
    A1_lower: float
    lambda_used: float
    satisfied: bool
    A1: float = float("nan")
    warnings: list = field(default_factory=list)


def _require(p: RapgParams) -> list:
    warnings = []
    checks = [
        (p.L > p.mu, "L > mu"),
        (p.mu >= p.rho, "mu >= rho"),
        (p.mu >= 0, "mu >= 0"),
        (p.xi >= p.zeta, "xi >= zeta"),
        (p.zeta >= 1, "zeta >= 1"),
        (p.delta <= 1, "delta <= 1"),
        (p.theta >= 1, "theta >= 1"),
    ]
    for ok, name in checks:
        if not ok:
            raise InvalidParams(f"violates {name}")
    bound = (p.rho + (p.mu - p.rho) * p.xi) / p.L
    if p.theta < bound:
        raise InvalidParams("violates theta > (rho + (mu - rho) xi) / L")
    if p.theta <= bound * (1 + 1e-12):
        # equality gives r xi = 1 when mu > rho, so no finite A0 is admissible
        if p.mu > p.rho:
            raise InvalidParams("violates theta > (rho + (mu - rho) xi) / L (equality)")
        warnings.append("theta equals its strict lower bound")
        log.warning("theta equals (rho + (mu - rho) xi) / L; accepted since mu = rho")
    A0_bound = p.xi * (p.xi - 1) / (1 - p.r * p.xi)
    if not p.A0 > A0_bound:
        raise InvalidParams(f"violates A0 > {A0_bound:g}")
    return warnings


def validate_params(p: RapgParams, lam: float = 2.0) -> ConditionReport:
    """Check the admissibility inequalities and which sufficient condition for potential decrease applies.

    ``lam`` in (1, 4) parameterizes the third condition (curved case).
    Violations of the basic inequalities raise :class:`InvalidParams`;
    the sufficient condition itself is only reported.
    """
    warnings = _require(p)
    A1 = next_schedule(p, p.A0).A_next
    xi, zeta, delta, mu, rho, L = p.xi, p.zeta, p.delta, p.mu, p.rho, p.L
    base = (rho + (mu - rho) * xi) / L
    if zeta == 1 and delta == 1 and xi == 1:
        return ConditionReport("i", base, 0.0, lam, True, A1, warnings)
    if zeta == 1 and delta == 1 and xi > 1:
        theta1 = (4 * xi - 1) ** 2 * (mu - rho) / (9 * xi * L) + rho / L
        N1 = 9 - (4 * xi - 1) ** 2 * (mu - rho) / ((p.theta * L - rho) * xi)
        A1_lower = (4 * xi - 1) ** 2 / N1 if N1 > 0 else math.inf
        ok = p.theta > theta1 and N1 > 0 and A1 >= A1_lower
        return ConditionReport("ii", max(theta1, 1.0), A1_lower, lam, bool(ok), A1, warnings)
    if not 1 < lam < 4:
        raise InvalidParams("lambda must lie in (1, 4)")
    if zeta > delta and xi >= zeta + (zeta - delta) / (lam - 1):
        c4 = (4 / lam - 1) ** 2
        theta2 = (4 * xi / lam - 1) ** 2 * (mu - rho) / (c4 * L * xi) + rho / L
        N2 = c4 - (4 * xi / lam - 1) ** 2 * (mu - rho) / ((p.theta * L - rho) * xi)
        A1_lower = (4 * xi / lam - 1) ** 2 / N2 if N2 > 0 else math.inf
        ok = p.theta > theta2 and N2 > 0 and A1 >= A1_lower
        return ConditionReport("iii", max(theta2, 1.0), A1_lower, lam, bool(ok), A1, warnings)
    return ConditionReport("none", base, math.inf, lam, False, A1, warnings)


def min_A0(p: RapgParams, lam: float = 2.0, margin: float = 1e-9) -> float:
    """Smallest ``A0`` (up to ``margin``) for which the applicable sufficient condition holds."""
    floor = p.xi * (p.xi - 1) / (1 - p.r * p.xi)
    probe = replace(p, A0=max(p.A0, floor * (1 + 1e-9) + 1e-12))
    rep = validate_params(probe, lam)
    if rep.applicable_condition == "i":
        return p.A0
    target = rep.A1_lower
    lo, hi = floor, max(1.0, target)
    while next_schedule(p, hi).A_next < target:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if next_schedule(p, mid).A_next >= target:
            hi = mid
        else:
            lo = mid
    return hi * (1 + margin)


# ---------------------------------------------------------------------------
# schedule


@dataclass
class ScheduleStep:
    A_k: float
    A_next: float
    beta: float
    gamma: float
    tau: float
    G_next: float
    E_next: float
    P_k: float
    P_next: float
    root_residual: float


def _ratio_terms(inv_a, r, xi):
    """Growth ``A_next / A_k - 1`` and the mixing weights from ``1 / A_k``.

    Written in terms of ratios so that it stays finite for arbitrarily large
    ``A_k``; works elementwise on arrays.
    """
    disc = np.sqrt(xi * xi * inv_a * inv_a + 4 * xi * xi * inv_a + 4 * r * xi)
    rm1 = (xi * inv_a + 2 * r + disc) / (2 * (xi - r))
    log_R = np.log1p(rm1)
    inv_R = np.exp(-log_R)
    inv_an = inv_a * inv_R
    one_m_inv_R = -np.expm1(-log_R)
    denom = xi * inv_an + r
    beta = (xi * inv_an + r * inv_R) / denom
    gamma = one_m_inv_R / denom
    tau = beta / (gamma * inv_R + beta)
    # relative residual of the quadratic that A_next is the larger root of
    root = np.abs(1.0 - xi * one_m_inv_R**2 / denom)
    return rm1, log_R, beta, gamma, tau, inv_an, root


def _E_over_sqrtA(inv_a, r, xi):
    return 1.0 - xi * np.sqrt(inv_a + r / xi)


def next_schedule(p: RapgParams, A_k: float) -> ScheduleStep:
    """One application of the ``A_k`` recursion and the derived weights."""
    if not A_k > 0:
        raise InvalidParams("A_k must be positive")
    r, xi = p.r, p.xi
    inv_a = 1.0 / A_k
    rm1, _, beta, gamma, tau, inv_an, root = _ratio_terms(inv_a, r, xi)
    A_next = A_k + A_k * rm1
    scale = p.theta * p.L - p.rho
    return ScheduleStep(
        A_k=A_k,
        A_next=float(A_next),
        beta=float(beta),
        gamma=float(gamma),
        tau=float(tau),
        G_next=float(1.0 + r * A_next / xi),
        E_next=float(math.sqrt(A_next) * _E_over_sqrtA(1.0 / A_next, r, xi)),
        P_k=float(scale * (xi + r * A_k)),
        P_next=float(scale * (xi + r * A_next)),
        root_residual=float(root),
    )


@dataclass
class ScheduleSweepReport:
    n_params: int
    n_steps: int
    violations: dict
    max_root_residual: float

    @property
    def ok(self) -> bool:
        return all(v == 0 for v in self.violations.values())


def schedule_sweep(r, xi, A0, n_steps: int) -> ScheduleSweepReport:
    """Run the schedule for many parameter sets at once (in log space) and count invariant violations.

    ``r``, ``xi`` and ``A0`` are arrays of equal length. ``A_k`` is tracked by
    its logarithm so that geometric growth over many steps never overflows.
    """
    r, xi = np.asarray(r, float), np.asarray(xi, float)
    log_a = np.log(np.asarray(A0, float))
    keys = ["A_increasing", "beta", "gamma", "tau", "G", "P", "E", "sqrtA_gt_sqrtG"]
    viol = dict.fromkeys(keys, 0)
    worst = 0.0
    with np.errstate(over="ignore", under="ignore"):
        for _ in range(n_steps):
            inv_a = np.exp(-log_a)
            rm1, log_R, beta, gamma, tau, inv_an, root = _ratio_terms(inv_a, r, xi)
            log_next = log_a + log_R
            viol["A_increasing"] += int(np.sum(~(log_next > log_a)))
            viol["beta"] += int(np.sum(~((beta > 0) & (beta <= 1))))
            viol["gamma"] += int(np.sum(~(gamma > 1)))
            viol["tau"] += int(np.sum(~((tau > 0) & (tau < 1))))
            # G = 1 + r A / xi and P = (theta L - rho)(xi + r A): positive whenever A > 0
            viol["G"] += int(np.sum(~(1.0 + r * np.exp(log_next) / xi > 0)))
            viol["P"] += int(np.sum(~(xi + r * np.exp(log_next) > 0)))
            viol["E"] += int(np.sum(~(_E_over_sqrtA(inv_an, r, xi) > 0)))
            # sqrt(A) > sqrt(G)  <=>  A (1 - r / xi) > 1
            viol["sqrtA_gt_sqrtG"] += int(np.sum(~(log_next + np.log1p(-r / xi) > 0)))
            worst = max(worst, float(np.max(root)))
            log_a = log_next
    return ScheduleSweepReport(len(r), n_steps, viol, worst)


def d11_margin(step: ScheduleStep, p: RapgParams) -> float:
    """Left-hand side of the sufficient inequality for potential decrease."""
    return 4 * (p.xi - p.zeta) * step.E_next - (p.xi - p.delta) * (
        math.sqrt(step.A_next) - math.sqrt(step.G_next)
    )


def check_D11(step: ScheduleStep, p: RapgParams, atol: float = 1e-12) -> bool:
    return d11_margin(step, p) >= -atol * (1.0 + math.sqrt(step.A_next))


@dataclass
class GrowthReport:
    linear_margin: np.ndarray
    geometric_margin: np.ndarray | None

    @property
    def min_linear(self) -> float:
        return float(np.min(self.linear_margin))

    @property
    def min_geometric(self) -> float:
        return float("inf") if self.geometric_margin is None else float(np.min(self.geometric_margin))

    def ok(self, slack: float = 1e-12) -> bool:
        return self.min_linear >= -slack and self.min_geometric >= -slack


def growth_check(A_trace, p: RapgParams) -> GrowthReport:
    """Relative margins of the two lower bounds on ``A_k`` along a trace starting at ``A_0``.

    Margins are ``A_k / bound - 1`` so that they are meaningful at any scale.
    """
    A = np.asarray(A_trace, dtype=float)
    k = np.arange(len(A))
    lin = A / (math.sqrt(p.A0) + k / 2.0) ** 2 - 1.0
    geo = None
    if p.mu > p.rho:
        with np.errstate(over="ignore"):
            geo = np.exp(np.log(A) - math.log(p.A0) + k * math.log(p.rate)) - 1.0
    return GrowthReport(lin, geo)


def rate_constants(p: RapgParams, gap0: float, dist0: float) -> tuple[float, float]:
    """Constants ``(C1, C2)`` of the geometric and sublinear bounds on ``F(x_k) - F*``.

    ``gap0 = F(x_0) - F*`` and ``dist0`` is the distance from ``x_0`` to the minimizer.
    """
    w = p.xi * (p.theta * p.L - p.rho) + (p.mu - p.rho) * p.A0
    C1 = gap0 + w / (2 * p.A0) * dist0**2
    C2 = 2 * p.A0 * gap0 + w * dist0**2
    return C1, C2


def rate_bound(p: RapgParams, gap0: float, dist0: float, k) -> np.ndarray:
    """``min(rate^k C1, 2 C2 / (k + 2 sqrt(A0))^2)`` elementwise in ``k``."""
    k = np.asarray(k, dtype=float)
    C1, C2 = rate_constants(p, gap0, dist0)
    sub = 2 * C2 / (k + 2 * math.sqrt(p.A0)) ** 2
    if p.mu > p.rho:
        return np.minimum(p.rate**k * C1, sub)
    return sub


# ---------------------------------------------------------------------------
# iteration


ProxFn = Callable[[ProxProblem], ProxSolution]


@dataclass
class SolverState:
    x: np.ndarray
    z: np.ndarray
    A: float
    k: int = 0
    y: np.ndarray | None = None
    last_eta: np.ndarray | None = None
    last_prox: ProxSolution | None = None
    schedule: ScheduleStep | None = None


def _prox_problem(obj: CompositeObjective, p: RapgParams, y, g) -> ProxProblem:
    return ProxProblem(obj.manifold, y, g, p.coeff, obj.h, p.rho)


def rapg_step(state: SolverState, p: RapgParams, obj: CompositeObjective, prox: ProxFn = solve) -> SolverState:
    """One accelerated iteration; returns the next state (the input is left untouched)."""
    M = obj.manifold
    sch = next_schedule(p, state.A)
    x, z = state.x, state.z
    to_z = M.log(x, z)
    y = x if not np.any(to_z) else M.exp(x, sch.tau * to_z)
    g = obj.f.grad(y)
    sol = prox(_prox_problem(obj, p, y, g))
    eta = sol.eta
    x_new = sol.z if sol.z is not None else M.exp(y, eta)
    v = sch.beta * M.log(y, z) + sch.gamma * eta
    z_new = M.exp(x_new, M.transport(y, x_new, v - eta))
    return SolverState(x_new, z_new, sch.A_next, state.k + 1, y, eta, sol, sch)


def rpg_step(state: SolverState, p: RapgParams, obj: CompositeObjective, prox: ProxFn = solve) -> SolverState:
    """One proximal gradient iteration from ``x``."""
    M = obj.manifold
    g = obj.f.grad(state.x)
    sol = prox(_prox_problem(obj, p, state.x, g))
    x_new = sol.z if sol.z is not None else M.exp(state.x, sol.eta)
    return SolverState(x_new, x_new, state.A, state.k + 1, state.x, sol.eta, sol, None)


def potential(state: SolverState, x_star, F_star: float, p: RapgParams, obj: CompositeObjective) -> float:
    """Lyapunov value ``A (F(x) - F*) + P/2 (|log_x z - log_x x*|^2 + (xi - 1)|log_x z|^2)``."""
    M = obj.manifold
    P = (p.theta * p.L - p.rho) * (p.xi + p.r * state.A)
    lz = M.log(state.x, state.z)
    ls = M.log(state.x, x_star)
    d = lz - ls
    quad = float(np.sum(d * d)) + (p.xi - 1) * float(np.sum(lz * lz))
    return state.A * (obj.value(state.x) - F_star) + 0.5 * P * quad


# ---------------------------------------------------------------------------
# runs


@dataclass
class Termination:
    """Stopping rule: ``(L |eta|)^2 < eta_tol * size`` or ``k == max_iters``.

    ``size`` is the ambient dimension (``n * p`` on the oblique manifold).
    Accelerated methods also stop once ``F`` drops below ``F_ref``.
    """

    max_iters: int = 10000
    eta_tol: float = 1e-10
    F_ref: float | None = None
    callback: Callable | None = None


COLUMNS = [
    "k", "F", "eta_norm", "A", "beta", "gamma", "tau", "L_est", "restart", "safeguard",
    "prox_solves", "wall_ns", "prox_residual", "inner_iters", "safeguard_fevals",
]


@dataclass
class RunRecord:
    algorithm: str
    rows: dict = field(default_factory=lambda: {c: [] for c in COLUMNS})
    x_final: np.ndarray | None = None
    reason: str = ""
    safeguard_log: list = field(default_factory=list)
    monotone_violations: int = 0
    # final reference point and Lipschitz estimate of an AR-RAPG run
    x_tilde: np.ndarray | None = None
    L_final: float = math.nan

    def add(self, **kw):
        for c in COLUMNS:
            self.rows[c].append(kw.get(c, math.nan))

    def column(self, name) -> np.ndarray:
        return np.asarray(self.rows[name], dtype=float)

    @property
    def iterations(self) -> int:
        return int(self.rows["k"][-1]) if self.rows["k"] else 0

    @property
    def F_final(self) -> float:
        return float(self.rows["F"][-1])

    @property
    def wall_time(self) -> float:
        return float(self.rows["wall_ns"][-1]) * 1e-9

    def sparsity(self, threshold: float = 1e-6) -> float:
        return float(np.mean(np.abs(self.x_final) < threshold))

    def summary(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "iterations": self.iterations,
            "time_s": self.wall_time,
            "F_final": self.F_final,
            "sparsity": self.sparsity(),
            "reason": self.reason,
            "prox_solves": int(self.rows["prox_solves"][-1]),
            "restarts": int(np.nansum(self.column("restart"))),
            "safeguards": int(np.nansum(self.column("safeguard"))),
        }


def eta_criterion(L: float, eta_norm: float, size: int, tol: float) -> bool:
    return (L * eta_norm) ** 2 < tol * size


def run(
    x0,
    p: RapgParams,
    obj: CompositeObjective,
    prox: ProxFn = solve,
    termination: Termination | None = None,
    algorithm: str = "RAPG",
) -> RunRecord:
    """Run RAPG or RPG from ``x0`` and record one row per iterate.

    Row ``k`` holds ``F(x_k)`` and the step computed from it. When the
    stationarity criterion fires at iteration ``k`` the run returns ``x_k``.
    """
    algorithm = algorithm.upper()
    if algorithm not in ("RAPG", "RPG"):
        raise ValueError(f"unknown algorithm {algorithm}")
    term = termination or Termination()
    validate_params(p)
    M = obj.manifold
    size = M.ambient_size
    step = rapg_step if algorithm == "RAPG" else rpg_step
    accelerated = algorithm == "RAPG"
    state = SolverState(np.array(x0, dtype=float), np.array(x0, dtype=float), p.A0)
    rec = RunRecord(algorithm)
    F = obj.value(state.x)
    t0 = time.perf_counter_ns()
    solves = 0
    while True:
        k = state.k
        if accelerated and term.F_ref is not None and F < term.F_ref:
            rec.reason = "reference"
            break
        if k >= term.max_iters:
            rec.reason = "max_iters"
            break
        try:
            new = step(state, p, obj, prox)
        except AntipodalPoints as exc:
            # the iterates left the region where geodesics are unique
            log.warning("%s stopped at k=%d: %s", algorithm, k, exc)
            rec.reason = "domain"
            break
        solves += 1
        sol, sch = new.last_prox, new.schedule
        eta_norm = M.norm(new.y, new.last_eta)
        rec.add(
            k=k, F=F, eta_norm=eta_norm, A=state.A,
            beta=sch.beta if sch else math.nan, gamma=sch.gamma if sch else math.nan,
            tau=sch.tau if sch else math.nan, L_est=p.L, restart=0, safeguard=0,
            prox_solves=solves, wall_ns=time.perf_counter_ns() - t0,
            prox_residual=sol.residual, inner_iters=sol.inner_iters, safeguard_fevals=0,
        )
        if term.callback is not None:
            term.callback(state, new)
        if eta_criterion(p.L, eta_norm, size, term.eta_tol):
            rec.reason = "eta"
            rec.x_final = state.x
            return rec
        F_new = obj.value(new.x)
        if not accelerated and F_new > F + 1e-12 * (1.0 + abs(F)):
            rec.monotone_violations += 1
            log.warning("RPG increase at k=%d (%.3e); L may be underestimated", k, F_new - F)
        state, F = new, F_new
    rec.x_final = state.x
    rec.add(k=state.k, F=F, A=state.A, L_est=p.L, restart=0, safeguard=0, prox_solves=solves,
            wall_ns=time.perf_counter_ns() - t0, safeguard_fevals=0)
    return rec

