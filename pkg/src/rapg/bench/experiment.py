"""Experiment harness: problem construction, reference minima, slope fits and CSV output."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..errors import InsufficientTail, NonPositiveGap, NotConverged
from ..geometry import Sphere
from ..objective import (
    CompositeObjective,
    L1Norm,
    LeastSquares,
    SpcaOblique,
    SpcaSphere,
    SquaredDistance,
    riemannian_hessian_fd,
)
from ..restart import SafeguardConfig, ar_rapg_run
from ..solvers import COLUMNS, RapgParams, RunRecord, Termination, make_params, run
from . import data

log = logging.getLogger(__name__)

TRACE_VERSION = "rapg-trace/1"
SUMMARY_VERSION = "rapg-summary/1"
SLOPE_VERSION = "rapg-slope/1"
WORKERS_ENV = "RAPG_WORKERS"
MODELS = ("SpcaSphere", "SpcaOblique", "EuclideanLasso", "SphereQuadratic")
ALGORITHMS = ("RPG", "RAPG", "AR-RAPG")
SPARSITY_THRESHOLD = 1e-6
# columns of the per-iteration trace that do not depend on timing
TRACE_COLUMNS = [c for c in COLUMNS if c != "wall_ns"]


@dataclass
class ExperimentConfig:
    model: str = "SpcaSphere"
    m: int = 20
    n: int = 1000
    p: int = 1
    lam: float = 1e-4
    c: float = 0.5
    seed: int = 0
    algorithms: tuple = ALGORITHMS
    L_mode: str = "auto"
    L: float | None = None
    mu: float | None = None
    rho: float | None = None
    xi: float = 1.0
    A0: float = 1e-3
    max_iters: int = 10000
    tol: float = 1e-10
    density: float = data.V1_DENSITY
    out: str = "out"

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if isinstance(self.algorithms, str):
            self.algorithms = tuple(a.strip().upper() for a in self.algorithms.split(",") if a.strip())
        bad = set(self.algorithms) - set(ALGORITHMS)
        if bad:
            raise ValueError(f"unknown algorithms {sorted(bad)}")
        if self.model.startswith("Spca") and not self.m < self.n:
            raise ValueError("SPCA models need m < n")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")


def parse_config(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"expected key=value, got {raw!r}")
        out[key.strip()] = val.strip()
    return out


def config_from_dict(d: dict) -> ExperimentConfig:
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    kw = {}
    for k, v in d.items():
        k = {"lambda": "lam", "algos": "algorithms", "L-mode": "L_mode", "max-iters": "max_iters"}.get(k, k)
        if k not in types:
            raise ValueError(f"unknown config key {k}")
        if v is None or isinstance(v, (int, float, tuple)) and not isinstance(v, bool):
            kw[k] = v
            continue
        t = str(types[k])
        if t.startswith("int"):
            kw[k] = int(v)
        elif t.startswith("float"):
            kw[k] = None if v in ("", "none", "None") else float(v)
        else:
            kw[k] = v
    return ExperimentConfig(**kw)


# ---------------------------------------------------------------------------
# problems


@dataclass
class Problem:
    obj: CompositeObjective
    x0: np.ndarray
    params: RapgParams
    info: dict = field(default_factory=dict)


def hessian_extremes(f, x) -> tuple[float, float]:
    ev = np.linalg.eigvalsh(riemannian_hessian_fd(f, x))
    return float(ev[0]), float(ev[-1])


def sphere_params(f: SpcaSphere, obj, x0, rho, xi=1.0, A0=1e-3, max_iters=10000):
    """``L = 5 lambda_max`` and ``mu = lambda_min`` of the Hessian of the smooth part at the minimizer.

    The minimizer is not known in advance, so the constants are first taken
    at ``x0`` (with ``mu`` clamped), a RAPG run locates the minimizer, and the
    Hessian is evaluated again there.
    """
    lo, hi = hessian_extremes(f, x0)
    p0 = make_params(5 * hi, max(lo, rho), rho, xi=xi, A0=A0)
    rough = run(x0, p0, obj, termination=Termination(max_iters=max_iters))
    lo, hi = hessian_extremes(f, rough.x_final)
    return make_params(5 * hi, lo, rho, xi=xi, A0=A0), rough.x_final


def build_problem(cfg: ExperimentConfig) -> Problem:
    rng_seed = cfg.seed
    if cfg.model == "SpcaSphere":
        A, V, _ = data.gen_spca_sphere_data(cfg.m, cfg.n, cfg.c, rng_seed, density=cfg.density)
        f = SpcaSphere(A, cfg.lam)
        rho = 0.002 if cfg.rho is None else cfg.rho
        obj = f.composite(rho)
        x0 = data.init_point_sphere(A, rng_seed)
        info = {"A": A}
        if cfg.L_mode in ("auto", "5hess"):
            params, x_rough = sphere_params(f, obj, x0, rho, cfg.xi, cfg.A0, cfg.max_iters)
            info["x_rough"] = x_rough
        else:
            params = make_params(cfg.L, cfg.mu, rho, xi=cfg.xi, A0=cfg.A0)
        return Problem(obj, x0, params, info)
    if cfg.model == "SpcaOblique":
        A, D2 = data.gen_spca_oblique_data(cfg.m, cfg.n, cfg.p, rng_seed)
        f = SpcaOblique(A, D2, cfg.lam)
        rho = 0.5 if cfg.rho is None else cfg.rho
        mu = 1.0 if cfg.mu is None else cfg.mu
        scale = float(np.sum(D2**2))
        factor = {"auto": 2.0, "2d2": 2.0, "1.2d2": 1.2}.get(cfg.L_mode)
        L = factor * scale if factor is not None else cfg.L
        obj = f.composite(rho)
        x0 = data.init_point_oblique(A, cfg.p)
        return Problem(obj, x0, make_params(L, mu, rho, xi=cfg.xi, A0=cfg.A0), {"A": A, "D2": D2})
    if cfg.model == "EuclideanLasso":
        rng = np.random.default_rng(rng_seed)
        B = rng.standard_normal((cfg.m, cfg.n))
        b = rng.standard_normal(cfg.m)
        f = LeastSquares(B, b)
        obj = CompositeObjective(f.manifold, f, L1Norm(cfg.lam, 0.0))
        L = cfg.L if cfg.L_mode == "manual" else f.L * (1 + 1e-9)
        return Problem(obj, np.zeros(cfg.n), make_params(L, f.mu, 0.0, xi=cfg.xi, A0=cfg.A0), {"B": B, "b": b})
    # SphereQuadratic: half squared distance to a point in the open positive orthant
    rng = np.random.default_rng(rng_seed)
    M = Sphere(cfg.n)
    target = M.normalize(np.abs(rng.standard_normal(cfg.n)) + 0.5)
    x0 = M.exp(target, M.random_tangent(rng, target, 0.3))
    D = 2 * M.dist(x0, target)
    mu = D / np.tan(D)
    f = SquaredDistance(M, target, L=1.0, mu=mu)
    rho = 0.0 if cfg.rho is None else cfg.rho
    obj = CompositeObjective(M, f, L1Norm(cfg.lam, rho))
    return Problem(obj, x0, make_params(1.0, max(mu, rho), rho, xi=cfg.xi, A0=cfg.A0), {"target": target})


# ---------------------------------------------------------------------------
# runs


def termination_for(cfg: ExperimentConfig, F_ref=None, callback=None) -> Termination:
    return Termination(max_iters=cfg.max_iters, eta_tol=cfg.tol, F_ref=F_ref, callback=callback)


def run_algorithm(name: str, prob: Problem, term: Termination, sg: SafeguardConfig | None = None) -> RunRecord:
    if name == "AR-RAPG":
        return ar_rapg_run(prob.x0, prob.params, sg or SafeguardConfig(), prob.obj, termination=term)
    return run(prob.x0, prob.params, prob.obj, termination=term, algorithm=name)


def run_protocol(cfg: ExperimentConfig, prob: Problem | None = None) -> dict:
    """RPG first; the accelerated methods also stop once they beat RPG's final value."""
    prob = prob or build_problem(cfg)
    records = {}
    F_ref = None
    if "RPG" in cfg.algorithms:
        records["RPG"] = run_algorithm("RPG", prob, termination_for(cfg))
        F_ref = records["RPG"].F_final
    for name in ("RAPG", "AR-RAPG"):
        if name in cfg.algorithms:
            records[name] = run_algorithm(name, prob, termination_for(cfg, F_ref))
    return records


@dataclass
class ReferenceMinimum:
    x_star: np.ndarray
    F_star: float
    winner: str
    residual: float
    converged: bool
    records: dict
    prox_residual: float = float("nan")


def reference_minimum(prob: Problem, budget: int = 20000, tol: float = 1e-10, x_start=None) -> ReferenceMinimum:
    """Tight minimizer: AR-RAPG until ``theta L |eta| <= tol``, then RPG polishing from its output.

    Returns the lower of the two. ``converged`` is false when neither met the
    criterion within ``budget`` iterations; callers that need a certified
    ``F_star`` should raise :class:`NotConverged` in that case.
    """
    if budget < 10000:
        raise ValueError("budget must be at least 10000 iterations")
    p, obj = prob.params, prob.obj
    size = obj.manifold.ambient_size
    # (L |eta|)^2 < eta_tol * size  <=>  theta L |eta| < tol when theta = 1
    eta_tol = (tol / p.theta) ** 2 / size
    term = Termination(max_iters=budget, eta_tol=eta_tol)
    x_start = prob.x0 if x_start is None else x_start
    recs = {"AR-RAPG": ar_rapg_run(x_start, p, SafeguardConfig(), obj, termination=term)}
    recs["RPG"] = run(recs["AR-RAPG"].x_final, p, obj, termination=term, algorithm="RPG")
    best = min(recs, key=lambda k: obj.value(recs[k].x_final))
    rec = recs[best]
    x = rec.x_final
    ok = any(r.reason == "eta" for r in recs.values())
    res = float(rec.column("eta_norm")[-1]) * p.coeff if len(rec.rows["k"]) else float("nan")
    pres = float(rec.column("prox_residual")[-1]) if len(rec.rows["k"]) else float("nan")
    if not ok:
        log.warning("reference minimum not certified (residual %.3e)", res)
    return ReferenceMinimum(x, obj.value(x), best, res, ok, recs, pres)


# ---------------------------------------------------------------------------
# slope study


@dataclass
class SlopeFit:
    s: float
    kappa: float
    transformed: float
    n_points: int
    intercept: float = float("nan")


def fit_slope(F, F_star: float, kappa: float = float("nan"), fraction: float = 0.2,
              min_points: int = 10, min_iters: int = 50, truncate: bool = True) -> SlopeFit:
    """Least-squares slope of ``log(F_k - F_star)`` against ``k`` over the last ``fraction`` of the trace.

    ``F`` may be a trace or a :class:`RunRecord`. With ``truncate`` the trace
    is first cut at the first value not above ``F_star`` (rounding noise near
    the minimum); otherwise such a value in the tail raises
    :class:`NonPositiveGap`.
    """
    if isinstance(F, RunRecord):
        F = F.column("F")
    F = np.asarray(F, dtype=float)
    gap = F - F_star
    if len(F) < min_iters:
        raise InsufficientTail(f"{len(F)} iterates, need at least {min_iters}")
    if truncate:
        bad = np.flatnonzero(gap <= 0)
        end = int(bad[0]) if len(bad) else len(F)
    else:
        end = len(F)
    start = int(np.floor((1 - fraction) * end))
    k = np.arange(start, end)
    g = gap[start:end]
    if len(g) < min_points:
        raise InsufficientTail(f"{len(g)} points in the fitted tail, need {min_points}")
    if np.any(g <= 0):
        raise NonPositiveGap("F_star is not below every fitted F")
    s, b = np.polyfit(k, np.log(g), 1)
    return SlopeFit(float(s), kappa, float(1.0 / (1.0 - np.exp(s))), len(g), float(b))


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def c_grid(n_points: int = 20, lo: float = 0.01, hi: float = 1.0) -> np.ndarray:
    return np.logspace(np.log10(lo), np.log10(hi), n_points)


def slope_point(cfg: ExperimentConfig) -> dict:
    """One point of the condition-number study for the sphere model."""
    prob = build_problem(cfg)
    ref = reference_minimum(prob, budget=max(cfg.max_iters, 20000), x_start=prob.info.get("x_rough"))
    if not ref.converged:
        raise NotConverged(f"reference minimum residual {ref.residual:.3e} at c={cfg.c}")
    recs = run_protocol(cfg, prob)
    row = {"c": cfg.c, "seed": cfg.seed, "kappa": prob.params.kappa, "L": prob.params.L,
           "mu": prob.params.mu, "F_star": ref.F_star, "reference_winner": ref.winner,
           "reference_residual": ref.residual}
    for name, rec in recs.items():
        fit = fit_slope(rec, ref.F_star, prob.params.kappa)
        row[f"{name}_iters"] = rec.iterations
        row[f"{name}_s"] = fit.s
        row[f"{name}_transformed"] = fit.transformed
    row["_records"] = recs
    return row


def slope_study(base: ExperimentConfig, cs=None, workers: int | None = None) -> list:
    cs = c_grid() if cs is None else cs
    cfgs = [replace(base, c=float(c)) for c in cs]
    return parallel_map(slope_point, cfgs, workers)


def slope_exponents(rows: list, algorithms=("RAPG", "RPG")) -> dict:
    kappa = np.array([r["kappa"] for r in rows])
    return {a: loglog_slope(kappa, np.array([r[f"{a}_transformed"] for r in rows]))
            for a in algorithms if f"{a}_transformed" in rows[0]}


# ---------------------------------------------------------------------------
# parallelism and output


def worker_count(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, workers)
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def parallel_map(fn, items, workers: int | None = None) -> list:
    w = worker_count(workers)
    if w == 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(w) as ex:
        return list(ex.map(fn, items))


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: list, rows, version: str, meta: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {version}\n")
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path) -> tuple[list, list]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def config_meta(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["algorithms"] = ",".join(cfg.algorithms)
    d["noise_variance"] = data.NOISE_VARIANCE
    d.pop("out")
    return d


def write_trace(path, rec: RunRecord, meta: dict | None = None):
    rows = zip(*(rec.rows[c] for c in TRACE_COLUMNS))
    write_csv(path, TRACE_COLUMNS, rows, TRACE_VERSION, meta)


def write_series(path, x, y, names=("x", "y")):
    write_csv(path, list(names), zip(x, y), "rapg-series/1")


SUMMARY_COLUMNS = ["algorithm", "seed", "iterations", "F_final", "sparsity", "reason",
                   "prox_solves", "restarts", "safeguards"]


def summary_row(rec: RunRecord, seed: int) -> list:
    s = rec.summary()
    return [rec.algorithm, seed, s["iterations"], s["F_final"], rec.sparsity(SPARSITY_THRESHOLD),
            s["reason"], s["prox_solves"], s["restarts"], s["safeguards"]]


def _run_seed(cfg: ExperimentConfig):
    return cfg.seed, run_protocol(cfg)


def run_experiment(cfg: ExperimentConfig, n_seeds: int = 1, workers: int | None = None) -> dict:
    """Run every algorithm for ``n_seeds`` consecutive seeds and write traces, series and summaries.

    Outputs under ``cfg.out``: ``trace_<alg>_seed<s>.csv``, ``fgap_<alg>_seed<s>.csv``,
    ``eta_<alg>_seed<s>.csv``, ``summary.csv``, ``mean.csv`` and ``timing.csv``.
    Everything except ``timing.csv`` is byte-identical across repeated runs.
    """
    out = Path(cfg.out)
    cfgs = [replace(cfg, seed=cfg.seed + i) for i in range(n_seeds)]
    results = parallel_map(_run_seed, cfgs, workers)
    meta = config_meta(cfg)
    summary, timing = [], []
    for seed, recs in results:
        F_best = min(r.F_final for r in recs.values())
        for name, rec in recs.items():
            tag = f"{name}_seed{seed}"
            write_trace(out / f"trace_{tag}.csv", rec, {**meta, "seed": seed})
            F = rec.column("F")
            write_series(out / f"fgap_{tag}.csv", rec.column("k"), F - F_best, ("k", "F_minus_best"))
            write_series(out / f"eta_{tag}.csv", rec.column("k"), rec.column("eta_norm"), ("k", "eta_norm"))
            summary.append(summary_row(rec, seed))
            timing.append([name, seed, rec.wall_time])
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary, SUMMARY_VERSION, meta)
    write_csv(out / "timing.csv", ["algorithm", "seed", "time_s"], timing, "rapg-timing/1")
    means = mean_table(summary, timing)
    # mean wall times stay out of mean.csv so that it is reproducible byte for byte
    write_csv(out / "mean.csv", ["algorithm", "iterations", "sparsity"],
              [[a, *v[:2]] for a, v in means.items()], SUMMARY_VERSION, meta)
    return {"results": dict(results), "summary": summary, "means": means}


def mean_table(summary: list, timing: list | None = None) -> dict:
    out = {}
    algs = list(dict.fromkeys(r[0] for r in summary))
    for a in algs:
        its = [r[2] for r in summary if r[0] == a]
        sp = [r[4] for r in summary if r[0] == a]
        t = [r[2] for r in (timing or []) if r[0] == a]
        out[a] = [float(np.mean(its)), float(np.mean(sp)), float(np.mean(t)) if t else float("nan")]
    return out


def write_slope_study(out, rows: list, meta: dict | None = None) -> dict:
    out = Path(out)
    cols = [k for k in rows[0] if not k.startswith("_")]
    write_csv(out / "slopes.csv", cols, ([r[k] for k in cols] for r in rows), SLOPE_VERSION, meta)
    exps = slope_exponents(rows)
    for a in exps:
        write_series(out / f"kappa_{a}.csv", [r["kappa"] for r in rows],
                     [r[f"{a}_transformed"] for r in rows], ("kappa", "transformed"))
    return exps
