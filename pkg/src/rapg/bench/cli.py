"""Command line entry point: ``rapg-bench {gen,run,slope,compare}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data
from .experiment import (
    ALGORITHMS,
    MODELS,
    ExperimentConfig,
    c_grid,
    config_from_dict,
    config_meta,
    parse_config,
    run_experiment,
    slope_study,
    write_slope_study,
)

L_MODES = ("auto", "5hess", "2d2", "1.2d2", "manual")


def _common(ap: argparse.ArgumentParser):
    ap.add_argument("--config", help="key=value file; flags given explicitly override it")
    ap.add_argument("--model", choices=MODELS)
    ap.add_argument("--m", type=int)
    ap.add_argument("--n", type=int)
    ap.add_argument("--p", type=int)
    ap.add_argument("--lambda", dest="lam", type=float)
    ap.add_argument("--c", type=float)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--algos", dest="algorithms", help=f"comma list from {','.join(ALGORITHMS)}")
    ap.add_argument("--L-mode", dest="L_mode", choices=L_MODES)
    ap.add_argument("--L", type=float, help="Lipschitz constant for --L-mode manual")
    ap.add_argument("--mu", type=float)
    ap.add_argument("--rho", type=float)
    ap.add_argument("--density", type=float, help="fraction of nonzeros in the planted sparse vector")
    ap.add_argument("--out")
    ap.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to average over")
    ap.add_argument("--max-iters", dest="max_iters", type=int)
    ap.add_argument("--tol", type=float)
    ap.add_argument("--workers", type=int, help="process count (default from RAPG_WORKERS)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rapg-bench", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name, text in [
        ("gen", "generate a data set and save it as .npz"),
        ("run", "run the selected algorithms and write traces"),
        ("slope", "condition-number study over a c sweep"),
        ("compare", "average iterations, time and sparsity over seeds"),
    ]:
        sp = sub.add_parser(name, help=text)
        _common(sp)
        if name == "slope":
            sp.add_argument("--n-c", dest="n_c", type=int, default=20, help="number of c values in [0.01, 1]")
    return ap


def config_from_args(args) -> ExperimentConfig:
    base = {}
    if args.config:
        base = parse_config(Path(args.config).read_text())
    keys = ["model", "m", "n", "p", "lam", "c", "seed", "algorithms", "L_mode", "L", "mu", "rho",
            "density", "out", "max_iters", "tol"]
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            base[k] = v
    return config_from_dict(base)


def cmd_gen(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.model == "SpcaSphere":
        A, V, _ = data.gen_spca_sphere_data(cfg.m, cfg.n, cfg.c, cfg.seed, density=cfg.density)
        x0 = data.init_point_sphere(A, cfg.seed)
        path = out / f"sphere_m{cfg.m}_n{cfg.n}_c{cfg.c}_seed{cfg.seed}.npz"
        np.savez(path, A=A, v1=V[:, 0], x0=x0)
    elif cfg.model == "SpcaOblique":
        A, D2 = data.gen_spca_oblique_data(cfg.m, cfg.n, cfg.p, cfg.seed)
        X0 = data.init_point_oblique(A, cfg.p)
        path = out / f"oblique_m{cfg.m}_n{cfg.n}_p{cfg.p}_seed{cfg.seed}.npz"
        np.savez(path, A=A, D2=D2, X0=X0)
    else:
        print(f"gen supports SpcaSphere and SpcaOblique, not {cfg.model}", file=sys.stderr)
        return 2
    print(path)
    return 0


def _print_table(means: dict):
    print(f"{'algorithm':<10}{'iterations':>12}{'sparsity':>10}{'time_s':>10}")
    for a, (it, sp, t) in means.items():
        print(f"{a:<10}{it:>12.1f}{sp:>10.3f}{t:>10.2f}")


def cmd_run(cfg, args) -> int:
    res = run_experiment(cfg, n_seeds=args.seeds, workers=args.workers)
    for row in res["summary"]:
        print(",".join(str(v) for v in row))
    return 0


def cmd_compare(cfg, args) -> int:
    res = run_experiment(cfg, n_seeds=args.seeds, workers=args.workers)
    _print_table(res["means"])
    return 0


def cmd_slope(cfg, args) -> int:
    if cfg.model != "SpcaSphere":
        cfg = replace(cfg, model="SpcaSphere")
    cfg = replace(cfg, algorithms=tuple(a for a in cfg.algorithms if a in ("RPG", "RAPG")) or ("RPG", "RAPG"))
    rows = slope_study(cfg, c_grid(args.n_c), workers=args.workers)
    exps = write_slope_study(cfg.out, rows, config_meta(cfg))
    for r in rows:
        print(f"c={r['c']:.4g} kappa={r['kappa']:.4g} "
              + " ".join(f"{a}={r[f'{a}_transformed']:.4g}" for a in exps))
    for a, e in exps.items():
        print(f"{a} log-log exponent {e:.3f}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    defaults = {"slope": dict(model="SpcaSphere", m=20, n=1000, lam=1e-4)}
    cfg = config_from_args(args)
    if args.cmd == "slope" and not args.config:
        cfg = replace(cfg, **{k: v for k, v in defaults["slope"].items() if getattr(args, k, None) is None})
    return {"gen": cmd_gen, "run": cmd_run, "slope": cmd_slope, "compare": cmd_compare}[args.cmd](cfg, args)


if __name__ == "__main__":
    sys.exit(main())
