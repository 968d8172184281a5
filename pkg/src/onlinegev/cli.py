"""Command-line entry point: ``python -m onlinegev <subcommand>``.

Subcommands
-----------
landscape   enumerate and classify every equilibrium of a problem
solve       run SGHA once and write the trajectory CSV
diagnose    check a recorded r = 1 trajectory against the diffusion predictions
experiment  multi-seed sweep with per-seed and summary CSVs

``--out`` is a file for the first three and a directory for ``experiment``;
without it, CSV goes to stdout.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import diffusion, landscape as land
from .errors import DivergenceError, GevError
from .harness import RunConfig, fmt, load_problem, master_seeds, run_experiment, TRAJ_COLUMNS
from .oracle import spec_from_config
from .problem import ground_truth, lagrangian
from .sgha import SghaConfig, run

log = logging.getLogger("onlinegev")

EXIT_OK, EXIT_ERROR, EXIT_DIVERGED = 0, 1, 2


@contextlib.contextmanager
def _sink(path):
    if path is None or str(path) == "-":
        yield sys.stdout
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            yield fh


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def cmd_landscape(args) -> int:
    if not args.config:
        raise SystemExit("landscape needs --config <problem.json>")
    p = load_problem(args.config)
    eqs = land.landscape(p, tol=args.tol)
    with _sink(args.out) as fh:
        w = _writer(fh)
        w.writerow(["index_set", "classification", "lagrangian", "lambda_min_H", "hessian_rank",
                    "curvature_bound", "kkt_primal", "kkt_feasibility"])
        for eq in eqs:
            primal, feas = land.kkt_residual(p, eq.X, eq.Y)
            bound = "" if eq.curvature_bound is None else fmt(eq.curvature_bound)
            w.writerow([";".join(str(i + 1) for i in eq.index_set), eq.classification.value,
                        fmt(lagrangian(p, eq.X, eq.Y)), fmt(eq.lambda_min_H),
                        fmt(eq.hessian_rank), bound, fmt(primal), fmt(feas)])
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _read_json(args.config)
    if not args.config:
        p = load_problem({"setting": 1, "d": 50})
    elif "problem" in cfg:
        p = load_problem(cfg["problem"])
    else:
        # pass the path so that CSV matrices resolve next to the JSON file
        p = load_problem(args.config)
    oracle_cfg = dict(cfg.get("oracle", {"kind": "exact"}))
    if args.oracle:
        oracle_cfg["kind"] = args.oracle
    if args.n_draws is not None:
        oracle_cfg["n_draws"] = args.n_draws
    if args.sigma is not None:
        oracle_cfg["sigma"] = args.sigma
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    specA = spec_from_config(oracle_cfg, p.A, seed)
    specB = spec_from_config(oracle_cfg, p.B, seed)
    scfg = SghaConfig(
        eta=args.eta if args.eta is not None else float(cfg.get("eta", 1e-3)),
        max_iters=args.iters if args.iters is not None else int(cfg.get("iters", 10_000)),
        mode=args.mode or cfg.get("mode", "combined"),
        record_stride=args.stride or int(cfg.get("record_stride", 1)),
        init_seed=seed,
        record_x=args.snapshots,
        record_time=args.timing,
    )
    X0 = ground_truth(p).X if (args.init or cfg.get("init")) == "optimum" else None
    status = EXIT_OK
    try:
        traj, _ = run(p, specA, specB, scfg, X0=X0)
    except DivergenceError as exc:
        log.error("diverged at k=%s; last record %s", exc.k, exc.last_record)
        return EXIT_DIVERGED
    with _sink(args.out) as fh:
        w = _writer(fh)
        header = list(TRAJ_COLUMNS)
        if args.snapshots:
            header += [f"x_{i + 1}_{j + 1}" for j in range(p.r) for i in range(p.d)]
        w.writerow(header)
        for n, rec in enumerate(traj.records):
            row = [fmt(rec.k), fmt(rec.error), fmt(rec.lagrangian), fmt(rec.feasibility),
                   fmt(rec.wallclock_ns)]
            if args.snapshots:
                row += [fmt(v) for v in traj.snapshots[n].ravel(order="F")]
            w.writerow(row)
    return status


def _load_snapshots(path, d: int) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = [i for i, h in enumerate(header) if h.startswith("x_")]
    if len(cols) != d:
        raise GevError(f"{path} needs r = 1 snapshot columns x_1_1..x_{d}_1 (rerun solve --snapshots)")
    ks = np.array([int(r[0]) for r in body], dtype=np.int64)
    X = np.array([[float(r[c]) for c in cols] for r in body])
    return ks, X


def cmd_diagnose(args) -> int:
    p = load_problem(args.problem)
    spec = diffusion.check_commutative(p.A, p.B)
    if spec is None:
        raise GevError("diagnostics need a commuting pencil (AB = BA)")
    ks, X = _load_snapshots(args.run, p.d)
    W = np.sqrt(spec.mu)[None, :] * (X @ spec.O)
    eta = args.eta
    rows: list[list] = []
    if args.check == "ode-slope":
        header = ["k", "slope", "predicted", "rel_err", "r2"]
        for k in range(1, p.d):
            lv = [diffusion.v_ratio(w, k, 0, spec)[1] if w[0] != 0 else math.nan for w in W]
            fit = diffusion.fit_decay_slope(ks, lv, eta, log=True)
            pred = spec.mu[0] * spec.mu[k] * (spec.beta[k] - spec.beta[0])
            rows.append([k + 1, fit.slope, pred, abs(fit.slope / pred - 1), fit.r2])
    elif args.check == "norm-ode":
        header = ["iter", "norm_sq", "predicted"]
        x = np.sum(W * W, axis=1)
        # ||w||^2 follows the logistic ODE with rate 2 lambda_1
        pred = diffusion.norm_ode_prediction(x[0], ks * eta, 2.0 * spec.lam[0])
        rows = [[k, a, b] for k, a, b in zip(ks, x, pred)]
    elif args.check == "phases":
        header = ["iter", "phase"]
        rows = [[k, diffusion.phase_classifier(w, eta).value] for k, w in zip(ks, W)]
    elif args.check == "escape":
        header = ["escape_iter", "escape_time"]
        hit = np.nonzero(W[:, 0] ** 2 > eta)[0]
        k_esc = int(ks[hit[0]]) if hit.size else -1
        rows = [[k_esc, k_esc * eta if hit.size else math.nan]]
    else:  # ou-variance
        header = ["coordinate", "empirical_var", "predicted_var", "rel_err", "G", "G_se"]
        cfg = _read_json(args.config)
        oracle_cfg = cfg.get("oracle", {"kind": "gauss_cov", "n_draws": 40})
        sA = spec_from_config(oracle_cfg, p.A, args.seed or 0)
        sB = spec_from_config(oracle_cfg, p.B, args.seed or 0)
        consts = diffusion.mc_ou_constants(spec, sA, sB, n_mc=args.n_mc)
        Z = diffusion.z_process(W[int(args.burn_in * len(W)):], eta)
        for i in range(1, p.d):
            pv = diffusion.ou_stationary_variance(consts.G[i, 0], spec.mu[i], spec.beta[0], spec.beta[i])
            ev = float(Z[:, i].var())
            rows.append([i + 1, ev, pv, abs(ev / pv - 1) if pv else math.nan,
                         consts.G[i, 0], consts.G_se[i, 0]])
    with _sink(args.out) as fh:
        w = _writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _read_json(args.config)
    if args.seed is not None:
        cfg.pop("seeds", None)
        cfg["seeds"] = master_seeds(args.seed, int(cfg.pop("n_seeds", 20)))
    if args.out:
        cfg["output_dir"] = str(args.out)
    config = RunConfig.from_dict(cfg)
    summary = run_experiment(config, jobs=args.jobs)
    for r in summary.results:
        log.info("seed %d: initial %.4g final %.4g alignment %.4f%s", r.seed, r.initial_error,
                 r.final_error, r.final_alignment, " DIVERGED" if r.diverged else "")
    return EXIT_OK if summary.ok else EXIT_DIVERGED


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # Subcommand copies must not reset values given before the subcommand,
    # so their defaults are suppressed.
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", help="JSON problem/run configuration", **kw)
    g.add_argument("--seed", type=int, help="64-bit seed (master seed for experiment)", **kw)
    g.add_argument("--jobs", type=int, help="parallel seeds for experiment",
                   **(kw or {"default": 1}))
    g.add_argument("--out", help="output CSV (directory for experiment); stdout if absent", **kw)
    g.add_argument("--verbose", "-v", action="store_true", **kw)
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    ap = argparse.ArgumentParser(prog="onlinegev", description=__doc__.splitlines()[0],
                                 parents=[_global_flags(suppress=False)])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("landscape", parents=[common], help="classify all equilibria")
    s.add_argument("--tol", type=float, default=land.CLASSIFY_TOL)
    s.set_defaults(func=cmd_landscape)

    s = sub.add_parser("solve", parents=[common], help="run SGHA once")
    s.add_argument("--eta", type=float)
    s.add_argument("--iters", type=int)
    s.add_argument("--mode", choices=["two-step", "combined"])
    s.add_argument("--stride", type=int)
    s.add_argument("--oracle", choices=["exact", "gauss_cov", "add_noise"])
    s.add_argument("--n-draws", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--init", choices=["random", "optimum"])
    s.add_argument("--snapshots", action="store_true", help="append iterate columns x_i_j")
    s.add_argument("--timing", action="store_true", help="fill wallclock_ns (breaks byte replay)")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("diagnose", parents=[common], help="diffusion checks on a trajectory")
    s.add_argument("--run", required=True, help="trajectory CSV written by solve --snapshots")
    s.add_argument("--problem", required=True, help="problem JSON")
    s.add_argument("--check", required=True,
                   choices=["ode-slope", "ou-variance", "norm-ode", "phases", "escape"])
    s.add_argument("--eta", type=float, required=True, help="step size used for the run")
    s.add_argument("--burn-in", type=float, default=0.2, help="fraction of records to drop")
    s.add_argument("--n-mc", type=int, default=100_000)
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("experiment", parents=[common], help="multi-seed sweep")
    s.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GevError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR
    except (OSError, json.JSONDecodeError) as exc:
        log.error("cannot read input: %s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
