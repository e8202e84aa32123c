"""Command line front end for the benchmark experiments.

Subcommands:
  rpca-bench    seeded matrix-decomposition benchmark of the Bregman
                proximal solver against the three-block baseline
  dcopf         solve a power flow placement case (built-in fixture or a
                MATPOWER file)
  verify-trace  check that a dumped iteration trace has nonincreasing merit

Machine-readable CSVs carry full double precision; the stdout tables use
4-decimal E notation.  With ``--no-timing`` the wall-time columns are
written as 0.0 so that identical manifests produce byte-identical files.
"""

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import dcopf as dcopf_app
from . import engine, matpower, rpca

# decorrelates the solver's random initialization stream from the
# instance-generation stream when both derive from the same seed
INIT_SEED_OFFSET = 500_000_011

RPCA_RUN_FIELDS = (
    "seed",
    "algorithm",
    "time_seconds",
    "RE",
    "iterations",
    "rank_L_hat",
    "sparsity_S_hat",
    "converged",
)
RPCA_SUMMARY_FIELDS = (
    "gamma_noise",
    "r",
    "s",
    "algorithm",
    "time_seconds",
    "RE",
    "iterations",
    "rank_L_hat",
    "sparsity_S_hat",
    "rank_L_O",
    "sparsity_S_O",
)
DCOPF_RUN_FIELDS = (
    "seed",
    "objective_opf1_rounded",
    "objective_opf1_raw",
    "objective_relaxed",
    "binary_violation",
    "feasibility_residual",
    "rounded_feasible",
    "iterations",
    "time_seconds",
    "converged",
)


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    """A fully resolved experiment request."""

    kind: str
    params: dict
    seeds: list[int]
    out_dir: str
    jobs: int
    dump_trace: bool
    allow_maxiter: bool
    no_timing: bool

    def validate(self):
        if not self.seeds:
            raise UsageError("seed list is empty; give --seeds K or --seed-list")
        if self.jobs < 1:
            raise UsageError("--jobs must be at least 1")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_csv(path, fields, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _resolve_seeds(args) -> list[int]:
    if args.seed_list is not None:
        text = args.seed_list.strip()
        return [int(tok) for tok in text.split(",") if tok.strip()] if text else []
    if args.seeds is not None:
        return list(range(args.seeds))
    return []


def _add_common_flags(parser):
    parser.add_argument("--seeds", type=int, default=None, help="use seeds 0..K-1")
    parser.add_argument("--seed-list", default=None, help="comma separated explicit seeds")
    parser.add_argument("--tol", type=float, default=None, help="stop tolerance")
    parser.add_argument("--max-iter", type=int, default=None, help="iteration cap")
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="parallel runs (default: core count)")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--dump-trace", action="store_true",
                        help="write per-iteration trace CSVs")
    parser.add_argument("--allow-maxiter", action="store_true",
                        help="exit 0 even when runs stop at the iteration cap")
    parser.add_argument("--no-timing", action="store_true",
                        help="write 0.0 wall times for byte-reproducible output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bpladmm")
    sub = parser.add_subparsers(dest="command", required=True)

    p_rpca = sub.add_parser("rpca-bench", help="seeded RPCA benchmark")
    p_rpca.add_argument("--size", type=int, nargs=2, default=[100, 100],
                        metavar=("M", "D"), help="matrix shape")
    p_rpca.add_argument("--rank", type=int, default=10, help="ground truth rank")
    p_rpca.add_argument("--sparsity", type=float, default=0.05,
                        help="ground truth sparsity ratio")
    p_rpca.add_argument("--noise", type=float, default=1e-2, help="noise level")
    p_rpca.add_argument("--rho", type=float, default=2.0 + 1e-10)
    p_rpca.add_argument("--alpha", type=float, default=1e-2)
    p_rpca.add_argument("--gamma", type=float, default=1.0)
    _add_common_flags(p_rpca)

    p_dcopf = sub.add_parser("dcopf", help="solve a placement case")
    src = p_dcopf.add_mutually_exclusive_group(required=True)
    src.add_argument("--case", default=None, help="MATPOWER .m case file")
    src.add_argument("--fixture", choices=["2bus"], default=None,
                     help="built-in case")
    p_dcopf.add_argument("--rho", type=float, default=None,
                         help="penalty (default 2*eta + 1e-10)")
    p_dcopf.add_argument("--alpha", type=float, default=1e-2)
    p_dcopf.add_argument("--gamma", type=float, default=80.0)
    p_dcopf.add_argument("--eta", type=float, default=None,
                         help="slack penalty (default: fixture 1e5, case files 900)")
    p_dcopf.add_argument("--jitter", type=float, default=0.0,
                         help="uniform init perturbation per seed")
    _add_common_flags(p_dcopf)

    p_verify = sub.add_parser("verify-trace", help="check a trace's merit column")
    p_verify.add_argument("trace", help="trace CSV written with --dump-trace")
    p_verify.add_argument("--slack-scale", type=float, default=1e-8)
    return parser


def _rpca_one_seed(task):
    """Run both algorithms on one seeded instance; returns per-run rows."""
    (m, d, r, s, noise, seed, rho, alpha, gamma, tol, max_iter, out_dir, dump) = task
    config = rpca.RpcaConfig(
        rows=m, cols=d, noise=noise, gamma=gamma, alpha=alpha, rho=rho,
        tolerance=tol, max_iterations=max_iter,
    )
    instance = rpca.generate_instance(m, d, r, s, noise, seed)
    init_seed = seed + INIT_SEED_OFFSET
    results = {}
    for name, solver in (("bpl-admm", rpca.bpl_admm_rpca), ("admm3", rpca.admm3_baseline)):
        solution = solver(instance, config, init_seed)
        if dump:
            engine.write_reports_csv(
                solution.reports, os.path.join(out_dir, f"trace_rpca_{name}_seed{seed}.csv")
            )
        results[name] = (
            solution.wall_time,
            solution.relative_error,
            solution.iterations,
            solution.rank_L,
            solution.sparsity_S,
            solution.converged,
        )
    return seed, results


def cmd_rpca_bench(args) -> int:
    manifest = RunManifest(
        kind="rpca-bench",
        params={
            "m": args.size[0], "d": args.size[1], "r": args.rank, "s": args.sparsity,
            "noise": args.noise, "rho": args.rho, "alpha": args.alpha,
            "gamma": args.gamma,
            "tol": args.tol if args.tol is not None else 1e-6,
            "max_iter": args.max_iter if args.max_iter is not None else 4000,
        },
        seeds=_resolve_seeds(args),
        out_dir=args.out,
        jobs=args.jobs,
        dump_trace=args.dump_trace,
        allow_maxiter=args.allow_maxiter,
        no_timing=args.no_timing,
    )
    manifest.validate()
    p = manifest.params
    if not 1 <= p["r"] <= min(p["m"], p["d"]):
        raise UsageError(f"rank {p['r']} out of range for a {p['m']}x{p['d']} matrix")
    if not 0.0 < p["s"] < 1.0:
        raise UsageError(f"sparsity ratio {p['s']} must lie in (0, 1)")
    config = rpca.RpcaConfig(
        rows=p["m"], cols=p["d"], noise=p["noise"], gamma=p["gamma"],
        alpha=p["alpha"], rho=p["rho"], tolerance=p["tol"], max_iterations=p["max_iter"],
    )
    try:
        engine.validate_parameters(config.solver_params())
    except engine.ParameterError as exc:
        raise UsageError(str(exc)) from exc

    os.makedirs(manifest.out_dir, exist_ok=True)
    tasks = [
        (p["m"], p["d"], p["r"], p["s"], p["noise"], seed, p["rho"], p["alpha"],
         p["gamma"], p["tol"], p["max_iter"], manifest.out_dir, manifest.dump_trace)
        for seed in manifest.seeds
    ]
    if manifest.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=manifest.jobs) as pool:
            outcomes = list(pool.map(_rpca_one_seed, tasks))
    else:
        outcomes = [_rpca_one_seed(t) for t in tasks]
    outcomes.sort(key=lambda item: manifest.seeds.index(item[0]))

    run_rows = []
    all_converged = True
    per_alg: dict = {"bpl-admm": [], "admm3": []}
    for seed, results in outcomes:
        for name in ("bpl-admm", "admm3"):
            wall, re_val, iters, rank_hat, sparsity_hat, converged = results[name]
            if manifest.no_timing:
                wall = 0.0
            all_converged &= converged
            run_rows.append([seed, name, wall, re_val, iters, rank_hat, sparsity_hat, converged])
            per_alg[name].append((wall, re_val, iters, rank_hat, sparsity_hat))
    _write_csv(os.path.join(manifest.out_dir, "rpca_runs.csv"), RPCA_RUN_FIELDS, run_rows)

    summary_rows = []
    print(f"{'algorithm':>10} {'time':>10} {'RE':>12} {'iter':>8} {'rank':>7} {'sparsity':>10}")
    for name in ("bpl-admm", "admm3"):
        data = np.array(per_alg[name], dtype=float)
        means = data.mean(axis=0)
        summary_rows.append([
            p["noise"], p["r"], p["s"], name,
            means[0], means[1], means[2], means[3], means[4],
            p["r"], int(round(p["s"] * p["m"] * p["d"])),
        ])
        print(
            f"{name:>10} {means[0]:>10.4E} {means[1]:>12.4E} "
            f"{means[2]:>8.1f} {means[3]:>7.2f} {means[4]:>10.1f}"
        )
    _write_csv(os.path.join(manifest.out_dir, "rpca_summary.csv"),
               RPCA_SUMMARY_FIELDS, summary_rows)
    return 0 if (all_converged or manifest.allow_maxiter) else 1


def _dcopf_one_seed(task):
    (case, rho, alpha, tol, max_iter, jitter, seed, out_dir, dump) = task
    solution = dcopf_app.solve_dcopf(
        case, rho=rho, alpha=alpha, tol=tol, max_iterations=max_iter,
        init_jitter=jitter, seed=seed,
    )
    if dump:
        engine.write_reports_csv(
            solution.reports, os.path.join(out_dir, f"trace_dcopf_seed{seed}.csv")
        )
    return seed, solution


def cmd_dcopf(args) -> int:
    if args.fixture == "2bus":
        eta = args.eta if args.eta is not None else 1e5
        case = dcopf_app.two_bus_fixture(gamma=args.gamma, eta=eta)
    else:
        with open(args.case, encoding="utf-8") as fh:
            text = fh.read()
        mp = matpower.parse_case(text)
        eta = args.eta if args.eta is not None else 900.0
        case = matpower.to_dcopf_case(mp, gamma=args.gamma, eta=eta)
    if args.seeds is None and args.seed_list is None:
        seeds = [0]  # a single canonical run unless seeds are requested
    else:
        seeds = _resolve_seeds(args)
    manifest = RunManifest(
        kind="dcopf-solve",
        params={
            "rho": args.rho, "alpha": args.alpha, "gamma": args.gamma, "eta": eta,
            "tol": args.tol if args.tol is not None else 1e-5,
            "max_iter": args.max_iter if args.max_iter is not None else 4000,
            "jitter": args.jitter,
        },
        seeds=seeds,
        out_dir=args.out,
        jobs=args.jobs,
        dump_trace=args.dump_trace,
        allow_maxiter=args.allow_maxiter,
        no_timing=args.no_timing,
    )
    manifest.validate()
    p = manifest.params
    rho = p["rho"] if p["rho"] is not None else 2.0 * case.eta + 1e-10
    try:
        engine.validate_parameters(
            dcopf_app.solver_params_for(case, rho=rho, alpha=p["alpha"],
                                        tol=p["tol"], max_iterations=p["max_iter"])
        )
    except engine.ParameterError as exc:
        raise UsageError(str(exc)) from exc

    os.makedirs(manifest.out_dir, exist_ok=True)
    tasks = [
        (case, rho, p["alpha"], p["tol"], p["max_iter"], p["jitter"], seed,
         manifest.out_dir, manifest.dump_trace)
        for seed in manifest.seeds
    ]
    if manifest.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=manifest.jobs) as pool:
            outcomes = list(pool.map(_dcopf_one_seed, tasks))
    else:
        outcomes = [_dcopf_one_seed(t) for t in tasks]
    outcomes.sort(key=lambda item: manifest.seeds.index(item[0]))

    run_rows = []
    all_converged = True
    best = None
    for seed, sol in outcomes:
        wall = 0.0 if manifest.no_timing else sol.wall_time
        all_converged &= sol.converged
        run_rows.append([
            seed, sol.objective_opf1_rounded, sol.objective_opf1_raw,
            sol.objective_relaxed, sol.binary_violation, sol.feasibility_residual,
            bool(sol.rounded_feasible), sol.iterations, wall, sol.converged,
        ])
        if best is None or sol.objective_opf1_rounded < best[1].objective_opf1_rounded:
            best = (seed, sol)
    _write_csv(os.path.join(manifest.out_dir, "dcopf_runs.csv"), DCOPF_RUN_FIELDS, run_rows)

    _, best_sol = best
    bus_rows = [
        [i, best_sol.u_rounded[i], best_sol.u[i], best_sol.pv[i], best_sol.gen[i], best_sol.theta[i]]
        for i in range(len(best_sol.u))
    ]
    _write_csv(os.path.join(manifest.out_dir, "dcopf_solution.csv"),
               ("bus", "u_rounded", "u", "P_pv", "P_gen", "theta"), bus_rows)

    objectives = np.array([sol.objective_opf1_rounded for _, sol in outcomes])
    iterations = np.array([sol.iterations for _, sol in outcomes], dtype=float)
    times = np.array(
        [0.0 if manifest.no_timing else sol.wall_time for _, sol in outcomes]
    )
    _write_csv(
        os.path.join(manifest.out_dir, "dcopf_summary.csv"),
        ("mean_objective", "best_objective", "mean_iterations", "mean_time_seconds", "runs"),
        [[objectives.mean(), objectives.min(), iterations.mean(), times.mean(), len(outcomes)]],
    )
    print(
        f"objective mean {objectives.mean():.4E} best {objectives.min():.4E} "
        f"iterations mean {iterations.mean():.1f} "
        f"rounded-u feasible {all(bool(s.rounded_feasible) for _, s in outcomes)}"
    )
    return 0 if (all_converged or manifest.allow_maxiter) else 1


def cmd_verify_trace(args) -> int:
    with open(args.trace, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = [(int(row["n"]), float(row["merit"])) for row in reader]
    if not rows:
        print("trace is empty", file=sys.stderr)
        return 1
    merits = {n: m for n, m in rows}
    start = 1 if 1 in merits else min(merits)
    slack = args.slack_scale * (1.0 + abs(merits[start]))
    violations = 0
    ordered = [m for n, m in sorted(merits.items()) if n >= start]
    for k in range(1, len(ordered)):
        increase = ordered[k] - ordered[k - 1]
        if increase > slack:
            violations += 1
            print(f"merit increased by {increase:.6e} at trace row {k + start}")
    if violations:
        print(f"FAIL: {violations} merit increases beyond slack {slack:.3e}")
        return 1
    print(f"OK: merit nonincreasing over {len(ordered)} rows (slack {slack:.3e})")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "rpca-bench":
            return cmd_rpca_bench(args)
        if args.command == "dcopf":
            return cmd_dcopf(args)
        if args.command == "verify-trace":
            return cmd_verify_trace(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except matpower.MatpowerParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
