"""Command line interface: ``lalopt {gen,solve,check,certify,bench,profile}``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, theory
from .core import BacktrackingBeta, ConstantBeta, SolverConfig, load_iterates, rebuild_trace, solve, write_trace_csv
from .errors import DerivativeCheckError
from .model import InstanceConstants, check_derivatives, estimate_constants
from .scp import ScpConfig, scp_solve


def _cmd_gen(args):
    spec = bench.GeneratorSpec(
        n=args.n, m=args.m, seed=args.seed, density=args.density,
        mu_lo=args.mu_lo, mu_hi=args.mu_hi, constraint_scale=args.constraint_scale,
        feasible_start=args.feasible_start, convex_curvature=args.convex_curvature,
    )
    prob, x0 = bench.gen_qcqp(spec)
    bench.write_problem(args.out, prob, x0)
    return 0


def _lal_config(args) -> SolverConfig:
    if args.backtrack:
        pol = BacktrackingBeta(beta_init=args.beta)
    else:
        pol = ConstantBeta(args.beta)
    return SolverConfig(
        rho=args.rho, beta_policy=pol, alpha=args.alpha, eps1=args.eps1, eps2=args.eps2,
        eps_stat=args.eps_stat, max_iter=args.max_iter,
    )


def _cmd_solve(args):
    pf = bench.read_problem(args.problem)
    if args.solver == "lal":
        rep = solve(pf.problem, pf.x0, pf.lam0, _lal_config(args))
    else:
        cfg = ScpConfig(beta=args.beta, eps1=args.eps1, eps2=args.eps2,
                        eps_stat=args.eps_stat, max_iter=args.max_iter)
        rep = scp_solve(pf.problem, pf.x0, cfg, pf.lam0)
    if args.trace:
        write_trace_csv(rep, args.trace)
    w = csv.writer(sys.stdout)
    w.writerow(("status", "iters", "time_s", "f_final", "feas_norm", "stat_norm"))
    w.writerow((rep.status, rep.iterations, f"{rep.wall_time:.6g}",
                repr(pf.problem.eval_f(rep.x)), repr(rep.residual.feas_norm),
                repr(rep.residual.grad_lag_norm)))
    if rep.message:
        print(rep.message, file=sys.stderr)
    return 0 if rep.converged else 1


def _cmd_check(args):
    pf = bench.read_problem(args.problem)
    prob = pf.problem
    try:
        rep = check_derivatives(prob, num_points=args.points, seed=args.seed)
    except DerivativeCheckError as exc:
        print(f"derivative check failed: {exc}", file=sys.stderr)
        return 1
    rng = bench.make_rng(args.seed)
    pts = pf.x0 + rng.standard_normal((max(args.points, 2), prob.n))
    k = estimate_constants(prob, pts)
    w = csv.writer(sys.stdout)
    w.writerow(("quantity", "value"))
    w.writerow(("grad_error", repr(rep.grad_error)))
    w.writerow(("jac_error", repr(rep.jac_error)))
    w.writerow(("derivatives_ok", int(rep.ok)))
    for name in ("M_f", "L_f", "M_F", "L_F", "sigma"):
        w.writerow((name, repr(getattr(k, name))))
    return 0 if rep.ok else 1


def _cmd_certify(args):
    pf = bench.read_problem(args.problem)
    it = load_iterates(args.trace)
    rho, alpha = float(it["rho"]), float(it["alpha"])
    if not rho > 0:
        print("certification applies to linearized AL traces (rho > 0)", file=sys.stderr)
        return 2
    trace = rebuild_trace(pf.problem, it["X"], it["Lam"], it["betas"], rho, alpha)
    consts = pf.constants
    if args.constants:
        consts = InstanceConstants.from_dict(json.loads(Path(args.constants).read_text()))
    if consts is None:
        consts = theory.trajectory_constants(pf.problem, trace, rho)
    summaries = theory.certify(pf.problem, trace, rho, alpha, consts)
    w = csv.writer(sys.stdout)
    w.writerow(("check", "pass_rate", "worst_margin"))
    for s in summaries:
        w.writerow((s.name, repr(s.pass_rate), repr(s.worst_margin)))
    return 0 if all(s.pass_rate == 1.0 for s in summaries) else 1


def _cmd_bench(args):
    suite = Path(args.suite)
    files = sorted(suite.glob("*.json"))
    if not files:
        print(f"no problem files in {suite}", file=sys.stderr)
        return 2
    known = bench.default_solvers(args.rho, args.beta, args.eps1, args.eps2, args.max_iter)
    names = [s.strip() for s in args.solvers.split(",") if s.strip()]
    unknown = [s for s in names if s not in known]
    if unknown:
        print(f"unknown solver(s): {', '.join(unknown)}", file=sys.stderr)
        return 2
    results = bench.run_suite(files, [known[s] for s in names], args.parallelism, args.trace_dir)
    bench.write_results_csv(results, args.out)
    return 0


def _cmd_profile(args):
    results = bench.read_results_csv(args.inp)
    curves = bench.performance_profile(results, args.metric)
    bench.write_profile_csv(curves, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lalopt", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a random QCQP problem file")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--density", type=float, default=1.0)
    g.add_argument("--mu-lo", type=float, default=1.0)
    g.add_argument("--mu-hi", type=float, default=10.0)
    g.add_argument("--constraint-scale", type=float, default=1.0)
    g.add_argument("--feasible-start", action="store_true")
    g.add_argument("--convex-curvature", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen)

    s = sub.add_parser("solve", help="solve a problem file")
    s.add_argument("--problem", required=True)
    s.add_argument("--solver", choices=("lal", "scp"), default="lal")
    s.add_argument("--rho", type=float, default=1e3)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--backtrack", action="store_true")
    s.add_argument("--eps1", type=float, default=1e-3)
    s.add_argument("--eps2", type=float, default=1e-5)
    s.add_argument("--eps-stat", type=float, default=None)
    s.add_argument("--max-iter", type=int, default=10_000)
    s.add_argument("--trace", default=None)
    s.set_defaults(func=_cmd_solve)

    c = sub.add_parser("check", help="derivative check and constant estimates")
    c.add_argument("--problem", required=True)
    c.add_argument("--points", type=int, default=10)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=_cmd_check)

    ce = sub.add_parser("certify", help="evaluate the convergence certificates on a trace")
    ce.add_argument("--problem", required=True)
    ce.add_argument("--trace", required=True)
    ce.add_argument("--constants", default=None)
    ce.set_defaults(func=_cmd_certify)

    b = sub.add_parser("bench", help="run solvers over a directory of problems")
    b.add_argument("--suite", required=True)
    b.add_argument("--solvers", default="lal,scp")
    b.add_argument("--parallelism", type=int, default=1)
    b.add_argument("--out", required=True)
    b.add_argument("--trace-dir", default=None)
    b.add_argument("--rho", type=float, default=1e3)
    b.add_argument("--beta", type=float, default=1.0)
    b.add_argument("--eps1", type=float, default=1e-3)
    b.add_argument("--eps2", type=float, default=1e-5)
    b.add_argument("--max-iter", type=int, default=10_000)
    b.set_defaults(func=_cmd_bench)

    p = sub.add_parser("profile", help="performance profile from a results CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--metric", choices=("time", "iters"), default="time")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_profile)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
