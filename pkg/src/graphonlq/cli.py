"""Command-line entry point.

Subcommands: ``solve`` (backward system + feedback, CSV artifacts and a JSON
report, exit 0 iff all hard checks pass), ``certify`` (solve plus the
fundamental-relation certification of the optimal law and a family of
perturbed laws), ``simulate`` (closed-loop mean flow and ensemble summary),
and ``systemic-risk`` (the interbank preset with parameter overrides).

All randomness derives from --seed; outputs carry no timestamps, so repeated
runs with an identical configuration are byte-identical regardless of the
worker-thread count (GRAPHONLQ_THREADS).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .control import InitialCondition, solve_mean_flow, value_function
from .csvio import (
    dump_barkpath,
    dump_empirical,
    dump_feedback,
    dump_gap_reports,
    dump_kpath,
    dump_lambdapath,
    dump_mean_flow,
    dump_ypath,
)
from .grid import build_grid
from .model import ProblemData, validate
from .pipeline import SolutionBundle, solve_system
from .problem_io import ProblemFormatError, compile_expression, load_problem
from .simulate import check_fundamental_relation, evaluate_cost, simulate
from .systemic_risk import PRESETS, SystemicRiskParams, build_model, explicit_K, preset_params
from .timegrid import default_grid

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_INPUT = 2


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("GRAPHONLQ_THREADS", "1")))
    except ValueError:
        return 1


def _add_common(sub: argparse.ArgumentParser) -> None:
    src = sub.add_argument_group("problem source")
    src.add_argument("--problem", help="problem file (TOML)")
    src.add_argument("--preset", choices=sorted(PRESETS), help="built-in model preset")
    sub.add_argument("--n", type=int, default=16, help="label count for presets (default 16)")
    sub.add_argument("--steps-per-unit", type=float, default=1000.0,
                     help="time steps per unit horizon (default 1000)")
    sub.add_argument("--out", default=".", help="output directory")
    sub.add_argument("--seed", type=int, default=0, help="master seed")
    sub.add_argument("--tol-psd", type=float, default=-1e-8,
                     help="eigenvalue slack for positivity checks")
    sub.add_argument("--tol-symmetry", type=float, default=1e-8,
                     help="hard gate on kernel flip-symmetry drift")
    sub.add_argument("--tol-residual", type=float, default=None,
                     help="hard gate on equation residuals "
                          "(default 100*dt^2*(1+max|K|)^2)")
    sub.add_argument("--norm-ceiling", type=float, default=1e6,
                     help="divergence guard on the kernel operator norm")
    sub.add_argument("--init-mean", default="0.0",
                     help="initial state mean: number or expression of u")
    sub.add_argument("--init-std", default="0.0",
                     help="initial state standard deviation: number or expression of u")


def _mc_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--paths", type=int, default=10_000, help="Monte Carlo paths per label")
    sub.add_argument("--epsilon", type=float, default=0.3, help="control-shift perturbation size")
    sub.add_argument("--tol-gap-rel", type=float, default=0.01,
                     help="relative slack on the optimal-gap gate")


def _field_from_spec(spec: str, points: np.ndarray) -> np.ndarray:
    try:
        return np.full(points.shape, float(spec))
    except ValueError:
        fn = compile_expression(spec, ("u",))
        return np.asarray([float(fn(u)) for u in points])


def _load(args) -> tuple[ProblemData, str]:
    if bool(args.problem) == bool(args.preset):
        raise ProblemFormatError("exactly one of --problem or --preset is required")
    if args.problem:
        return load_problem(args.problem), Path(args.problem).stem
    params = preset_params(args.preset)
    return build_model(params, build_grid(args.n)), args.preset


def _initial_condition(args, p: ProblemData) -> InitialCondition:
    mean_u = _field_from_spec(args.init_mean, p.grid.points)
    std_u = _field_from_spec(args.init_std, p.grid.points)
    if np.any(std_u < 0):
        raise ProblemFormatError("--init-std must be nonnegative")
    mean = np.repeat(mean_u[:, None], p.d, axis=1)
    cov = np.einsum("i,ab->iab", std_u**2, np.eye(p.d))
    if np.all(std_u == 0.0):
        return InitialCondition.deterministic(mean)
    return InitialCondition.gaussian(mean, cov)


def _solve_and_report(p: ProblemData, name: str, args) -> tuple[SolutionBundle, dict, list]:
    tg = default_grid(p.t0, p.T, args.steps_per_unit)
    sol = solve_system(p, tg, norm_ceiling=args.norm_ceiling)
    rep = validate(p, tol=args.tol_psd)
    max_k = float(np.max(np.abs(sol.K.values)))
    tol_res = args.tol_residual
    if tol_res is None:
        tol_res = 100.0 * tg.dt**2 * (1.0 + max_k) ** 2
    failures = []
    if not rep.passed:
        failures.append("validation")
    if sol.barK.max_flip_deviation > args.tol_symmetry:
        failures.append("flip_symmetry")
    if sol.K.max_residual > tol_res:
        failures.append("K_residual")
    if sol.barK.max_residual > tol_res:
        failures.append("barK_residual")
    if sol.K.min_eigenvalue < args.tol_psd:
        failures.append("K_psd")

    report = {
        "problem": name,
        "config": {
            "n": p.n, "d": p.d, "m": p.m,
            "t0": p.t0, "T": p.T,
            "steps": tg.n_steps, "dt": tg.dt,
            "seed": args.seed,
        },
        "validation": rep.summary(),
        "riccati": {
            "max_residual": sol.K.max_residual,
            "min_eigenvalue": sol.K.min_eigenvalue,
            "max_norm": max_k,
            "residual_tolerance": tol_res,
        },
        "kernel_riccati": {
            "max_residual": sol.barK.max_residual,
            "max_flip_deviation": sol.barK.max_flip_deviation,
            "max_operator_norm": float(sol.barK.op_norms.max()),
        },
    }
    if name in PRESETS:
        ref = explicit_K(preset_params(name), p.grid, tg.nodes)
        report["explicit_K_max_deviation"] = float(
            np.max(np.abs(sol.K.values[:, :, 0, 0] - ref)))
    return sol, report, failures


def _write_solution(outdir: Path, sol: SolutionBundle) -> None:
    dump_kpath(outdir / "K.csv", sol.K)
    dump_barkpath(outdir / "barK.csv", sol.barK)
    dump_ypath(outdir / "Y.csv", sol.Y)
    dump_lambdapath(outdir / "Lambda.csv", sol.Lam)
    dump_feedback(outdir / "feedback.csv", outdir / "feedback_kernel.csv", sol.law)


def _finish(outdir: Path, report: dict, failures: list) -> int:
    report["failures"] = failures
    report["passed"] = not failures
    with open(outdir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if failures:
        print(f"FAILED checks: {', '.join(failures)} (see {outdir / 'report.json'})")
        return EXIT_CHECK_FAILED
    print(f"ok (artifacts in {outdir})")
    return EXIT_OK


def cmd_solve(args) -> int:
    p, name = _load(args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    sol, report, failures = _solve_and_report(p, name, args)
    _write_solution(outdir, sol)
    return _finish(outdir, report, failures)


def cmd_certify(args) -> int:
    p, name = _load(args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    sol, report, failures = _solve_and_report(p, name, args)
    _write_solution(outdir, sol)

    init = _initial_condition(args, p)
    eps = args.epsilon
    policies = [
        ("optimal", sol.law),
        (f"shift+{eps}", sol.law.shifted(eps)),
        (f"shift+{2 * eps}", sol.law.shifted(2 * eps)),
        (f"shift-{eps}", sol.law.shifted(-eps)),
        ("gains*1.05", sol.law.scaled_gains(1.05)),
        ("no-mean-coupling", sol.law.without_mean_coupling()),
    ]
    threads = _threads()
    reports = [check_fundamental_relation(p, sol, policy, init, args.paths,
                                          args.seed, label=label, threads=threads)
               for label, policy in policies]
    dump_gap_reports(outdir / "gap_report.csv", reports)

    opt = reports[0]
    budget = 3.0 * opt.stderr + args.tol_gap_rel * abs(opt.V)
    if abs(opt.gap) > budget:
        failures.append("optimal_gap")
    for rep in reports[1:]:
        if rep.gap < -3.0 * rep.stderr:
            failures.append(f"negative_gap[{rep.label}]")
    for rep in reports:
        resid_budget = 3.0 * rep.stderr_resid + args.tol_gap_rel * abs(rep.V)
        if abs(rep.gap_minus_penalty) > resid_budget:
            failures.append(f"relation_residual[{rep.label}]")

    report["certification"] = {
        "paths": args.paths,
        "epsilon": eps,
        "gap_budget": budget,
        "policies": [r.as_dict() for r in reports],
    }
    return _finish(outdir, report, failures)


def cmd_simulate(args) -> int:
    p, name = _load(args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    sol, report, failures = _solve_and_report(p, name, args)
    init = _initial_condition(args, p)
    flow = solve_mean_flow(p, sol.law, init, sol.tg)
    ens = simulate(p, sol.law, flow, init, args.paths, args.seed, threads=_threads())
    est = evaluate_cost(p, ens, flow, sol.tg)
    V = value_function(sol.tg.t0, init, sol.K, sol.barK, sol.Y, sol.Lam, p.grid)
    dump_mean_flow(outdir / "mean_flow.csv", flow)
    dump_empirical(outdir / "empirical.csv", ens)
    report["simulation"] = {
        "paths": args.paths,
        "J": est.value,
        "stderr": est.stderr,
        "V": V,
        "gap": est.value - V,
    }
    return _finish(outdir, report, failures)


def cmd_systemic_risk(args) -> int:
    overrides = {}
    if args.k is not None:
        overrides["k"] = args.k
    if args.horizon is not None:
        overrides["T"] = args.horizon
    for field in ("sigma", "eta", "r"):
        spec = getattr(args, field)
        if spec is not None:
            try:
                overrides[field] = float(spec)
            except ValueError:
                fn = compile_expression(spec, ("u",))
                overrides[field] = (lambda f: (lambda u: float(f(u))))(fn)
    base = "systemic-risk-homogeneous" if args.homogeneous else "systemic-risk"
    params = preset_params(base, **overrides)

    p = build_model(params, build_grid(args.n))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    tgname = base if not overrides else "systemic-risk-custom"
    sol, report, failures = _solve_and_report(p, tgname, args)
    if "explicit_K_max_deviation" not in report:
        ref = explicit_K(params, p.grid, sol.tg.nodes)
        report["explicit_K_max_deviation"] = float(
            np.max(np.abs(sol.K.values[:, :, 0, 0] - ref)))
    _write_solution(outdir, sol)
    return _finish(outdir, report, failures)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphonlq",
        description="Linear-quadratic control of graphon-coupled mean-field systems")
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("solve", help="solve the backward system, write CSVs + report")
    _add_common(s)
    s.set_defaults(fn=cmd_solve)

    s = subs.add_parser("certify", help="solve and certify optimality via the "
                                        "cost decomposition")
    _add_common(s)
    _mc_flags(s)
    s.set_defaults(fn=cmd_certify)

    s = subs.add_parser("simulate", help="simulate the closed loop under the optimal law")
    _add_common(s)
    s.add_argument("--paths", type=int, default=10_000, help="Monte Carlo paths per label")
    s.set_defaults(fn=cmd_simulate)

    s = subs.add_parser("systemic-risk", help="interbank preset with parameter overrides")
    _add_common(s)
    s.add_argument("--k", type=float, default=None, help="mean-reversion rate (<= 0)")
    s.add_argument("--horizon", type=float, default=None, help="terminal time")
    s.add_argument("--sigma", default=None, help="volatility: number or expression of u")
    s.add_argument("--eta", default=None, help="running penalty: number or expression of u")
    s.add_argument("--r", default=None, help="terminal penalty: number or expression of u")
    s.add_argument("--homogeneous", action="store_true",
                   help="start from the label-constant preset")
    s.set_defaults(fn=cmd_systemic_risk)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ProblemFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
