"""Command-line front end.

    constop solve   --config cfg.yaml [--mode pure|relaxed] [--steps N]
                    [--grid P] [--seed S] [--out DIR] [--strict] [--dump-lattice]
    constop compare --config cfg.yaml [...]
    constop check {mpf,mixture,dpp,monotone} --config cfg.yaml [...]

Exit codes: 0 ok, 1 usage or configuration error, 2 infeasible instance under
--strict, 3 a check or invariant failed.  The CONSTOP_OUT environment
variable overrides the output directory.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, dual, oracle, solver
from .config import ConfigError, load_config
from .lattice import build_lattice
from .model import NEG_INF, ValidationError
from .simplex import SimplexGuardError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2
EXIT_CHECK_FAILED = 3


def _apply_overrides(cfg, args):
    if args.mode:
        cfg.solver.mode = args.mode
    if args.steps:
        cfg.problem = dict(cfg.problem)
        cfg.problem["n_steps"] = args.steps
    if args.grid:
        cfg.solver.grid_points = args.grid
    if args.seed is not None:
        cfg.seed = args.seed
    out = os.environ.get("CONSTOP_OUT")
    if args.out:
        cfg.output_dir = args.out
    elif out:
        cfg.output_dir = out
    return cfg


def _prepare(cfg):
    problem = cfg.build_problem()
    lattice = build_lattice(problem, mode=cfg.solver.lattice, node_cap=cfg.solver.node_cap)
    return problem, lattice


def cmd_solve(cfg, args) -> int:
    problem, lattice = _prepare(cfg)
    grid = solver.BudgetGrid.for_problem(
        problem, points=cfg.solver.grid_points, lattice=lattice,
        bounds=cfg.solver.grid_bounds or None,
    )
    vt, pt = solver.solve(
        problem, grid=grid, mode=cfg.solver.mode, lattice=lattice,
        tol=cfg.solver.tol, tol_alloc=cfg.solver.tol_alloc,
    )
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    solver.write_tables_csv(vt, pt, lattice, outdir / "value_policy.csv",
                            outdir / "mix_atoms.csv")
    if args.dump_lattice:
        lattice.dump_csv(outdir / "lattice.csv")
    if vt.root_value == NEG_INF:
        print(f"{problem.name}: INFEASIBLE at grid resolution "
              f"({cfg.solver.grid_points} points per coordinate)")
        return EXIT_INFEASIBLE if args.strict else EXIT_OK
    value, achieved = solver.evaluate_policy(pt, lattice)
    ach = ",".join(repr(float(a)) for a in achieved)
    print(f"{problem.name}: value={vt.root_value!r} mode={cfg.solver.mode} "
          f"achieved=[{ach}] files={outdir / 'value_policy.csv'}")
    return EXIT_OK


def cmd_compare(cfg, args) -> int:
    problem, lattice = _prepare(cfg)
    if lattice.mode == "recombining":
        tree = build_lattice(problem, mode="tree", node_cap=cfg.solver.node_cap)
    else:
        tree = lattice
    grid = solver.BudgetGrid.for_problem(
        problem, points=cfg.solver.grid_points, lattice=tree,
        bounds=cfg.solver.grid_bounds or None,
    )
    rows = []

    vt_p, _ = solver.solve(problem, grid=grid, mode=solver.PURE, lattice=tree,
                           tol=cfg.solver.tol, tol_alloc=cfg.solver.tol_alloc)
    rows.append(("pure_dp", vt_p.root_value, ""))
    try:
        vt_r, _ = solver.solve(problem, grid=grid, mode=solver.RELAXED, lattice=tree,
                               tol=cfg.solver.tol, tol_alloc=cfg.solver.tol_alloc)
        rows.append(("relaxed_dp", vt_r.root_value, ""))
    except solver.UnsupportedModeError as exc:
        vt_r = None
        rows.append(("relaxed_dp", math.nan, f"skipped: {exc}"))
    try:
        rows.append(("enumerate_pure", oracle.enumerate_pure(
            problem, tree, cap=cfg.oracle.enumeration_cap), ""))
    except oracle.EnumerationCapError as exc:
        rows.append(("enumerate_pure", math.nan, f"skipped: {exc}"))
    try:
        sol = oracle.solve_lp(problem, lattice=tree, var_cap=cfg.oracle.lp_var_cap)
        rows.append(("lp", sol.value, ""))
    except oracle.LpSizeError as exc:
        sol = None
        rows.append(("lp", math.nan, f"skipped: {exc}"))
    warm = []
    if sol is not None and sol.feasible:
        warm.append(dual.DualPoint(lam=tuple(sol.lam), eta=tuple(sol.eta)))
    cfg_search = dual.DualSearchConfig(box=cfg.dual.box, points=cfg.dual.points,
                                       refine=cfg.dual.refine)
    _, dual_min = dual.minimize_dual(problem, search=cfg_search, lattice=tree,
                                     warm_starts=warm)
    rows.append(("dual_min", dual_min, ""))

    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "compare.csv", "w") as fh:
        fh.write("method,value,note\n")
        for name, value, note in rows:
            fh.write(f"{name},{value!r},{note}\n")
        for i in range(len(rows)):
            for j in range(i + 1, len(rows)):
                a, b = rows[i], rows[j]
                gap = a[1] - b[1] if not (math.isnan(a[1]) or math.isnan(b[1])) else math.nan
                fh.write(f"gap:{a[0]}-{b[0]},{gap!r},\n")
    for name, value, note in rows:
        print(f"{name:>16}: {value!r} {note}")

    got = {name: value for name, value, _ in rows}
    tol = 1e-7
    ok = True
    if not math.isnan(got["enumerate_pure"]) and not math.isnan(got["lp"]):
        ok &= got["enumerate_pure"] <= got["lp"] + tol
    if vt_r is not None and not math.isnan(got["lp"]):
        ok &= got["pure_dp"] <= got["relaxed_dp"] + tol
    if not math.isnan(got["lp"]) and got["lp"] > NEG_INF:
        ok &= got["lp"] <= got["dual_min"] + tol
    if not ok:
        print("sandwich violation detected", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_check(cfg, args) -> int:
    problem, lattice = _prepare(cfg)
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    which = args.which
    if which == "mpf":
        stats = diagnostics.martingale_check(
            problem, problem.control_set[0], cfg.check.n_paths, cfg.seed,
            radius=cfg.check.radius, noise_drift=cfg.check.noise_drift,
            z_threshold=cfg.check.z_threshold, min_bucket=cfg.check.min_bucket,
        )
        diagnostics.write_martingale_csv(stats, outdir / "martingale.csv")
        passed = diagnostics.martingale_passed(stats)
        worst = max((abs(s.z) for s in stats if not s.skipped), default=0.0)
        print(f"martingale check: {'PASS' if passed else 'FAIL'} (worst |z|={worst:.3f})")
        return EXIT_OK if passed else EXIT_CHECK_FAILED
    if which == "mixture":
        tree = lattice if lattice.mode == "tree" else build_lattice(
            problem, mode="tree", node_cap=cfg.solver.node_cap)
        rng = np.random.default_rng(cfg.seed)
        worst = 0.0
        with open(outdir / "mixture.csv", "w") as fh:
            fh.write("rule,residual\n")
            for rule in range(cfg.check.mixture_rules):
                hazards = [rng.uniform(0, 1, tree.n_nodes(k)) for k in range(tree.n_steps)]
                profile = diagnostics.StopRuleProfile.from_hazards(tree, hazards)
                payoff = diagnostics.total_reward_payoff(problem)
                resid = diagnostics.mixture_identity_check(profile, payoff)
                fh.write(f"{rule},{resid!r}\n")
                worst = max(worst, resid)
        print(f"mixture identity: worst residual {worst:.3e} over "
              f"{cfg.check.mixture_rules} rules")
        return EXIT_OK if worst <= 1e-12 else EXIT_CHECK_FAILED
    if which == "dpp":
        grid = solver.BudgetGrid.for_problem(
            problem, points=cfg.solver.grid_points, lattice=lattice,
            bounds=cfg.solver.grid_bounds or None,
        )
        vt, pt = solver.solve(problem, grid=grid, mode=cfg.solver.mode, lattice=lattice,
                              tol=cfg.solver.tol, tol_alloc=cfg.solver.tol_alloc)
        if vt.root_value == NEG_INF:
            print("dpp check skipped: instance infeasible at this grid")
            return EXIT_INFEASIBLE if args.strict else EXIT_OK
        residuals = [
            diagnostics.dpp_consistency_check(vt, pt, lattice, k)
            for k in range(1, lattice.n_steps + 1)
        ]
        with open(outdir / "dpp.csv", "w") as fh:
            fh.write("step,residual\n")
            for k, r in enumerate(residuals, start=1):
                fh.write(f"{k},{r!r}\n")
        worst = max(residuals)
        print(f"dpp consistency: max residual {worst:.3e} (tol {cfg.check.dpp_tol:g})")
        return EXIT_OK if worst <= cfg.check.dpp_tol else EXIT_CHECK_FAILED
    if which == "monotone":
        grid = solver.BudgetGrid.for_problem(
            problem, points=cfg.solver.grid_points, lattice=lattice,
            bounds=cfg.solver.grid_bounds or None,
        )
        vt, _ = solver.solve(problem, grid=grid, mode=cfg.solver.mode, lattice=lattice,
                             tol=cfg.solver.tol, tol_alloc=cfg.solver.tol_alloc)
        report = diagnostics.monotonicity_audit(vt)
        with open(outdir / "monotone.csv", "w") as fh:
            fh.write("violations,worst_gap,worst_cell\n")
            fh.write(f"{report.violations},{report.worst_gap!r},{report.worst_cell}\n")
        print(f"monotonicity audit: {report.violations} violations"
              + (f", worst gap {report.worst_gap:.3e} at {report.worst_cell}"
                 if report.violations else ""))
        return EXIT_OK if report.passed else EXIT_CHECK_FAILED
    raise ConfigError(f"unknown check {which!r}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="constop",
        description="Budget-state solvers and oracles for expectation-constrained "
                    "stopping/control on binary lattices.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("solve", cmd_solve), ("compare", cmd_compare), ("check", cmd_check)):
        p = sub.add_parser(name)
        if name == "check":
            p.add_argument("which", choices=["mpf", "mixture", "dpp", "monotone"])
        p.add_argument("--config", required=True)
        p.add_argument("--mode", choices=[solver.PURE, solver.RELAXED])
        p.add_argument("--steps", type=int)
        p.add_argument("--grid", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--strict", action="store_true")
        p.add_argument("--dump-lattice", action="store_true")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return args.fn(cfg, args)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (solver.PolicyInfeasibilityError, oracle.CertificateError, SimplexGuardError) as exc:
        print(f"check failure: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
