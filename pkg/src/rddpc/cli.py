"""Command-line entry point: ``rddpc <command> [options]``."""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import CONTROLLER_NAMES, ConfigError, ExperimentConfig, default_config_path, load_config


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment file (default: bundled benchmark)")
    common.add_argument("--seed", type=int, help="base seed for online plant noise")
    common.add_argument("--out", help="output directory")
    common.add_argument("--quiet", action="store_true", help="suppress progress lines")

    p = argparse.ArgumentParser(prog="rddpc", description="Robust data-driven predictive control experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("collect", parents=[common], help="record offline (and validation) data to CSV")
    c.add_argument("--mode", choices=["open_loop", "closed_loop"])
    c.add_argument("--length", type=int)
    c.add_argument("--data-seed", type=int)

    t = sub.add_parser("tune-lambda", parents=[common], help="membership-based uncertainty size")
    t.add_argument("--data", help="offline CSV (default: generate from config)")
    t.add_argument("--validation", help="validation CSV (default: generate from config)")

    r = sub.add_parser("run", parents=[common], help="one receding-horizon trial")
    r.add_argument("--controller", choices=CONTROLLER_NAMES)
    r.add_argument("--lambda", dest="lam", type=float, help="fixed uncertainty size")
    r.add_argument("--no-checks", action="store_true")

    m = sub.add_parser("montecarlo", parents=[common], help="paired-seed campaign")
    m.add_argument("--trials", type=int)
    m.add_argument("--controller", action="append", choices=CONTROLLER_NAMES,
                   help="repeatable; default: all controllers in the config")
    m.add_argument("--lambda", dest="lam", type=float, help="fixed uncertainty size for all robust controllers")
    m.add_argument("--no-checks", action="store_true")

    g = sub.add_parser("gridsearch", parents=[common], help="mean J_total over a lambda grid")
    g.add_argument("--grid", type=float, nargs="+")
    g.add_argument("--trials", type=int)
    g.add_argument("--controller", action="append", choices=CONTROLLER_NAMES)

    b = sub.add_parser("bench", parents=[common], help="solver timing versus data length")
    b.add_argument("--N", dest="N_values", type=int, nargs="+")
    b.add_argument("--repeats", type=int)
    b.add_argument("--full-repeats", type=int)
    b.add_argument("--formulation", action="append")

    v = sub.add_parser("verify", parents=[common], help="oracle and bound suites")
    v.add_argument("--instances", type=int, default=10)
    v.add_argument("--rollouts", type=int, default=3)
    return p


def _load(args) -> ExperimentConfig:
    overrides = {"seed": args.seed, "out": args.out}
    if getattr(args, "trials", None) is not None:
        overrides["trials"] = args.trials
    if getattr(args, "no_checks", False):
        overrides["checks"] = False
    if getattr(args, "mode", None):
        overrides["data.mode"] = args.mode
    if getattr(args, "length", None):
        overrides["data.length"] = args.length
    if getattr(args, "data_seed", None) is not None:
        overrides["data.seed"] = args.data_seed
    controller = getattr(args, "controller", None)
    if isinstance(controller, str):
        overrides["controller"] = controller
    return load_config(args.config, overrides)


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_collect(cfg, args, log) -> int:
    from .harness import collect_data
    out = _out(cfg)
    for name, val in (("offline", False), ("validation", True)):
        path = collect_data(cfg, validation=val).to_csv(out / f"{name}.csv")
        print(path)
    return 0


def cmd_tune(cfg, args, log) -> int:
    from .behavioral import partition
    from .harness import collect_data
    from .lti_sim import Trajectory
    from .verification import tune_lambda, validation_slices
    offline = Trajectory.from_csv(args.data) if args.data else collect_data(cfg)
    val = Trajectory.from_csv(args.validation) if args.validation else collect_data(cfg, validation=True)
    data = partition(offline, cfg.control.L_p, cfg.control.L_f)
    lam = tune_lambda(data, validation_slices(val, cfg.control.L_p, cfg.control.L_f, cfg.data.n_slices))
    print(repr(lam))
    return 0


def cmd_run(cfg, args, log) -> int:
    from .harness import ExperimentReport, make_controller, prepare_workspace, resolve_lambdas, \
        run_receding_horizon, write_trajectory
    ws = prepare_workspace(cfg)
    name = cfg.controller
    lam = args.lam if args.lam is not None else resolve_lambdas(cfg, ws, [name], log)[name]
    est = make_controller(cfg, name, lam, ws.offline)
    rec = run_receding_horizon(cfg, est, cfg.seed, ws)
    out = _out(cfg)
    rec.trajectory_file = write_trajectory(out / f"traj_{name}_seed{cfg.seed}.csv", rec).name
    report = ExperimentReport(cfg.to_dict(), {name: lam}, [rec], info={"command": "run"})
    path = report.write(out)
    print(f"J_total={rec.J_total:.10g} optimal_steps={sum(s == 'optimal' for s in rec.statuses)}/{len(rec.statuses)}")
    print(path)
    return 0


def cmd_montecarlo(cfg, args, log) -> int:
    from .harness import monte_carlo
    controllers = args.controller or cfg.controllers
    lambdas = None
    if args.lam is not None:
        lambdas = {c: (0.0 if c == "spc" else args.lam) for c in controllers}
    report = monte_carlo(cfg, controllers, lambdas=lambdas, out_dir=_out(cfg), log=log)
    for name, agg in report.aggregate().items():
        print(f"{name}: mean J_total={agg.get('mean', math.nan):.6g} std={agg.get('std', math.nan):.3g} "
              f"failed={agg['n_failed']}")
    print(Path(cfg.out) / "report.json")
    return 0


def cmd_gridsearch(cfg, args, log) -> int:
    from .harness import grid_search_lambda
    out = _out(cfg)
    rows = grid_search_lambda(cfg, args.grid or cfg.lam.grid, args.controller, n_trials=args.trials,
                              out_csv=out / "grid.csv", log=log)
    for r in rows:
        if r["argmin"]:
            print(f"{r['controller']}: argmin lambda={r['lambda']:.6g} mean_J={r['mean_J']:.6g}")
    print(out / "grid.csv")
    return 0


def cmd_bench(cfg, args, log) -> int:
    from .harness import benchmark_solve_times
    out = _out(cfg)
    rows = benchmark_solve_times(cfg, args.N_values, args.repeats, args.full_repeats, args.formulation,
                                 out_csv=out / "bench.csv", log=log)
    for r in rows:
        print(f"N={r['N']:4d} {r['formulation']:15s} {r['median_solve_time']:.4g}s")
    print(out / "bench.csv")
    return 0


def cmd_verify(cfg, args, log) -> int:
    from dataclasses import replace
    from .behavioral import partition, svd_reduce
    from .conic import SolverSettings
    from .controllers import solve_rddpc
    from .harness import make_controller, prepare_workspace, run_receding_horizon
    from .verification import random_instance, theorem1_lambda_o, tune_lambda, worst_case_cost_oracle

    results = {}
    tight = SolverSettings(feastol=1e-10, abstol=1e-10, reltol=1e-10, fallback_tol=1e-8, max_iters=60)
    worst_psi = worst_u = 0.0
    for s in range(args.instances):
        inst = random_instance(s, settings=tight)
        full = solve_rddpc(inst.data, inst.config, inst.u_p, inst.y_p, form="full")
        red = solve_rddpc(svd_reduce(inst.data), inst.config, inst.u_p, inst.y_p, form="reduced")
        if not (full.ok and red.ok):
            worst_psi = worst_u = math.inf
            continue
        orc = worst_case_cost_oracle(full.b, inst.data.M, inst.config.Qbar, inst.config.y_ref, inst.config.lam,
                                     phi_perp=inst.data.PhiPerp)
        worst_psi = max(worst_psi, abs(full.psi - orc.max_value) / max(abs(orc.max_value), 1e-12))
        worst_u = max(worst_u, float(np.max(np.abs(full.u_f - red.u_f))))
    results["oracle"] = {"instances": args.instances, "max_rel_psi_error": worst_psi, "max_u_gap": worst_u,
                         "passed": worst_psi <= 1e-3 and worst_u <= 1e-5}
    log(f"oracle: max rel psi error {worst_psi:.2e}, max full/reduced input gap {worst_u:.2e}")

    ws = prepare_workspace(cfg)
    lam = tune_lambda(ws.reduced, ws.slices(cfg))
    L_p, L_f = cfg.control.L_p, cfg.control.L_f
    clean = partition(ws.offline.clean_twin(), L_p, L_f)
    noise_u, noise_y = cfg.plant.noises()
    xi_u = noise_u.envelope
    xi_y = noise_y.envelope * float(np.linalg.norm(cfg.plant.model().B_v))
    k = len(ws.validation) // 2
    u, y = ws.validation.inputs, ws.validation.outputs
    bounds = theorem1_lambda_o(ws.data, clean, cfg.plant.model().n_x, xi_u, xi_y, u[k:k + L_p].ravel(),
                               u[k + L_p:k + L_p + L_f].ravel(), y[k:k + L_p].ravel())
    ratio = bounds.Lambda_o / lam if lam > 0 else math.inf
    results["lambda"] = {"tuned": lam, "Lambda_o": bounds.Lambda_o, "ratio": ratio, "passed": ratio >= 1e4}
    log(f"tuned lambda {lam:.4g}, safe-approximation bound {bounds.Lambda_o:.3g} (ratio {ratio:.3g})")

    checks = {"total": 0, "with_precondition": 0, "passed": 0}
    for name in ("rddpc", "frddpc"):
        est = make_controller(cfg, name, lam, ws.offline)
        for i in range(args.rollouts):
            rec = run_receding_horizon(cfg, est, cfg.seed + i, ws, checks=True, n_test=min(cfg.task.n_test, 20))
            for b in rec.bound_checks:
                checks["total"] += 1
                if b["precondition"]:
                    checks["with_precondition"] += 1
                    checks["passed"] += bool(b["passed"])
    checks["passed_all"] = checks["passed"] == checks["with_precondition"]
    results["cost_bounds"] = checks
    log(f"cost certificates: {checks['passed']}/{checks['with_precondition']} hold where membership is verified")
    ok = all(v.get("passed", v.get("passed_all")) for v in results.values())
    out = _out(cfg)
    (out / "verify.json").write_text(json.dumps(results, indent=1, sort_keys=True, default=float))
    print("verify:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


COMMANDS = {"collect": cmd_collect, "tune-lambda": cmd_tune, "run": cmd_run, "montecarlo": cmd_montecarlo,
            "gridsearch": cmd_gridsearch, "bench": cmd_bench, "verify": cmd_verify}


def main(argv: Optional[List[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the usage line
        return int(exc.code or 0)
    log = (lambda msg: None) if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    try:
        cfg = _load(args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"rddpc: error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg, args, log)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"rddpc: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
