"""Experiment orchestration: offline data, receding-horizon trials, campaigns.

Random streams are derived from integer seeds through ``SeedSequence`` with
a purpose tag, so offline data, validation data and online plant noise never
share a stream even when their integer seeds coincide.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .behavioral import BehavioralData, ReducedData, partition, svd_reduce
from .config import CONTROLLER_NAMES, ExperimentConfig
from .estimators import CONTROLLERS
from .lti_sim import LtiPlant, Trajectory, collect_closed_loop, gen_excitation, simulate, square_wave
from .verification import cost_bound_check, robust_sampling_check, tune_lambda, validation_slices

SCHEMA = "rddpc.experiment/1"
_TAGS = {"excitation": 1, "offline": 2, "validation_excitation": 3, "validation": 4, "trial": 5}


def stream(seed: int, purpose: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), _TAGS[purpose]])


# -- offline data --------------------------------------------------------------------

def collect_data(cfg: ExperimentConfig, seed: Optional[int] = None, validation: bool = False,
                 length: Optional[int] = None) -> Trajectory:
    """One offline record (open-loop excitation or PID loop) as set in ``cfg.data``."""
    d = cfg.data
    seed = d.seed if seed is None else seed
    length = d.length if length is None else length
    model = cfg.plant.model()
    noise_u, noise_y = cfg.plant.noises()
    plant_seed = stream(seed, "validation" if validation else "offline")
    if d.mode == "closed_loop":
        ref = square_wave(d.reference_period, d.reference_amplitude, length)
        return collect_closed_loop(model, noise_u, noise_y, d.pid_gains, ref, length, seed=plant_seed)
    u = gen_excitation(d.period, d.amplitude, d.noise_var, length,
                       seed=stream(seed, "validation_excitation" if validation else "excitation"))
    return simulate(model, noise_u, noise_y, u, seed=plant_seed)


@dataclass
class Workspace:
    """Offline and validation records plus the Hankel data built from the former."""

    offline: Trajectory
    validation: Trajectory
    data: BehavioralData
    reduced: ReducedData

    def slices(self, cfg: ExperimentConfig):
        return validation_slices(self.validation, cfg.control.L_p, cfg.control.L_f, cfg.data.n_slices)


def prepare_workspace(cfg: ExperimentConfig, seed: Optional[int] = None) -> Workspace:
    offline = collect_data(cfg, seed)
    val = collect_data(cfg, seed, validation=True)
    data = partition(offline, cfg.control.L_p, cfg.control.L_f)
    return Workspace(offline, val, data, svd_reduce(data, keep_v1=False))


def make_controller(cfg: ExperimentConfig, name: str, lam: float, trajectory: Trajectory):
    if name not in CONTROLLER_NAMES:
        raise ValueError(f"unknown controller {name!r}")
    c = cfg.control
    cc = cfg.control_config()
    est = CONTROLLERS[name](L_p=c.L_p, L_f=c.L_f, Q=np.diag(c.Q), R=np.diag(c.R),
                            input_constraints=cc.input_constraints, output_constraints=cc.output_constraints,
                            lam=float(lam) if name != "spc" else 0.0, form=c.form, solver_settings=cc.settings)
    return est.fit(trajectory.inputs, trajectory.outputs)


# -- one trial -------------------------------------------------------------------------

def j_total(u, y, y_r, Q, R) -> float:
    """Sum of ``||y(k) - y_r(k)||_Q^2 + ||u(k)||_R^2`` over the rows."""
    u = np.atleast_2d(np.asarray(u, float))
    y = np.atleast_2d(np.asarray(y, float))
    y_r = np.atleast_2d(np.asarray(y_r, float))
    if u.shape[1:] == (len(u),) and u.shape[0] == 1:
        u = u.T
    if len(u) != len(y) or y.shape != y_r.shape:
        raise ValueError("u, y and y_r must have matching lengths")
    e = y - y_r
    Q, R = np.atleast_2d(Q), np.atleast_2d(R)
    return float(np.einsum("ij,jk,ik->", e, Q, e) + np.einsum("ij,jk,ik->", u, R, u))


@dataclass
class TrialRecord:
    controller: str
    seed: int
    lam: float
    inputs: np.ndarray
    outputs: np.ndarray
    reference: np.ndarray
    statuses: List[str]
    solve_times: List[float]
    assembly_times: List[float]
    noise_digest: str
    J_total: float
    tracking_error: float
    bound_checks: List[dict] = field(default_factory=list)
    sampling: List[dict] = field(default_factory=list)
    trajectory_file: Optional[str] = None
    error: Optional[str] = None

    @property
    def all_optimal(self) -> bool:
        return all(s == "optimal" for s in self.statuses)

    def summary(self) -> dict:
        return {"controller": self.controller, "seed": self.seed, "lam": self.lam, "J_total": self.J_total,
                "tracking_error": self.tracking_error, "statuses": self.statuses,
                "solve_times": self.solve_times, "assembly_times": self.assembly_times,
                "noise_digest": self.noise_digest, "bound_checks": self.bound_checks,
                "sampling": self.sampling, "trajectory_file": self.trajectory_file, "error": self.error}


def _rollout(plant: LtiPlant, solution, L_f: int, n_u: int):
    """Apply the plan (or the feedback policy) to a copy of ``plant`` for ``L_f`` steps."""
    twin = copy.deepcopy(plant)
    policy = solution.policy
    us, ys = [], []
    for k in range(L_f):
        y = twin.output()
        ys.append(y)
        if policy is not None:
            u = policy.input_at(k, np.concatenate(ys[:-1]) if k else np.zeros(0))
        else:
            u = solution.u_f[k * n_u:(k + 1) * n_u]
        us.append(u)
        twin.step(u)
    return np.concatenate(us), np.concatenate(ys)


def run_receding_horizon(cfg: ExperimentConfig, controller, seed: int, workspace: Optional[Workspace] = None,
                         n_test: Optional[int] = None, checks: Optional[bool] = None,
                         reference: Optional[np.ndarray] = None) -> TrialRecord:
    """Closed-loop test run: warm up with ``L_p`` zero inputs, then solve and apply each step.

    A step whose solve is not optimal repeats the previous input. With
    ``checks`` on (robust controllers only) every step also runs the boundary
    sampling check and, on a copy of the plant, an ``L_f``-step rollout of the
    plan fed to the cost certificate.
    """
    c = cfg.control
    n_test = cfg.task.n_test if n_test is None else n_test
    checks = cfg.checks if checks is None else checks
    model = cfg.plant.model()
    if controller.n_u_ != model.n_u or controller.n_y_ != model.n_y:
        raise ValueError("controller and plant dimensions differ")
    if checks and workspace is None:
        raise ValueError("checks need the workspace")
    kind = controller.kind
    n_u, n_y = model.n_u, model.n_y
    ref = cfg.task.reference(n_y, n_test + c.L_f) if reference is None else np.asarray(reference, float)
    if ref.shape != (n_test + c.L_f, n_y):
        raise ValueError(f"reference must have shape {(n_test + c.L_f, n_y)}")
    plant = LtiPlant(model, *cfg.plant.noises(), seed=stream(seed, "trial"))
    digest = hashlib.sha256()
    u_hist, y_hist = [], []

    def advance(u, y):
        digest.update(np.array([plant.v1, plant.v2]).tobytes())
        u_hist.append(np.asarray(u, float).reshape(n_u))
        y_hist.append(y)
        plant.step(u)

    for _ in range(c.L_p):
        advance(np.zeros(n_u), plant.output())
    statuses, solve_t, asm_t, bounds, samples = [], [], [], [], []
    last_u = np.zeros(n_u)
    for t in range(n_test):
        u_p = np.concatenate(u_hist[-c.L_p:])
        y_p = np.concatenate(y_hist[-c.L_p:])
        r = ref[t:t + c.L_f].ravel()
        sol = controller.solve(u_p, y_p, r)
        statuses.append(sol.status)
        solve_t.append(sol.solve_time)
        asm_t.append(sol.assembly_time)
        if sol.ok:
            last_u = sol.first_input
            if checks and kind in ("rddpc", "frddpc") and sol.lam > 0:
                config = controller.control_config(r)
                rep = robust_sampling_check(sol, workspace.reduced, config, n_samples=cfg.n_samples,
                                            seed=t, form="compact")
                samples.append({"step": t, **asdict(rep)})
                u_roll, y_roll = _rollout(plant, sol, c.L_f, n_u)
                chk = cost_bound_check("thm4" if kind == "frddpc" else "thm2", sol, u_roll, y_roll, config,
                                       workspace.data, u_p, y_p)
                bounds.append({"step": t, **chk.to_dict()})
        advance(last_u, plant.output())
    U = np.array(u_hist[c.L_p:])
    Y = np.array(y_hist[c.L_p:])
    R_ = ref[:n_test]
    J = j_total(U, Y, R_, np.diag(c.Q), np.diag(c.R))
    err = float(np.mean(np.abs(Y[:, cfg.task.channel] - R_[:, cfg.task.channel])))
    return TrialRecord(kind, int(seed), float(getattr(controller, "lam", 0.0)), U, Y, R_, statuses, solve_t,
                       asm_t, digest.hexdigest(), J, err, bounds, samples)


# -- trajectory files ------------------------------------------------------------------

def write_trajectory(path: Union[str, Path], record: TrialRecord) -> Path:
    """CSV with columns ``t, u_*, y_*, r_*`` over the test window."""
    path = Path(path)
    U, Y, R_ = record.inputs, record.outputs, record.reference
    header = (["t"] + [f"u_{i + 1}" for i in range(U.shape[1])] + [f"y_{i + 1}" for i in range(Y.shape[1])]
              + [f"r_{i + 1}" for i in range(R_.shape[1])])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(len(U)):
            w.writerow([t] + [repr(float(v)) for v in np.concatenate([U[t], Y[t], R_[t]])])
    return path


def read_trajectory(path: Union[str, Path]):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader], dtype=float).reshape(-1, len(header))
    pick = lambda p: rows[:, [i for i, h in enumerate(header) if h.startswith(p)]]
    return pick("u_"), pick("y_"), pick("r_")


def j_total_from_csv(path: Union[str, Path], Q, R) -> float:
    u, y, r = read_trajectory(path)
    return j_total(u, y, r, Q, R)


# -- campaigns -----------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=1, allow_nan=False)


def aggregate(records: Sequence[TrialRecord]) -> dict:
    """Box-plot statistics of ``J_total`` plus timing percentiles for one controller."""
    Js = np.array([r.J_total for r in records if r.error is None], dtype=float)
    errs = np.array([r.tracking_error for r in records if r.error is None], dtype=float)
    times = np.concatenate([r.solve_times for r in records if r.solve_times] or [np.zeros(0)])
    out = {"n_trials": len(records), "n_failed": sum(r.error is not None for r in records),
           "n_nonoptimal_steps": int(sum(sum(s != "optimal" for s in r.statuses) for r in records))}
    if Js.size:
        q1, med, q3 = np.percentile(Js, [25, 50, 75])
        iqr = q3 - q1
        out.update(mean=float(Js.mean()), median=float(med), std=float(Js.std(ddof=1)) if Js.size > 1 else 0.0,
                   min=float(Js.min()), max=float(Js.max()), q1=float(q1), q3=float(q3),
                   whisker_low=float(Js[Js >= q1 - 1.5 * iqr].min()),
                   whisker_high=float(Js[Js <= q3 + 1.5 * iqr].max()),
                   mean_tracking_error=float(errs.mean()))
    if times.size:
        p50, p90, p99 = np.percentile(times, [50, 90, 99])
        out["solve_time"] = {"p50": float(p50), "p90": float(p90), "p99": float(p99), "max": float(times.max())}
    return out


def bands(records: Sequence[TrialRecord]) -> Optional[np.ndarray]:
    """Columns ``t, mean(y_i), std(y_i)..., mean(u_j), std(u_j)...`` across trials."""
    ok = [r for r in records if r.error is None]
    if not ok:
        return None
    Y = np.stack([r.outputs for r in ok])
    U = np.stack([r.inputs for r in ok])
    cols = [np.arange(Y.shape[1])]
    for A in (Y, U):
        for i in range(A.shape[2]):
            cols += [A[:, :, i].mean(0), A[:, :, i].std(0)]
    return np.column_stack(cols)


@dataclass
class ExperimentReport:
    config: dict
    lambdas: Dict[str, float]
    trials: List[TrialRecord]
    info: dict = field(default_factory=dict)

    def by_controller(self) -> Dict[str, List[TrialRecord]]:
        out: Dict[str, List[TrialRecord]] = {}
        for r in self.trials:
            out.setdefault(r.controller, []).append(r)
        return out

    def aggregate(self) -> dict:
        return {k: aggregate(v) for k, v in self.by_controller().items()}

    def mean_J(self, controller: str) -> float:
        return self.aggregate()[controller]["mean"]

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "config": self.config, "lambdas": self.lambdas,
                "trials": [r.summary() for r in self.trials], "aggregate": self.aggregate(), "info": self.info}

    def write(self, out_dir: Union[str, Path], name: str = "report.json") -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for ctrl, recs in self.by_controller().items():
            B = bands(recs)
            if B is not None:
                n_y, n_u = recs[0].outputs.shape[1], recs[0].inputs.shape[1]
                head = ["t"] + [f"{s}_{c}{i + 1}" for c, n in (("y", n_y), ("u", n_u))
                                for i in range(n) for s in ("mean", "std")]
                np.savetxt(out / f"bands_{ctrl}.csv", B, delimiter=",", header=",".join(head), comments="")
        path = out / name
        path.write_text(dumps_report(self.to_dict()))
        return path


def resolve_lambdas(cfg: ExperimentConfig, workspace: Workspace, controllers: Iterable[str],
                    log: Optional[Callable[[str], None]] = None) -> Dict[str, float]:
    """Uncertainty size per controller: fixed, membership-tuned, or closed-loop grid argmin."""
    out: Dict[str, float] = {}
    tuned = None
    for name in controllers:
        if name == "spc":
            out[name] = 0.0
        elif cfg.lam.mode == "fixed":
            out[name] = float(cfg.lam.value)
        elif cfg.lam.mode == "grid" or name in cfg.lam.grid_tuned:
            rows = grid_search_lambda(cfg, cfg.lam.grid, [name], workspace=workspace)
            out[name] = next(r["lambda"] for r in rows if r["argmin"])
        else:
            if tuned is None:
                tuned = tune_lambda(workspace.reduced, workspace.slices(cfg))
            out[name] = tuned
        if log:
            log(f"lambda[{name}] = {out[name]:.6g}")
    return out


def monte_carlo(cfg: ExperimentConfig, controllers: Optional[Sequence[str]] = None,
                n_trials: Optional[int] = None, lambdas: Optional[Dict[str, float]] = None,
                workspace: Optional[Workspace] = None, out_dir: Optional[Union[str, Path]] = None,
                seed: Optional[int] = None, checks: Optional[bool] = None,
                log: Optional[Callable[[str], None]] = None) -> ExperimentReport:
    """Paired-seed campaign: trial ``i`` of every controller sees plant noise from seed ``seed + i``.

    A trial that raises is recorded with its error and the campaign moves on.
    """
    controllers = list(controllers or cfg.controllers)
    n_trials = cfg.trials if n_trials is None else n_trials
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    seed0 = cfg.seed if seed is None else seed
    ws = workspace or prepare_workspace(cfg)
    lambdas = dict(lambdas or {})
    missing = [c for c in controllers if c not in lambdas]
    if missing:
        lambdas.update(resolve_lambdas(cfg, ws, missing, log))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    records = []
    for name in controllers:
        fitted = make_controller(cfg, name, lambdas[name], ws.offline)
        for i in range(n_trials):
            s = seed0 + i
            trial_ws = ws
            est = fitted
            if cfg.data.regenerate_per_trial:
                trial_ws = prepare_workspace(cfg, cfg.data.seed + i)
                est = make_controller(cfg, name, lambdas[name], trial_ws.offline)
            t0 = time.perf_counter()
            try:
                rec = run_receding_horizon(cfg, est, s, trial_ws, checks=checks)
            except Exception as exc:  # recorded, campaign continues
                rec = TrialRecord(name, s, lambdas[name], np.zeros((0, 1)), np.zeros((0, 1)), np.zeros((0, 1)),
                                  [], [], [], "", math.nan, math.nan, error=f"{type(exc).__name__}: {exc}")
            if out is not None and rec.error is None:
                rec.trajectory_file = write_trajectory(out / f"traj_{name}_seed{s}.csv", rec).name
            records.append(rec)
            if log:
                log(f"{name} seed={s} J_total={rec.J_total:.6g} ({time.perf_counter() - t0:.1f}s)")
    report = ExperimentReport(cfg.to_dict(), lambdas, records,
                              info={"seed0": seed0, "n_trials": n_trials, "controllers": controllers})
    if out is not None:
        report.write(out)
    return report


def grid_search_lambda(cfg: ExperimentConfig, grid: Sequence[float], controllers: Optional[Sequence[str]] = None,
                       n_trials: Optional[int] = None, seed: Optional[int] = None,
                       workspace: Optional[Workspace] = None, out_csv: Optional[Union[str, Path]] = None,
                       log: Optional[Callable[[str], None]] = None) -> List[dict]:
    """Mean and std of ``J_total`` per (controller, lam) over a fixed seed set."""
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("grid must be nonempty")
    controllers = [c for c in (controllers or cfg.controllers) if c != "spc"] or ["rddpc"]
    n_trials = cfg.lam.grid_trials if n_trials is None else n_trials
    seed = cfg.lam.grid_seed if seed is None else seed
    ws = workspace or prepare_workspace(cfg)
    rows = []
    for name in controllers:
        block = []
        for lam in grid:
            est = make_controller(cfg, name, lam, ws.offline)
            Js = []
            for i in range(n_trials):
                rec = run_receding_horizon(cfg, est, seed + i, ws, checks=False)
                Js.append(rec.J_total)
            Js = np.array(Js)
            block.append({"controller": name, "lambda": lam, "mean_J": float(Js.mean()),
                          "std_J": float(Js.std(ddof=1)) if Js.size > 1 else 0.0, "argmin": False})
            if log:
                log(f"{name} lambda={lam:.3g} mean_J={Js.mean():.6g}")
        best = int(np.nanargmin([b["mean_J"] for b in block]))
        block[best]["argmin"] = True
        rows += block
    if out_csv is not None:
        write_grid_csv(out_csv, rows)
    return rows


def write_grid_csv(path: Union[str, Path], rows: Sequence[dict]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["controller", "lambda", "mean_J", "std_J"])
        for r in rows:
            w.writerow([r["controller"], repr(r["lambda"]), repr(r["mean_J"]), repr(r["std_J"])])
    return path


# -- solve-time benchmark --------------------------------------------------------------

_FORMULATIONS = {
    "SPC-QP": ("spc", "reduced"), "PBR-QP": ("pbr", "reduced"),
    "R-SDP-full": ("rddpc", "full"), "R-SDP-reduced": ("rddpc", "reduced"),
    "FR-SDP-full": ("frddpc", "full"), "FR-SDP-reduced": ("frddpc", "reduced"),
}


def benchmark_solve_times(cfg: ExperimentConfig, N_values: Optional[Sequence[int]] = None,
                          repeats: Optional[int] = None, full_repeats: Optional[int] = None,
                          formulations: Optional[Sequence[str]] = None, lam: float = 0.5,
                          out_csv: Optional[Union[str, Path]] = None,
                          log: Optional[Callable[[str], None]] = None) -> List[dict]:
    """Median solver wall time (assembly excluded) per formulation and data length.

    The robust SDPs in full form get ``full_repeats`` solves; the feedback
    one is skipped above ``bench.fr_full_max_N`` since its size grows with N.
    """
    from .controllers import ControlConfig
    b = cfg.bench
    N_values = list(N_values or b.N_values)
    repeats = b.repeats if repeats is None else repeats
    full_repeats = b.full_repeats if full_repeats is None else full_repeats
    formulations = list(formulations or b.formulations)
    unknown = [f for f in formulations if f not in _FORMULATIONS]
    if unknown:
        raise ValueError(f"unknown formulations {unknown}")
    c = cfg.control
    L = c.L_p + c.L_f
    from dataclasses import replace as dc_replace
    rows = []
    for N in N_values:
        if N < 2 * L:
            raise ValueError(f"N={N} too short for L={L}")
        traj = collect_data(cfg, length=N)
        data = partition(traj, c.L_p, c.L_f)
        red = svd_reduce(data, keep_v1=False)
        u_p = traj.inputs[-c.L_p:].ravel()
        y_p = traj.outputs[-c.L_p:].ravel()
        ref = cfg.task.reference(data.n_y, c.L_f).ravel()
        for name in formulations:
            kind, form = _FORMULATIONS[name]
            n = full_repeats if form == "full" and kind != "spc" else repeats
            if kind == "frddpc" and form == "full" and N > b.fr_full_max_N:
                n = 0
            base: ControlConfig = cfg.control_config(lam=lam if kind != "spc" else 0.0, y_ref=ref)
            config = dc_replace(base, form=form)
            src = data if form == "full" else red
            times, status = [], []
            for _ in range(n):
                sol = _bench_solve(kind, src, config, u_p, y_p)
                times.append(sol.solve_time)
                status.append(sol.status)
            row = {"formulation": name, "N": N, "n_solves": n,
                   "median_solve_time": float(np.median(times)) if times else math.nan,
                   "all_optimal": all(s == "optimal" for s in status)}
            rows.append(row)
            if log:
                log(f"N={N} {name}: {row['median_solve_time']:.4g}s over {n} solves")
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return rows


def _bench_solve(kind, data, config, u_p, y_p):
    from .controllers import solve_frddpc, solve_pbr, solve_rddpc, solve_spc
    if kind == "spc":
        return solve_spc(data, config, u_p, y_p)
    if kind == "pbr":
        return solve_pbr(data, config, u_p, y_p)
    if kind == "rddpc":
        return solve_rddpc(data, config, u_p, y_p)
    return solve_frddpc(data, config, u_p, y_p)
