"""Experiment configuration: nested YAML sections mapped onto dataclasses.

Unknown keys are rejected so that typos fail loudly. Every default equals the
two-mass benchmark setting; ``load_config(None)`` returns it unchanged.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from importlib import resources
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import yaml

from .conic import SolverSettings
from .controllers import ControlConfig
from .lti_sim import ArNoiseModel, PidGains, SystemModel, make_two_mass_model

CONTROLLER_NAMES = ("spc", "pbr", "rddpc", "frddpc")


class ConfigError(ValueError):
    pass


@dataclass
class PlantSpec:
    k1: float = 4.0
    k2: float = 4.0
    b1: float = 1.5
    b2: float = 2.0
    m1: float = 1.2
    m2: float = 2.0
    dt: float = 0.1
    sigma_u: float = 0.01
    sigma_y: float = 0.019
    ar_coeff: float = 0.5
    truncation: float = 3.0
    noise_free: bool = False

    def model(self) -> SystemModel:
        return make_two_mass_model(self.k1, self.k2, self.b1, self.b2, self.m1, self.m2, self.dt)

    def noises(self) -> Tuple[ArNoiseModel, ArNoiseModel]:
        s_u, s_y = (0.0, 0.0) if self.noise_free else (self.sigma_u, self.sigma_y)
        return (ArNoiseModel(self.ar_coeff, s_u, self.truncation),
                ArNoiseModel(self.ar_coeff, s_y, self.truncation))


@dataclass
class DataSpec:
    mode: str = "open_loop"  # or closed_loop
    length: int = 600
    period: int = 600
    amplitude: float = 1.0
    noise_var: float = 0.01
    pid: List[float] = field(default_factory=lambda: [1.91, 0.917, 0.93])
    reference_period: int = 600
    reference_amplitude: float = 0.4
    seed: int = 1
    n_slices: int = 100
    regenerate_per_trial: bool = False

    @property
    def pid_gains(self) -> PidGains:
        return PidGains(*self.pid)


@dataclass
class ControlSpec:
    L_p: int = 5
    L_f: int = 5
    Q: List[float] = field(default_factory=lambda: [1.0, 1e-4, 1e-4, 1e-4])
    R: List[float] = field(default_factory=lambda: [0.01])
    # per_step: one constraint per horizon step, G = gain * (step selector)
    input_constraints: List[dict] = field(default_factory=lambda: [{"kind": "per_step", "gain": [0.2]}])
    # horizon_diag: a single constraint G = diag(1_{L_f} kron weights)
    output_constraints: List[dict] = field(default_factory=lambda: [
        {"kind": "horizon_diag", "weights": [0.01, 0.01, 0.7, 0.01]},
        {"kind": "horizon_diag", "weights": [0.01, 0.01, 0.01, 0.7]},
    ])
    form: str = "compact"


@dataclass
class TaskSpec:
    kind: str = "square"  # or step
    period: int = 100
    amplitude: float = 0.4
    initial: float = 0.0
    step_time: int = 0
    channel: int = 0
    n_test: int = 100

    def reference(self, n_y: int, length: int) -> np.ndarray:
        """Reference outputs for ``length`` steps (rows) of the test window."""
        from .lti_sim import square_wave
        r = np.zeros((length, n_y))
        if self.kind == "square":
            r[:, self.channel] = square_wave(self.period, self.amplitude, length)
        elif self.kind == "step":
            r[:, self.channel] = np.where(np.arange(length) >= self.step_time, self.amplitude, self.initial)
        else:
            raise ConfigError(f"unknown reference kind {self.kind!r}")
        return r


@dataclass
class LambdaSpec:
    mode: str = "tuned"  # tuned | fixed | grid
    value: float = 0.5
    grid: List[float] = field(default_factory=lambda: [1e-10, 1e-6, 1e-4, 1e-2, 0.05, 0.1, 0.2, 0.5,
                                                        1.0, 2.0, 5.0, 1e1, 1e2, 1e4, 1e6])
    grid_trials: int = 10
    grid_seed: int = 5000
    # controllers tuned on the closed-loop cost grid rather than the membership rule
    grid_tuned: List[str] = field(default_factory=lambda: ["pbr"])


@dataclass
class BenchSpec:
    N_values: List[int] = field(default_factory=lambda: [100, 200, 300, 400, 500, 600])
    repeats: int = 10
    full_repeats: int = 3
    # the feedback SDP in full form is skipped above this data length
    fr_full_max_N: int = 200
    formulations: List[str] = field(default_factory=lambda: [
        "SPC-QP", "PBR-QP", "R-SDP-full", "R-SDP-reduced", "FR-SDP-full", "FR-SDP-reduced"])


@dataclass
class ExperimentConfig:
    plant: PlantSpec = field(default_factory=PlantSpec)
    data: DataSpec = field(default_factory=DataSpec)
    control: ControlSpec = field(default_factory=ControlSpec)
    task: TaskSpec = field(default_factory=TaskSpec)
    lam: LambdaSpec = field(default_factory=LambdaSpec)
    bench: BenchSpec = field(default_factory=BenchSpec)
    solver: dict = field(default_factory=dict)
    controller: str = "rddpc"
    controllers: List[str] = field(default_factory=lambda: list(CONTROLLER_NAMES))
    trials: int = 30
    seed: int = 0
    checks: bool = True
    n_samples: int = 1000
    out: str = "results"

    def validate(self) -> "ExperimentConfig":
        if self.controller not in CONTROLLER_NAMES:
            raise ConfigError(f"controller must be one of {CONTROLLER_NAMES}")
        bad = [c for c in self.controllers if c not in CONTROLLER_NAMES]
        if bad:
            raise ConfigError(f"unknown controllers {bad}")
        if self.data.mode not in ("open_loop", "closed_loop"):
            raise ConfigError("data.mode must be open_loop or closed_loop")
        if self.lam.mode not in ("tuned", "fixed", "grid"):
            raise ConfigError("lam.mode must be tuned, fixed or grid")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.task.n_test < 1:
            raise ConfigError("task.n_test must be at least 1")
        if self.data.length < self.control.L_p + self.control.L_f:
            raise ConfigError("data.length shorter than L_p + L_f")
        try:
            self.settings()
            self.control_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def settings(self) -> SolverSettings:
        return SolverSettings(**self.solver)

    def control_config(self, lam: float = 0.0, y_ref=None) -> ControlConfig:
        c = self.control
        n_y, n_u = len(c.Q), len(c.R)
        return ControlConfig(c.L_p, c.L_f, np.diag(c.Q), np.diag(c.R), y_ref=y_ref,
                             input_constraints=_constraints(c.input_constraints, n_u, c.L_f),
                             output_constraints=_constraints(c.output_constraints, n_y, c.L_f),
                             lam=lam, form=c.form, settings=self.settings())

    def to_dict(self) -> dict:
        return asdict(self)


def _constraints(specs: List[dict], width: int, L_f: int):
    out = []
    for spec in specs:
        kind = spec.get("kind")
        if kind == "per_step":
            gain = np.diag(np.broadcast_to(np.asarray(spec["gain"], float), (width,)))
            for i in range(L_f):
                G = np.zeros((width, width * L_f))
                G[:, i * width:(i + 1) * width] = gain
                out.append((G, np.zeros(width)))
        elif kind == "horizon_diag":
            w = np.asarray(spec["weights"], float)
            if w.size != width:
                raise ConfigError(f"horizon_diag weights need {width} entries")
            out.append((np.diag(np.tile(w, L_f)), np.zeros(width * L_f)))
        elif kind == "matrix":
            G = np.asarray(spec["G"], float)
            c = np.asarray(spec.get("c", np.zeros(G.shape[0])), float)
            out.append((G, c))
        else:
            raise ConfigError(f"unknown constraint kind {kind!r}")
    return tuple(out)


def _build(cls, raw, path: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in raw.items():
        current = getattr(defaults, name)
        where = f"{path}.{name}" if path else name
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, where)
        else:
            kwargs[name] = _coerce(value, current, where)
    return replace(defaults, **kwargs)


def _coerce(value, default, where: str):
    """Check ``value`` against the type of the default it replaces."""
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{where}: expected {type(default).__name__}, got {value!r}")
    return value


def default_config_path() -> Path:
    return Path(str(resources.files("rddpc") / "configs" / "benchmark.yaml"))


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read a YAML config (defaults if ``path`` is None) and apply flat ``overrides``."""
    raw = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
    cfg = _build(ExperimentConfig, raw, "")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        cfg = _set_path(cfg, key.split("."), value)
    return cfg.validate()


def _set_path(obj, keys, value):
    head = keys[0]
    if not hasattr(obj, head):
        raise ConfigError(f"unknown config key {head!r}")
    if len(keys) == 1:
        return replace(obj, **{head: _coerce(value, getattr(obj, head), head)})
    return replace(obj, **{head: _set_path(getattr(obj, head), keys[1:], value)})
