"""Discrete-time LTI plant simulation with AR(1)-coloured noise.

The benchmark is a two-mass-spring-damper with an unmeasured input
disturbance ``v1`` and a single measurement-noise channel ``v2`` injected
through ``B_v``::

    x(t+1) = A x(t) + B_u (u(t) + v1(t))
    y(t)   = C x(t) + B_v v2(t)
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

ArrayLike = Union[np.ndarray, Sequence[float]]


@dataclass(frozen=True)
class SystemModel:
    """State-space plant ``(A, B_u, C, D)`` plus the noise injection column ``B_v``."""

    A: np.ndarray
    B_u: np.ndarray
    C: np.ndarray
    B_v: np.ndarray
    D: Optional[np.ndarray] = None
    dt: float = 1.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B_u = np.asarray(self.B_u, dtype=float).reshape(A.shape[0], -1)
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        B_v = np.asarray(self.B_v, dtype=float).reshape(-1)
        D = (np.zeros((C.shape[0], B_u.shape[1])) if self.D is None
             else np.atleast_2d(np.asarray(self.D, dtype=float)))
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if C.shape[1] != A.shape[0]:
            raise ValueError("C column count must equal state dimension")
        if B_v.shape[0] != C.shape[0]:
            raise ValueError("B_v must have one entry per output")
        if D.shape != (C.shape[0], B_u.shape[1]):
            raise ValueError("D must be n_y x n_u")
        for name, value in (("A", A), ("B_u", B_u), ("C", C), ("B_v", B_v), ("D", D)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B_u.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]


@dataclass
class ArNoiseModel:
    """AR(1) noise ``v(t) = coeff*v(t-1) + e(t)`` with clipped Gaussian innovations."""

    coeff: float = 0.5
    sigma: float = 0.01
    truncation: float = 3.0
    state: float = 0.0

    def reset(self) -> "ArNoiseModel":
        self.state = 0.0
        return self

    @property
    def envelope(self) -> float:
        """Bound on |v(t)| implied by bounded innovations and a zero start."""
        return self.truncation * self.sigma / (1.0 - abs(self.coeff))


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float
    kd: float


@dataclass
class Trajectory:
    """Input/output record, one row per time step.

    ``input_noise`` and ``output_noise`` hold the realized ``v1`` and ``v2``
    sequences so theory checks can rebuild the exact noise-free pair.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    states: Optional[np.ndarray] = None
    noiseless_outputs: Optional[np.ndarray] = None
    input_noise: Optional[np.ndarray] = None
    output_noise: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(len(self.inputs), -1)
        self.outputs = np.asarray(self.outputs, dtype=float).reshape(len(self.outputs), -1)
        n = len(self.inputs)
        for name in ("outputs", "states", "noiseless_outputs", "input_noise", "output_noise"):
            value = getattr(self, name)
            if value is not None and len(value) != n:
                raise ValueError(f"{name} has length {len(value)}, expected {n}")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def n_u(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_y(self) -> int:
        return self.outputs.shape[1]

    def clean_twin(self) -> "Trajectory":
        """Noise-free trajectory sharing this record's effective input.

        Treating ``u + v1`` as the true input and ``y - B_v v2`` as the true
        output gives a pair that lies exactly in the plant's behaviour, which is
        the decomposition the safe-approximation bounds assume.
        """
        if self.input_noise is None or self.output_noise is None:
            raise ValueError("trajectory does not carry its noise record")
        b_v = np.asarray(self.meta.get("B_v"), dtype=float)
        return Trajectory(self.inputs + self.input_noise[:, None],
                          self.outputs - np.outer(self.output_noise, b_v))

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        _write_io_csv(path, self.inputs, self.outputs)
        if self.noiseless_outputs is not None:
            _write_io_csv(clean_path(path), self.inputs, self.noiseless_outputs)
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "Trajectory":
        path = Path(path)
        u, y = _read_io_csv(path)
        twin = clean_path(path)
        clean = _read_io_csv(twin)[1] if twin.exists() else None
        return cls(u, y, noiseless_outputs=clean)


def clean_path(path: Path) -> Path:
    name = path.name[:-4] if path.name.endswith(".csv") else path.name
    return path.with_name(name + ".clean.csv")


def _write_io_csv(path: Path, u: np.ndarray, y: np.ndarray) -> None:
    header = (["t"] + [f"u_{i + 1}" for i in range(u.shape[1])]
              + [f"y_{i + 1}" for i in range(y.shape[1])])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(len(u)):
            writer.writerow([t] + [repr(float(v)) for v in u[t]] + [repr(float(v)) for v in y[t]])


def _read_io_csv(path: Path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader], dtype=float)
    u_cols = [i for i, h in enumerate(header) if h.startswith("u_")]
    y_cols = [i for i, h in enumerate(header) if h.startswith("y_")]
    if not u_cols or not y_cols:
        raise ValueError(f"{path}: header must contain u_* and y_* columns")
    rows = rows.reshape(-1, len(header))
    return rows[:, u_cols], rows[:, y_cols]


def make_two_mass_model(k1: float = 4.0, k2: float = 4.0, b1: float = 1.5, b2: float = 2.0,
                        m1: float = 1.2, m2: float = 2.0, dt: float = 0.1) -> SystemModel:
    """Euler-discretized two-mass-spring-damper with full-state measurement."""
    A = np.array([
        [1.0, 0.0, dt, 0.0],
        [0.0, 1.0, 0.0, dt],
        [-k1 / m1 * dt, k1 / m1 * dt, 1.0 - b1 / m1 * dt, b1 / m1 * dt],
        [k1 / m2 * dt, -(k1 + k2) / m2 * dt, b1 / m2 * dt, 1.0 - (b1 + b2) / m2 * dt],
    ])
    B_u = np.array([[0.0], [0.0], [dt / m1], [0.0]])
    B_v = np.array([0.5, 1.0, 0.4, 0.3])
    return SystemModel(A=A, B_u=B_u, C=np.eye(4), B_v=B_v, dt=dt)


def ar_noise_step(model: ArNoiseModel, rng_draw: float) -> float:
    """Advance ``model`` by one step given a standard-normal draw."""
    bound = model.truncation * model.sigma
    innovation = float(np.clip(model.sigma * rng_draw, -bound, bound))
    model.state = model.coeff * model.state + innovation
    return model.state


class LtiPlant:
    """Stateful plant used for step-by-step closed-loop simulation.

    Both noise channels are drawn from a single generator in a fixed order
    (input channel first), so the noise stream does not depend on the inputs.
    """

    def __init__(self, model: SystemModel, noise_u: ArNoiseModel, noise_y: ArNoiseModel,
                 seed: Optional[int] = None, x0: Optional[ArrayLike] = None):
        self.model = model
        self.noise_u = replace(noise_u, state=0.0)
        self.noise_y = replace(noise_y, state=0.0)
        self.rng = np.random.default_rng(seed)
        self.x = np.zeros(model.n_x) if x0 is None else np.asarray(x0, dtype=float).reshape(model.n_x)
        self.x_clean = self.x.copy()
        self._advance_noise()

    def _advance_noise(self):
        draws = self.rng.standard_normal(2)
        self.v1 = ar_noise_step(self.noise_u, draws[0])
        self.v2 = ar_noise_step(self.noise_y, draws[1])

    def output(self, u: Optional[ArrayLike] = None) -> np.ndarray:
        """Measured output at the current time (``u`` only matters when D != 0)."""
        m = self.model
        y = m.C @ self.x + m.B_v * self.v2
        if u is not None:
            y = y + m.D @ np.asarray(u, dtype=float).reshape(m.n_u)
        return y

    def clean_output(self, u: Optional[ArrayLike] = None) -> np.ndarray:
        m = self.model
        y = m.C @ self.x_clean
        if u is not None:
            y = y + m.D @ np.asarray(u, dtype=float).reshape(m.n_u)
        return y

    def step(self, u: ArrayLike) -> None:
        m = self.model
        u = np.asarray(u, dtype=float).reshape(m.n_u)
        self.x = m.A @ self.x + m.B_u @ (u + self.v1)
        self.x_clean = m.A @ self.x_clean + m.B_u @ u
        self._advance_noise()


class _Recorder:
    def __init__(self, plant: LtiPlant):
        self.plant = plant
        self.u, self.y, self.x, self.clean, self.v1, self.v2 = [], [], [], [], [], []

    def record(self, u, y):
        p = self.plant
        self.u.append(np.asarray(u, dtype=float).reshape(p.model.n_u))
        self.y.append(y)
        self.x.append(p.x.copy())
        self.clean.append(p.clean_output(u))
        self.v1.append(p.v1)
        self.v2.append(p.v2)

    def trajectory(self, **meta) -> Trajectory:
        return Trajectory(np.array(self.u), np.array(self.y), states=np.array(self.x),
                          noiseless_outputs=np.array(self.clean),
                          input_noise=np.array(self.v1), output_noise=np.array(self.v2),
                          meta={"B_v": self.plant.model.B_v.tolist(), **meta})


def simulate(model: SystemModel, noise_u: ArNoiseModel, noise_y: ArNoiseModel,
             inputs: ArrayLike, x0: Optional[ArrayLike] = None, seed: Optional[int] = None) -> Trajectory:
    """Open-loop simulation of ``model`` driven by ``inputs`` (shape ``(T, n_u)`` or ``(T,)``)."""
    u = np.asarray(inputs, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, 1) if model.n_u == 1 else u.reshape(1, -1)
    if u.size == 0:
        raise ValueError("inputs must be nonempty")
    if u.shape[1] != model.n_u:
        raise ValueError(f"inputs have {u.shape[1]} channels, model expects {model.n_u}")
    plant = LtiPlant(model, noise_u, noise_y, seed=seed, x0=x0)
    rec = _Recorder(plant)
    for t in range(len(u)):
        rec.record(u[t], plant.output(u[t]))
        plant.step(u[t])
    return rec.trajectory(seed=seed)


def square_wave(period: int, amplitude: float, length: int) -> np.ndarray:
    """Square wave starting at ``+amplitude`` and toggling every ``period/2`` steps."""
    if period <= 0 or length <= 0:
        raise ValueError("period and length must be positive")
    t = np.arange(length)
    return np.where((t % period) < period / 2, amplitude, -amplitude).astype(float)


def gen_excitation(period: int, amplitude: float, noise_var: float, length: int,
                   seed: Optional[int] = None) -> np.ndarray:
    """Square wave plus zero-mean Gaussian perturbation of variance ``noise_var``."""
    base = square_wave(period, amplitude, length)
    if noise_var > 0:
        rng = np.random.default_rng(seed)
        base = base + np.sqrt(noise_var) * rng.standard_normal(length)
    return base


def collect_closed_loop(model: SystemModel, noise_u: ArNoiseModel, noise_y: ArNoiseModel,
                        pid: PidGains, reference: ArrayLike, length: int,
                        seed: Optional[int] = None, x0: Optional[ArrayLike] = None,
                        channel: int = 0) -> Trajectory:
    """Record a PID loop on output ``channel`` as offline data.

    Positional PID with the integral accumulated at ``dt`` and the derivative
    taken on the measurement, so reference steps do not kick the input.
    """
    r = np.asarray(reference, dtype=float).reshape(-1)
    if len(r) < length:
        raise ValueError("reference shorter than requested length")
    plant = LtiPlant(model, noise_u, noise_y, seed=seed, x0=x0)
    rec = _Recorder(plant)
    dt = model.dt
    integral = 0.0
    y_prev = None
    for t in range(length):
        y = plant.output()
        err = r[t] - y[channel]
        integral += err * dt
        deriv = 0.0 if y_prev is None else -(y[channel] - y_prev) / dt
        u = pid.kp * err + pid.ki * integral + pid.kd * deriv
        y_prev = y[channel]
        u_vec = np.full(model.n_u, u)
        rec.record(u_vec, y)
        plant.step(u_vec)
    return rec.trajectory(seed=seed, pid=[pid.kp, pid.ki, pid.kd])
