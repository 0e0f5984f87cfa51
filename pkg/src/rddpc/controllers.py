"""Predictive-control problems built on a Hankel-data predictor.

All four controllers share the nominal prediction
``b = Mf u_f + Mp col(u_p, y_p)``. They differ in how they treat the
deviation ``M w`` left over by the non-unique data coefficients:

* ``spc``    ignores it (``w = 0``);
* ``pbr``    lets the optimizer pick it, penalized or bounded (optimistic);
* ``rddpc``  guards against its worst case over ``w^T P w <= lam``;
* ``frddpc`` does the same while the inputs react to it through a causal
  gain ``K`` on the output prediction error.

Three equivalent coordinate choices for ``w`` are available through
``form``: ``"full"`` (one entry per Hankel column), ``"reduced"`` (the
SVD-compressed data) and ``"compact"`` (coordinates on the row space of
the reduced ``M``, where the uncertainty ellipsoid becomes a ball).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import block_diag

from .behavioral import BehavioralData, ReducedData, svd_reduce
from .conic import (ConicProgram, OPTIMAL, SolverSettings, bmat, bordered_basis, inverse_pd, schur_lmi,
                    slemma_pair, solve)
from .conic.lmi import check_pd

FORMS = ("full", "reduced", "compact")
Constraint = Tuple[np.ndarray, np.ndarray]
Data = Union[BehavioralData, ReducedData]


def _as_constraints(items, width: int, label: str) -> Tuple[Constraint, ...]:
    out = []
    for G, c in items or ():
        G = np.atleast_2d(np.asarray(G, dtype=float))
        c = np.zeros(G.shape[0]) if c is None else np.asarray(c, dtype=float).reshape(-1)
        if G.shape[1] != width:
            raise ValueError(f"{label} constraint has {G.shape[1]} columns, expected {width}")
        if c.size != G.shape[0]:
            raise ValueError(f"{label} constraint offset length {c.size} != rows {G.shape[0]}")
        out.append((G, c))
    return tuple(out)


@dataclass(frozen=True)
class ControlConfig:
    """Horizons, per-step weights, constraint sets and uncertainty size.

    Constraints are ``||G z + c||^2 <= 1`` with ``z`` the stacked future
    inputs (``input_constraints``) or predicted outputs (``output_constraints``).
    """

    L_p: int
    L_f: int
    Q: np.ndarray
    R: np.ndarray
    y_ref: Optional[np.ndarray] = None
    input_constraints: Tuple[Constraint, ...] = ()
    output_constraints: Tuple[Constraint, ...] = ()
    lam: float = 0.0
    form: str = "reduced"
    settings: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        Q = check_pd(self.Q, "Q")
        R = check_pd(self.R, "R")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        n_y, n_u = Q.shape[0], R.shape[0]
        y_ref = np.zeros(n_y * self.L_f) if self.y_ref is None else np.asarray(self.y_ref, float).reshape(-1)
        if y_ref.size != n_y * self.L_f:
            raise ValueError(f"y_ref has length {y_ref.size}, expected {n_y * self.L_f}")
        object.__setattr__(self, "y_ref", y_ref)
        object.__setattr__(self, "input_constraints",
                           _as_constraints(self.input_constraints, n_u * self.L_f, "input"))
        object.__setattr__(self, "output_constraints",
                           _as_constraints(self.output_constraints, n_y * self.L_f, "output"))
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}")

    @property
    def n_u(self) -> int:
        return self.R.shape[0]

    @property
    def n_y(self) -> int:
        return self.Q.shape[0]

    @property
    def Qbar(self) -> np.ndarray:
        return np.kron(np.eye(self.L_f), self.Q)

    @property
    def Rbar(self) -> np.ndarray:
        return np.kron(np.eye(self.L_f), self.R)

    def with_reference(self, y_ref) -> "ControlConfig":
        return replace(self, y_ref=y_ref)

    def cost(self, u_f, y_f) -> float:
        """Tracking-plus-effort cost over the horizon."""
        e = np.asarray(y_f, float).reshape(-1) - self.y_ref
        u = np.asarray(u_f, float).reshape(-1)
        return float(e @ self.Qbar @ e + u @ self.Rbar @ u)


@dataclass(frozen=True)
class FeedbackPolicy:
    """Causal affine policy ``u_f = v_f + K (y_f - b)``."""

    v_f: np.ndarray
    K: np.ndarray
    b: np.ndarray
    n_u: int
    n_y: int

    def inputs(self, y_f) -> np.ndarray:
        return self.v_f + self.K @ (np.asarray(y_f, float).reshape(-1) - self.b)

    def input_at(self, k: int, y_seen) -> np.ndarray:
        """Input for step ``k`` given the outputs of steps ``0..k-1``."""
        y_seen = np.asarray(y_seen, float).reshape(-1)
        rows = slice(k * self.n_u, (k + 1) * self.n_u)
        m = k * self.n_y
        if y_seen.size < m:
            raise ValueError(f"step {k} needs {m} output samples, got {y_seen.size}")
        return self.v_f[rows] + self.K[rows, :m] @ (y_seen[:m] - self.b[:m])

    @property
    def first_input(self) -> np.ndarray:
        return self.v_f[:self.n_u]


@dataclass
class RobustSolution:
    kind: str
    status: str
    u_f: Optional[np.ndarray] = None
    K: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    psi: Optional[float] = None
    gamma: Optional[float] = None
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))
    eta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    w: Optional[np.ndarray] = None
    objective: Optional[float] = None
    lam: float = 0.0
    solve_time: float = 0.0
    assembly_time: float = 0.0
    iterations: int = 0
    n_u: int = 1
    n_y: int = 1
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    @property
    def v_f(self) -> Optional[np.ndarray]:
        return self.u_f if self.kind == "frddpc" else None

    @property
    def first_input(self) -> np.ndarray:
        if self.u_f is None:
            raise ValueError(f"no input available (status {self.status})")
        return self.u_f[:self.n_u]

    @property
    def worst_case_total(self) -> Optional[float]:
        """Certified worst-case tracking-plus-effort cost over the horizon."""
        return self.objective if self.kind in ("rddpc", "frddpc") else None

    @property
    def worst_case_tracking(self) -> Optional[float]:
        """Certified worst-case tracking cost (open-loop robust controller only)."""
        return self.psi if self.kind == "rddpc" else None

    @property
    def policy(self) -> Optional[FeedbackPolicy]:
        if self.kind != "frddpc" or self.u_f is None:
            return None
        return FeedbackPolicy(self.u_f, self.K, self.b, self.n_u, self.n_y)


# -- data views ---------------------------------------------------------------

@dataclass(frozen=True)
class UncertaintyModel:
    """``yhat = Mf u_f + Mp col(u_p, y_p) + M w`` with ``w^T P w <= lam``."""

    Mf: np.ndarray
    Mp: np.ndarray
    M: np.ndarray
    P: np.ndarray
    basis: Optional[np.ndarray]
    form: str


def uncertainty_model(data: Data, form: str = "reduced") -> UncertaintyModel:
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")
    if form == "full":
        if not isinstance(data, BehavioralData):
            raise TypeError("the full form needs BehavioralData")
        return UncertaintyModel(data.Mf, data.Mp, data.M, data.PhiPerp, data.perp_basis, form)
    red = reduced_of(data)
    if form == "reduced":
        return UncertaintyModel(red.MfT, red.MpT, red.Mt, red.PhiPerpT, red.perp_basis, form)
    rho = red.M_compact.shape[1]
    return UncertaintyModel(red.MfT, red.MpT, red.M_compact, np.eye(rho), None, form)


_REDUCED_CACHE: dict = {}


def reduced_of(data: Data) -> ReducedData:
    if isinstance(data, ReducedData):
        return data
    key = id(data)
    hit = _REDUCED_CACHE.get(key)
    if hit is None or hit[0] is not data:
        if len(_REDUCED_CACHE) > 16:
            _REDUCED_CACHE.clear()
        hit = (data, svd_reduce(data))
        _REDUCED_CACHE[key] = hit
    return hit[1]


def _past(data: Data, config: ControlConfig, u_p, y_p) -> np.ndarray:
    if data.n_u != config.n_u or data.n_y != config.n_y or data.L_p != config.L_p or data.L_f != config.L_f:
        raise ValueError("data dimensions/horizons do not match the control configuration")
    return data.past_vector(u_p, y_p)


def _sqrt_factor(W: np.ndarray) -> np.ndarray:
    """``F`` with ``F^T F = W``."""
    return np.linalg.cholesky(W).T


def _add_input_set(prog: ConicProgram, config: ControlConfig, u) -> None:
    for i, (G, c) in enumerate(config.input_constraints):
        prog.add_unit_ball(G @ u + c, name=f"input[{i}]")


def _add_output_set(prog: ConicProgram, config: ControlConfig, y) -> None:
    for i, (G, c) in enumerate(config.output_constraints):
        prog.add_unit_ball(G @ y + c, name=f"output[{i}]")


def _solution(kind: str, result, config: ControlConfig, t_asm: float, **extra) -> RobustSolution:
    sol = RobustSolution(kind, result.status, lam=config.lam, solve_time=result.solve_time,
                         assembly_time=t_asm, iterations=result.iterations, n_u=config.n_u,
                         n_y=config.n_y, info=dict(result.info))
    if result.ok:
        sol.objective = result.objective
        for k, v in extra.items():
            setattr(sol, k, v(result) if callable(v) else v)
    return sol


# -- SPC / PBR ------------------------------------------------------------------

def assemble_spc(data: Data, config: ControlConfig, u_p, y_p) -> Tuple[ConicProgram, dict]:
    Mf, Mp = (data.Mf, data.Mp) if isinstance(data, BehavioralData) else (data.MfT, data.MpT)
    z_p = _past(data, config, u_p, y_p)
    prog = ConicProgram()
    u = prog.variable("u_f", config.n_u * config.L_f)
    y = Mf @ u + Mp @ z_p
    _add_input_set(prog, config, u)
    _add_output_set(prog, config, y)
    prog.minimize(squares=[_sqrt_factor(config.Qbar) @ (y - config.y_ref), _sqrt_factor(config.Rbar) @ u])
    return prog, {"u_f": u, "b": y}


def solve_spc(data: Data, config: ControlConfig, u_p, y_p) -> RobustSolution:
    """Least-squares (minimum-norm) prediction, nominal QP."""
    t0 = time.perf_counter()
    prog, ex = assemble_spc(data, config, u_p, y_p)
    t_asm = time.perf_counter() - t0
    res = solve(prog, config.settings)
    return _solution("spc", res, config, t_asm, u_f=lambda r: r.values["u_f"],
                     b=lambda r: r.value(ex["b"]))


def assemble_pbr(data: Data, config: ControlConfig, u_p, y_p, mode: str = "constraint",
                 weight: Optional[float] = None) -> Tuple[ConicProgram, dict]:
    if mode not in ("constraint", "penalty"):
        raise ValueError("mode must be 'constraint' or 'penalty'")
    model = uncertainty_model(data, config.form)
    z_p = _past(data, config, u_p, y_p)
    # w = basis @ zeta keeps w in range(P), where w^T P w = ||zeta||^2
    D = model.M if model.basis is None else model.M @ model.basis
    prog = ConicProgram()
    u = prog.variable("u_f", config.n_u * config.L_f)
    b = model.Mf @ u + model.Mp @ z_p
    y = b
    squares = [_sqrt_factor(config.Qbar) @ (b - config.y_ref), _sqrt_factor(config.Rbar) @ u]
    zeta = None
    if mode == "penalty":
        if weight is None or weight <= 0:
            raise ValueError("penalty mode needs a positive weight")
        zeta = prog.variable("zeta", D.shape[1])
        y = b + D @ zeta
        squares = [_sqrt_factor(config.Qbar) @ (y - config.y_ref), _sqrt_factor(config.Rbar) @ u,
                   np.sqrt(weight) * zeta]
    elif config.lam > 0 and D.shape[1] > 0:
        zeta = prog.variable("zeta", D.shape[1])
        y = b + D @ zeta
        prog.add_unit_ball(zeta / np.sqrt(config.lam), name="nullspace")
        squares = [_sqrt_factor(config.Qbar) @ (y - config.y_ref), _sqrt_factor(config.Rbar) @ u]
    _add_input_set(prog, config, u)
    _add_output_set(prog, config, y)
    prog.minimize(squares=squares)
    return prog, {"u_f": u, "b": b, "zeta": zeta, "basis": model.basis}


def solve_pbr(data: Data, config: ControlConfig, u_p, y_p, mode: str = "constraint",
              weight: Optional[float] = None) -> RobustSolution:
    """Optimistic regularized controller.

    ``mode="penalty"`` adds ``weight * ||P w||^2`` to the cost; ``mode="constraint"``
    bounds ``||P w||^2 <= config.lam`` instead.
    """
    t0 = time.perf_counter()
    prog, ex = assemble_pbr(data, config, u_p, y_p, mode, weight)
    t_asm = time.perf_counter() - t0
    res = solve(prog, config.settings)

    def w_of(r):
        if ex["zeta"] is None:
            return None
        z = r.values["zeta"]
        return z if ex["basis"] is None else ex["basis"] @ z

    return _solution("pbr", res, config, t_asm, u_f=lambda r: r.values["u_f"],
                     b=lambda r: r.value(ex["b"]), w=w_of)


# -- robust open-loop -------------------------------------------------------------

def _cost_lmi(prog: ConicProgram, config: ControlConfig, model: UncertaintyModel, psi, gamma, b, MM,
              extra_cross=None, extra_inv=None):
    """Worst-case cost LMI for ``||b + MM w - y_r||_Q^2 (+ extra) <= psi``.

    ``head = [[psi - gamma lam + y_r^T Q (2b - y_r), y_r^T Q MM], [., gamma P]]``
    bordered by the Schur block ``[[b, MM], extra_cross]``.
    """
    Qb = config.Qbar
    yr = config.y_ref
    qy = Qb @ yr
    p = model.P.shape[0]
    m = yr.size
    alpha = psi - gamma * config.lam + 2.0 * (qy @ b) - float(yr @ qy)
    row = qy @ MM
    head = bmat([[alpha.reshape(1, 1), row.reshape(1, p)], [row.reshape(p, 1), gamma * model.P]])
    cross = [[b.reshape(m, 1), MM]]
    inv = inverse_pd(Qb, "Q")
    if extra_cross is not None:
        cross.append(extra_cross)
        inv = block_diag(inv, extra_inv)
    expr = schur_lmi(head, bmat(cross), inv)
    rows = inv.shape[0]
    basis = None if model.basis is None else bordered_basis(1, model.basis, rows)
    return prog.add_lmi(expr, name="worst_case_cost", basis=basis)


def assemble_rddpc(data: Data, config: ControlConfig, u_p, y_p,
                   form: Optional[str] = None) -> Tuple[ConicProgram, dict]:
    """Robust open-loop SDP: minimize ``psi + ||u_f||_R^2``."""
    if config.lam <= 0:
        raise ValueError("lam must be positive for the robust controller; use solve_spc for lam = 0")
    model = uncertainty_model(data, form or config.form)
    z_p = _past(data, config, u_p, y_p)
    prog = ConicProgram()
    u = prog.variable("u_f", config.n_u * config.L_f)
    psi = prog.variable("psi")
    gamma = prog.variable("gamma", nonneg=True)
    b = model.Mf @ u + model.Mp @ z_p
    _add_input_set(prog, config, u)
    mus = []
    for i, (G, c) in enumerate(config.output_constraints):
        _, mu = slemma_pair(prog, (model.P, config.lam), G @ b + c, G @ model.M, name=f"mu{i}",
                            perp_basis=model.basis)
        mus.append(mu)
    _cost_lmi(prog, config, model, psi, gamma, b, model.M)
    prog.minimize(psi, squares=[_sqrt_factor(config.Rbar) @ u])
    return prog, {"u_f": u, "b": b, "model": model}


def _multipliers(res, prefix: str, n: int) -> np.ndarray:
    return np.array([float(res.values[f"{prefix}{i}"]) for i in range(n)])


def solve_rddpc(data: Data, config: ControlConfig, u_p, y_p, form: Optional[str] = None) -> RobustSolution:
    t0 = time.perf_counter()
    prog, ex = assemble_rddpc(data, config, u_p, y_p, form)
    t_asm = time.perf_counter() - t0
    res = solve(prog, config.settings)
    n_out = len(config.output_constraints)
    sol = _solution("rddpc", res, config, t_asm, u_f=lambda r: r.values["u_f"], b=lambda r: r.value(ex["b"]),
                    psi=lambda r: float(r.values["psi"]), gamma=lambda r: float(r.values["gamma"]),
                    mu=lambda r: _multipliers(r, "mu", n_out))
    sol.info["form"] = ex["model"].form
    sol.info["lmi_dims"] = [l.dim for l in prog.lmi_constraints]
    return sol


# -- robust feedback ------------------------------------------------------------------

def causal_mask(n_u: int, n_y: int, L_f: int) -> np.ndarray:
    """Free entries of a strictly lower block-triangular gain (blocks ``n_u x n_y``)."""
    blocks = np.tril(np.ones((L_f, L_f), dtype=bool), k=-1)
    return np.kron(blocks, np.ones((n_u, n_y), dtype=bool))


def assemble_frddpc(data: Data, config: ControlConfig, u_p, y_p, form: Optional[str] = None,
                    feedback: bool = True) -> Tuple[ConicProgram, dict]:
    """Robust feedback SDP over ``(v_f, K)``: minimize ``psi``.

    ``feedback=False`` fixes ``K = 0``.
    """
    if config.lam <= 0:
        raise ValueError("lam must be positive for the robust controller; use solve_spc for lam = 0")
    model = uncertainty_model(data, form or config.form)
    z_p = _past(data, config, u_p, y_p)
    n_uf, n_yf = config.n_u * config.L_f, config.n_y * config.L_f
    prog = ConicProgram()
    v = prog.variable("v_f", n_uf)
    mask = causal_mask(config.n_u, config.n_y, config.L_f) if feedback else np.zeros((n_uf, n_yf), bool)
    K = prog.variable("K", (n_uf, n_yf), mask=mask)
    psi = prog.variable("psi")
    gamma = prog.variable("gamma", nonneg=True)
    b = model.Mf @ v + model.Mp @ z_p
    KM = K @ model.M
    MKM = model.Mf @ KM + model.M
    for i, (G, c) in enumerate(config.input_constraints):
        slemma_pair(prog, (model.P, config.lam), G @ v + c, G @ KM, name=f"eta{i}", perp_basis=model.basis)
    for i, (G, c) in enumerate(config.output_constraints):
        slemma_pair(prog, (model.P, config.lam), G @ b + c, G @ MKM, name=f"mu{i}", perp_basis=model.basis)
    _cost_lmi(prog, config, model, psi, gamma, b, MKM, extra_cross=[v.reshape(n_uf, 1), KM],
              extra_inv=inverse_pd(config.Rbar, "R"))
    prog.minimize(psi)
    return prog, {"v_f": v, "K": K, "b": b, "model": model}


def solve_frddpc(data: Data, config: ControlConfig, u_p, y_p, form: Optional[str] = None,
                 feedback: bool = True) -> RobustSolution:
    t0 = time.perf_counter()
    prog, ex = assemble_frddpc(data, config, u_p, y_p, form, feedback)
    t_asm = time.perf_counter() - t0
    res = solve(prog, config.settings)
    n_in, n_out = len(config.input_constraints), len(config.output_constraints)
    sol = _solution("frddpc", res, config, t_asm, u_f=lambda r: r.values["v_f"], K=lambda r: r.values["K"],
                    b=lambda r: r.value(ex["b"]), psi=lambda r: float(r.values["psi"]),
                    gamma=lambda r: float(r.values["gamma"]), mu=lambda r: _multipliers(r, "mu", n_out),
                    eta=lambda r: _multipliers(r, "eta", n_in))
    sol.info["form"] = ex["model"].form
    sol.info["lmi_dims"] = [l.dim for l in prog.lmi_constraints]
    return sol


SOLVERS = {"spc": solve_spc, "pbr": solve_pbr, "rddpc": solve_rddpc, "frddpc": solve_frddpc}
