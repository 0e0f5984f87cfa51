"""Independent checks for the robust controllers.

* a brute-force worst-case cost oracle for low-rank uncertainty maps,
* minimal uncertainty size that explains a recorded trajectory, and the
  empirical tuning rule built on it,
* the safe-approximation bounds on the uncertainty size (open-loop and
  feedback) and the cost certificates that follow from them.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .behavioral import DERIVED_RTOL, EPS, BehavioralData, ReducedData, pinv, projector_range_basis
from .controllers import ControlConfig, RobustSolution

Data = Union[BehavioralData, ReducedData]
GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


# -- worst-case oracle --------------------------------------------------------------

@dataclass
class OracleResult:
    max_value: float
    argmax_w: np.ndarray
    argmax_z: np.ndarray
    method: str
    rank: int


def _sphere_points(dim: int, n: int) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        t = 2 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(t), np.sin(t)])
    # Fibonacci lattice on S^2
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])


def worst_case_cost_oracle(b, M, Q, y_r, lam: float, phi_perp: Optional[np.ndarray] = None,
                           subspace_dim_cap: int = 3, n_grid: Optional[int] = None,
                           ascent_iters: int = 50, rtol: float = 1e-9) -> OracleResult:
    """Maximize ``||b + M w - y_r||_Q^2`` over ``w^T P w <= lam`` by enumeration.

    ``P`` (``phi_perp``, an orthogonal projector; identity if omitted) is
    handled by restricting ``w`` to range(P). The map is then reduced to its
    row space; a convex function on a ball peaks on the boundary, so 1-D
    instances check both endpoints and 2-3-D instances scan a sphere grid
    followed by fixed-point ascent ``z <- sqrt(lam) grad/||grad||``.
    """
    b = np.asarray(b, float).reshape(-1)
    y_r = np.asarray(y_r, float).reshape(-1)
    M = np.atleast_2d(np.asarray(M, float))
    Q = np.atleast_2d(np.asarray(Q, float))
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if phi_perp is None:
        B = np.eye(M.shape[1])
    else:
        B = projector_range_basis(np.asarray(phi_perp, float))
        leak = np.linalg.norm(M - (M @ B) @ B.T)
        if leak > 1e-8 * max(np.linalg.norm(M), 1.0):
            raise ValueError("M acts on the nullspace of P: the worst case is unbounded")
    Qh = np.linalg.cholesky(Q).T
    A = Qh @ M @ B
    d = Qh @ (b - y_r)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    scale = max(s[0] if s.size else 0.0, np.linalg.norm(Qh, 2) * 1e-300)
    rank = int(np.sum(s > rtol * max(scale, EPS)))
    if rank > subspace_dim_cap:
        raise ValueError(f"effective rank {rank} exceeds oracle cap {subspace_dim_cap}")
    base = float(d @ d)
    if rank == 0 or lam == 0:
        return OracleResult(base, np.zeros(M.shape[1]), np.zeros(rank), "trivial", rank)
    US = U[:, :rank] * s[:rank]
    g = US.T @ d
    H = US.T @ US
    r = math.sqrt(lam)

    def f(Z):
        return base + 2 * Z @ g + np.einsum("ij,jk,ik->i", Z, H, Z)

    if rank == 1:
        Z = _sphere_points(1, 2) * r
        method = "endpoint-1d"
    else:
        n = n_grid or (10_000 if rank == 2 else 100_000)
        Z = _sphere_points(rank, n) * r
        method = "grid+ascent"
    vals = f(Z)
    z = Z[int(np.argmax(vals))]
    best = float(vals.max())
    if rank > 1:
        for _ in range(ascent_iters):
            grad = g + H @ z
            nz = np.linalg.norm(grad)
            if nz == 0:
                break
            z_new = r * grad / nz
            v = float(f(z_new[None])[0])
            if v <= best:
                break
            z, best = z_new, v
    w = B @ (Vt[:rank].T @ z)
    return OracleResult(best, w, z, method, rank)


# -- membership and tuning ---------------------------------------------------------

def _deviation_map(data: Data) -> Tuple[np.ndarray, float]:
    """``M`` (full or reduced columns) plus the scale used for its rank cutoff."""
    if isinstance(data, BehavioralData):
        return data.M, float(np.linalg.norm(data.Yf, 2))
    return data.Mt, data.yf_norm


def _min_norm_coordinates(data: Data, r: np.ndarray, tol: float) -> Optional[np.ndarray]:
    M, scale = _deviation_map(data)
    s_max = np.linalg.norm(M, 2)
    if s_max <= DERIVED_RTOL * max(scale, EPS):
        return np.zeros(M.shape[1]) if np.linalg.norm(r) <= tol * (1 + scale) else None
    w = pinv(M, DERIVED_RTOL * max(scale, EPS) / s_max) @ r
    if np.linalg.norm(M @ w - r) > tol * (1 + np.linalg.norm(r) + scale):
        return None
    return w


def min_lambda_for_trajectory(data: Data, u_p, y_p, u_f, y_f, tol: float = 1e-7) -> float:
    """Smallest ``lam`` with ``y_f = b + M w``, ``||P w||^2 <= lam``.

    The minimum-norm ``w`` lies in the row space of ``M`` (inside range(P)),
    so the answer is ``||pinv(M) (y_f - b)||^2``. If ``y_f - b`` is not in
    range(M) (for instance noise-free data, where ``M`` vanishes and only an
    exact prediction is consistent) no finite size works and ``inf`` is
    returned.
    """
    r = np.asarray(y_f, float).reshape(-1) - data.nominal(u_p, u_f, y_p)
    w = _min_norm_coordinates(data, r, tol)
    return math.inf if w is None else float(w @ w)


def min_lambda_feedback(data: Data, u_p, y_p, v_f, K, y_f, tol: float = 1e-7) -> float:
    """Feedback counterpart: ``y_f = b_v + (I + Mf K) M w``."""
    Mf = data.Mf if isinstance(data, BehavioralData) else data.MfT
    r = np.asarray(y_f, float).reshape(-1) - data.nominal(u_p, v_f, y_p)
    r = np.linalg.solve(np.eye(r.size) + Mf @ np.asarray(K, float), r)
    w = _min_norm_coordinates(data, r, tol)
    return math.inf if w is None else float(w @ w)


@dataclass(frozen=True)
class TrajectorySlice:
    u_p: np.ndarray
    y_p: np.ndarray
    u_f: np.ndarray
    y_f: np.ndarray


def validation_slices(trajectory, L_p: int, L_f: int, n_slices: int = 100) -> List[TrajectorySlice]:
    """Evenly spaced length-``L_p + L_f`` windows of a recorded trajectory."""
    u, y = trajectory.inputs, trajectory.outputs
    L = L_p + L_f
    if len(u) < L:
        raise ValueError("trajectory shorter than one window")
    starts = np.unique(np.linspace(0, len(u) - L, n_slices).round().astype(int))
    return [TrajectorySlice(u[s:s + L_p].ravel(), y[s:s + L_p].ravel(), u[s + L_p:s + L].ravel(),
                            y[s + L_p:s + L].ravel()) for s in starts]


def tune_lambda(data: Data, slices: Iterable[TrajectorySlice]) -> float:
    """Smallest ``lam`` whose prediction sets contain every validation slice."""
    vals = [min_lambda_for_trajectory(data, s.u_p, s.y_p, s.u_f, s.y_f) for s in slices]
    if not vals:
        raise ValueError("need at least one validation slice")
    return float(max(vals))


# -- safe-approximation bounds --------------------------------------------------------

@dataclass
class TheoryBounds:
    delta: float
    beta: float
    xi1: float
    xi2: float
    Lambda1: float
    Lambda2: float
    Lambda_o: float
    Lambda_c: Optional[float] = None
    gain: float = 0.0  # ||P pinv(M)||, the amplification in front of the bracket

    def to_dict(self) -> dict:
        return asdict(self)


def _noise_constants(data: BehavioralData, clean: BehavioralData, n_x: int, xi_u_bar: float, xi_y_bar: float):
    if clean.Phi.shape != data.Phi.shape:
        raise ValueError("clean and noisy data must share dimensions")
    k = data.n_u * data.L + n_x
    s = np.linalg.svd(clean.Phi, compute_uv=False)
    if k > s.size or s[k - 1] <= max(s.shape) * s[0] * EPS:
        raise ValueError(f"sigma_{k} of the clean data matrix is zero: insufficient excitation")
    delta = 1.0 / s[k - 1]
    beta = max(delta, float(np.linalg.norm(data.PhiPinv, 2)))
    xi1 = xi_u_bar * math.sqrt(data.n_u * data.L) + xi_y_bar * math.sqrt(data.n_y * data.L_p)
    xi2 = xi_y_bar * math.sqrt(data.n_y * data.L_f)
    nbar = data.n_cols
    yf = float(np.linalg.norm(data.Yf, 2))
    lam1 = math.sqrt(nbar) * (GOLDEN * beta ** 2 * xi1 * yf + delta * xi2)
    lam2 = delta * (yf + xi2 * math.sqrt(nbar)) * xi1 + xi2
    gain = float(np.linalg.norm(data.PhiPerp @ data.M_pinv, 2))
    return delta, beta, xi1, xi2, lam1, lam2, gain


def theorem1_lambda_o(data: BehavioralData, clean_data: BehavioralData, n_x: int, xi_u_bar: float,
                      xi_y_bar: float, u_p, u_f, y_p) -> TheoryBounds:
    """Uncertainty size that provably contains every noise-consistent future output (open loop)."""
    delta, beta, xi1, xi2, lam1, lam2, gain = _noise_constants(data, clean_data, n_x, xi_u_bar, xi_y_bar)
    z = np.concatenate([np.ravel(u_p), np.ravel(u_f), np.ravel(y_p)])
    lam_o = gain ** 2 * (lam1 * np.linalg.norm(z) + lam2) ** 2
    return TheoryBounds(delta, beta, xi1, xi2, lam1, lam2, float(lam_o), gain=gain)


def theorem3_lambda_c(data: BehavioralData, clean_data: BehavioralData, K, v_f, u_p, y_p, n_x: int,
                      xi_u_bar: float, xi_y_bar: float, cond_max: float = 1e12) -> TheoryBounds:
    """Feedback counterpart; divides by ``||(I - Mf_clean K)(I + Mf K)||^2``.

    The amplification uses the pseudo-inverse ``||P pinv(M)||`` exactly as in
    the open-loop bound.
    """
    K = np.asarray(K, float)
    bounds = theorem1_lambda_o(data, clean_data, n_x, xi_u_bar, xi_y_bar, u_p, v_f, y_p)
    m = data.Yf.shape[0]
    T = (np.eye(m) - clean_data.Mf @ K) @ (np.eye(m) + data.Mf @ K)
    if np.linalg.cond(T) > cond_max:
        raise ValueError("(I - Mf_clean K)(I + Mf K) is singular")
    bounds.Lambda_c = bounds.Lambda_o / float(np.linalg.norm(T, 2)) ** 2
    return bounds


# -- cost certificates -------------------------------------------------------------

@dataclass
class BoundCheck:
    kind: str
    passed: bool
    realized: float
    bound: float
    margin: float
    membership: float
    precondition: bool

    def to_dict(self) -> dict:
        return asdict(self)


def cost_bound_check(kind: str, solution: RobustSolution, realized_u, realized_y, config: ControlConfig,
                     data: BehavioralData, u_p=None, y_p=None) -> BoundCheck:
    """Compare a realized horizon cost with the certified bound.

    ``thm2`` (open loop): ``J <= 2 J* + 8 s_max(Q) ||Yf||^2 lam``.
    ``thm4`` (feedback):  ``J <= 2 J* + 2 lam ||Yf||^2 (s_max(R) ||K||^2 ||2I + Mf K||^2
    + 4 s_max(Q) ||I + Mf K||^2)``, with ``J*`` the nominal cost of the
    optimal plan. The bound only applies when the realized outputs lie in the
    prediction set; ``precondition`` reports that (needs ``u_p``, ``y_p``).
    """
    if kind not in ("thm2", "thm4"):
        raise ValueError("kind must be 'thm2' or 'thm4'")
    u = np.asarray(realized_u, float).reshape(-1)
    y = np.asarray(realized_y, float).reshape(-1)
    lam = solution.lam
    yf = float(np.linalg.norm(data.Yf, 2))
    sq = float(np.linalg.eigvalsh(config.Q).max())
    sr = float(np.linalg.eigvalsh(config.R).max())
    nominal = config.cost(solution.u_f, solution.b)
    m = data.Yf.shape[0]
    if kind == "thm2":
        bound = 2 * nominal + 8 * sq * yf ** 2 * lam
        member = (min_lambda_for_trajectory(data, u_p, y_p, u, y) if u_p is not None else math.nan)
    else:
        K = solution.K if solution.K is not None else np.zeros((u.size, m))
        IK = np.eye(m) + data.Mf @ K
        extra = sr * np.linalg.norm(K, 2) ** 2 * np.linalg.norm(IK + np.eye(m), 2) ** 2 \
            + 4 * sq * np.linalg.norm(IK, 2) ** 2
        bound = 2 * nominal + 2 * lam * yf ** 2 * extra
        member = (min_lambda_feedback(data, u_p, y_p, solution.u_f, K, y) if u_p is not None else math.nan)
    realized = config.cost(u, y)
    pre = bool(member <= lam * (1 + 1e-9)) if not math.isnan(member) else True
    return BoundCheck(kind, bool(realized <= bound), realized, float(bound), float(bound - realized),
                      float(member), pre)


# -- sampling checks -------------------------------------------------------------------

@dataclass
class SamplingReport:
    worst_constraint: float  # max over samples of ||G z + c||^2 - 1
    worst_cost_excess: float  # max sampled cost minus certificate (relative to 1 + psi)
    n_samples: int

    def ok(self, tol: float = 1e-6) -> bool:
        return self.worst_constraint <= tol and self.worst_cost_excess <= tol


def robust_sampling_check(solution: RobustSolution, data: Data, config: ControlConfig, n_samples: int = 1000,
                          seed: Optional[int] = 0, form: str = "reduced") -> SamplingReport:
    """Evaluate constraints and cost at ``n_samples`` points on the boundary ``w^T P w = lam``."""
    from .controllers import uncertainty_model
    model = uncertainty_model(data, form)
    B = model.basis if model.basis is not None else np.eye(model.P.shape[0])
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n_samples, B.shape[1]))
    Z *= math.sqrt(solution.lam) / np.linalg.norm(Z, axis=1, keepdims=True)
    MW = (model.M @ B @ Z.T).T  # deviations M w, one row per sample
    b = solution.b
    if solution.kind == "frddpc":
        K = solution.K
        U = solution.u_f[None, :] + (K @ MW.T).T
        Y = b[None, :] + ((np.eye(b.size) + model.Mf @ K) @ MW.T).T
        e = Y - config.y_ref
        costs = np.einsum("ij,jk,ik->i", e, config.Qbar, e) + np.einsum("ij,jk,ik->i", U, config.Rbar, U)
    else:
        U = np.repeat(solution.u_f[None, :], n_samples, axis=0)
        Y = b[None, :] + MW
        e = Y - config.y_ref
        costs = np.einsum("ij,jk,ik->i", e, config.Qbar, e)
    cert = solution.psi
    worst = -math.inf
    for G, c in config.output_constraints:
        worst = max(worst, float(np.max(np.sum((Y @ G.T + c) ** 2, axis=1) - 1)))
    for G, c in config.input_constraints:
        worst = max(worst, float(np.max(np.sum((U @ G.T + c) ** 2, axis=1) - 1)))
    excess = float((costs.max() - cert) / (1 + abs(cert)))
    return SamplingReport(worst if worst > -math.inf else -1.0, excess, n_samples)


# -- synthetic instances ------------------------------------------------------------------

@dataclass
class SyntheticInstance:
    data: BehavioralData
    config: ControlConfig
    u_p: np.ndarray
    y_p: np.ndarray


def random_instance(seed: int, length: int = 80, lam: Optional[float] = None,
                    settings=None) -> SyntheticInstance:
    """Small noisy robust-control problem whose deviation map has rank at most 3.

    Only the output channel carries noise and it is scalar, so ``Y_f Phi_perp``
    has rank at most ``n_y L_f``; the shapes alternate between
    ``(n_y, L_f) = (2, 1)`` and ``(1, 3)``.
    """
    from .behavioral import partition
    from .conic import SolverSettings
    from .lti_sim import ArNoiseModel, SystemModel, simulate
    rng = np.random.default_rng(seed)
    n_y, L_f = ((2, 1), (1, 3))[seed % 2]
    L_p = 2
    n_x = 2
    A = rng.standard_normal((n_x, n_x))
    A *= rng.uniform(0.5, 0.9) / max(abs(np.linalg.eigvals(A)))
    model = SystemModel(A, rng.standard_normal((n_x, 1)), rng.standard_normal((n_y, n_x)),
                        rng.uniform(0.5, 1.0, n_y))
    u = rng.standard_normal(length)
    traj = simulate(model, ArNoiseModel(sigma=0.0), ArNoiseModel(sigma=rng.uniform(0.02, 0.1)), u,
                    seed=seed)
    data = partition(traj, L_p, L_f)
    Q = np.diag(rng.uniform(0.5, 2.0, n_y))
    R = np.diag(rng.uniform(0.05, 0.5, 1))
    y_ref = rng.uniform(-1, 1, n_y * L_f)
    lam = float(rng.uniform(0.05, 1.0)) if lam is None else lam
    box = (np.eye(L_f) * 0.3, np.zeros(L_f))  # |u| <= 3.3 per step
    k = rng.integers(0, len(u) - L_p)
    u_p, y_p = traj.inputs[k:k + L_p].ravel(), traj.outputs[k:k + L_p].ravel()
    # output ball that keeps u_f = 0 robustly feasible
    free = data.Mp @ data.past_vector(u_p, y_p)
    radius = 1.0 + float(np.linalg.norm(free)) + 1.5 * math.sqrt(lam) * float(np.linalg.norm(data.M, 2))
    out = (np.eye(n_y * L_f) / radius, np.zeros(n_y * L_f))
    config = ControlConfig(L_p, L_f, Q, R, y_ref=y_ref, input_constraints=[box], output_constraints=[out],
                           lam=lam, form="full", settings=settings or SolverSettings())
    return SyntheticInstance(data, config, u_p, y_p)
