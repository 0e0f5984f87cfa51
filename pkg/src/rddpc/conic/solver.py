"""Adapter from :class:`ConicProgram` to CVXOPT's cone solvers.

Steps before handing the problem to CVXOPT:

* programs without LMIs go to ``coneqp`` with the squared-norm objective as
  its quadratic term; if that does not end optimal the program is re-solved
  with ``conelp`` below, whose certificates classify the failure;
* otherwise squared-norm objective terms become one rotated second-order
  cone ``t >= ||e||^2`` and ``conelp`` is used;
* each LMI with a declared ``basis`` is restricted by congruence (after
  checking the declaration holds for every coefficient matrix);
* decision directions that touch neither objective nor constraints are
  removed (CVXOPT requires full column rank), and are reported as zero.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np
import scipy.sparse as sp

from .expr import Affine
from .program import ConicProgram, LMI

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"
MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class SolverSettings:
    feastol: float = 1e-8
    abstol: float = 1e-8
    reltol: float = 1e-8
    max_iters: int = 100
    refinement: int = 1
    # relative singular-value cutoff for dropping inert decision directions
    compress_tol: float = 1e-9
    # relative residual allowed when verifying a declared LMI basis
    basis_tol: float = 1e-6
    # a stalled solve is retried with tolerances 10x looser, up to this value
    fallback_tol: float = 1e-7
    # programs without LMIs go to the QP solver (quadratic objective kept as is)
    direct_qp: bool = True

    def loosened(self) -> Optional["SolverSettings"]:
        tol = 10 * max(self.feastol, self.abstol, self.reltol)
        if tol > self.fallback_tol * (1 + 1e-9):
            return None
        return replace(self, feastol=max(self.feastol, tol), abstol=max(self.abstol, tol),
                       reltol=max(self.reltol, tol))

    def cvxopt_options(self) -> dict:
        return {"show_progress": False, "feastol": self.feastol, "abstol": self.abstol,
                "reltol": self.reltol, "maxiters": self.max_iters, "refinement": self.refinement}


@dataclass
class SolveResult:
    status: str
    values: Dict[str, np.ndarray] = field(default_factory=dict)
    objective: Optional[float] = None
    solve_time: float = 0.0
    iterations: int = 0
    x: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def value(self, expr: Affine) -> np.ndarray:
        if self.x is None:
            raise ValueError(f"no primal point (status {self.status})")
        return expr.value(self.x)


def _cvx(A) -> "cvxopt.matrix":
    import cvxopt
    if sp.issparse(A):
        A = sp.coo_matrix(A)
        return cvxopt.spmatrix(A.data.tolist(), A.row.tolist(), A.col.tolist(), size=A.shape)
    return cvxopt.matrix(np.asarray(A, dtype=float))


def _lmi_blocks(lmi: LMI, n: int, tol: float):
    """Return ``(G, h)`` rows for one LMI in CVXOPT's column-major layout."""
    k = lmi.dim
    F0 = lmi.expr.const
    coef = sp.csc_matrix(lmi.expr.coef if lmi.expr.n_vars == n else
                         sp.csr_matrix((lmi.expr.coef.data, lmi.expr.coef.indices, lmi.expr.coef.indptr),
                                       shape=(lmi.expr.size, n)))
    B = lmi.basis
    if B is None:
        G = -coef.tocsr()
        # C-order flattening of a symmetric matrix equals column-major order
        return G, F0.reshape(-1)
    kb = B.shape[1]
    cols = []

    def reduce(Fi, label):
        FB = Fi @ B
        full = np.linalg.norm(Fi.toarray() if sp.issparse(Fi) else Fi) ** 2
        kept = np.linalg.norm(FB) ** 2
        if full - kept > (tol ** 2) * max(full, 1e-300) + 1e-24:
            raise ValueError(f"LMI {lmi.name!r}: declared basis does not contain the range of {label}")
        return B.T @ FB

    h = reduce(F0, "the constant term").reshape(-1)
    G = np.zeros((kb * kb, n))
    for i in range(n):
        start, stop = coef.indptr[i], coef.indptr[i + 1]
        if start == stop:
            continue
        r = coef.indices[start:stop]
        Fi = sp.csr_matrix((coef.data[start:stop], (r // k, r % k)), shape=(k, k))
        if Fi.nnz > k * k // 8:
            Fi = Fi.toarray()
        G[:, i] = -reduce(Fi, f"variable column {i}").reshape(-1)
    return G, h


def _stack(blocks: List) -> sp.csr_matrix:
    return sp.vstack([sp.csr_matrix(b) for b in blocks], format="csr")


def _active_directions(S: sp.csr_matrix, tol: float) -> np.ndarray:
    """Orthonormal basis of the row space of ``S`` (relative cutoff ``tol``).

    A dense SVD is used when it fits comfortably in memory; otherwise the
    Gram matrix is eigendecomposed, whose rounding floor (about eps in
    squared terms) caps how small ``tol`` can effectively be.
    """
    n = S.shape[1]
    if S.shape[0] * n <= 4_000_000:
        _, s, Vt = np.linalg.svd(S.toarray(), full_matrices=False)
        return Vt[s > tol * max(s.max(initial=0.0), 1e-300)].T
    gram = (S.T @ S).toarray()
    w, V = np.linalg.eigh(gram)
    floor = max(tol ** 2, 1e3 * np.finfo(float).eps)
    return V[:, w > floor * max(w.max(initial=0.0), 1e-300)]


def solve(program: ConicProgram, settings: Optional[SolverSettings] = None) -> SolveResult:
    """Solve ``program``; stalled solves fall back to looser tolerances (see ``fallback_tol``)."""
    settings = settings or SolverSettings()
    if settings.direct_qp and program.objective_squares and not program.lmi_constraints:
        result = _solve_once(program, settings, quadratic=True)
        if result.ok:
            return result
        # the QP solver has no infeasibility certificates; classify with the cone LP
        spent = result.solve_time
        result = _solve_once(program, settings)
        result.solve_time += spent
        result.info["qp_status"] = "not optimal"
    else:
        result = _solve_once(program, settings)
    retries = []
    while result.status in (MAX_ITERATIONS, NUMERICAL_FAILURE):
        looser = settings.loosened()
        if looser is None:
            break
        retries.append({"feastol": settings.feastol, "status": result.status})
        spent = result.solve_time
        settings = looser
        result = _solve_once(program, settings)
        result.solve_time += spent
    if retries:
        result.info["retries"] = retries
    return result


def _solve_once(program: ConicProgram, settings: SolverSettings, quadratic: bool = False) -> SolveResult:
    """One CVXOPT call; ``quadratic`` passes ``sum ||e||^2`` as the QP matrix instead of a cone."""
    import cvxopt
    n = program.n_vars
    has_sq = bool(program.objective_squares)
    epigraph = has_sq and not quadratic
    n_all = n + (1 if epigraph else 0)

    def pad(expr: Affine) -> sp.csr_matrix:
        c = expr.coef
        return sp.csr_matrix((c.data, c.indices, c.indptr), shape=(c.shape[0], n_all))

    c = np.zeros(n_all)
    c[:n] = np.asarray(pad(program.objective_linear.reshape(1)).toarray()).reshape(-1)[:n]
    if epigraph:
        c[n] = 1.0

    G_parts, h_parts = [], []
    dims = {"l": 0, "q": [], "s": []}
    for _, e in program.inequalities:
        G_parts.append(-pad(e))
        h_parts.append(e.const.reshape(-1))
        dims["l"] += e.size
    for _, e in program.quad_constraints:
        G_parts.append(sp.vstack([sp.csr_matrix((1, n_all)), -pad(e)]))
        h_parts.append(np.concatenate([[1.0], e.const.reshape(-1)]))
        dims["q"].append(e.size + 1)
    E = sp.csr_matrix((0, n_all))
    if has_sq:
        E = _stack([pad(s) for s in program.objective_squares])
        e_const = np.concatenate([s.const.reshape(-1) for s in program.objective_squares])
    if epigraph:
        # t >= ||e||^2  <=>  ||(2e, t - 1)|| <= t + 1
        e_all = E
        t_row = sp.csr_matrix(([1.0], ([0], [n])), shape=(1, n_all))
        G_parts.append(sp.vstack([-t_row, -2.0 * e_all, -t_row]))
        h_parts.append(np.concatenate([[1.0], 2.0 * e_const, [-1.0]]))
        dims["q"].append(e_all.shape[0] + 2)
    for lmi in program.lmi_constraints:
        G, h = _lmi_blocks(lmi, n_all, settings.basis_tol)
        G_parts.append(G)
        h_parts.append(h)
        dims["s"].append(lmi.dim if lmi.basis is None else lmi.basis.shape[1])
    G = _stack(G_parts) if G_parts else sp.csr_matrix((0, n_all))
    h = np.concatenate(h_parts) if h_parts else np.zeros(0)

    if program.equalities:
        A = _stack([pad(e) for _, e in program.equalities]).toarray()
        b = -np.concatenate([e.const.reshape(-1) for _, e in program.equalities])
    else:
        A, b = np.zeros((0, n_all)), np.zeros(0)

    # drop inert decision directions
    T = _active_directions(sp.vstack([sp.csr_matrix(c.reshape(1, -1)), E if quadratic else
                                      sp.csr_matrix((0, n_all)), G, sp.csr_matrix(A)], format="csr"),
                           settings.compress_tol)
    info = {"n_vars": n_all, "n_reduced": int(T.shape[1]), "dims": dims}
    if T.shape[1] == 0:
        x = np.zeros(n_all)
        feasible = (np.all(h[:dims["l"]] >= -settings.feastol) if dims["l"] else True)
        return _finish(program, x, OPTIMAL if feasible else INFEASIBLE, 0.0, 0, info)
    Gz = G @ T
    cz = T.T @ c
    Az = A @ T
    if Az.shape[0]:
        U, s, Vt = np.linalg.svd(Az, full_matrices=False)
        r = int(np.sum(s > 1e-12 * max(s.max(initial=0), 1e-300)))
        resid = b - U[:, :r] @ (U[:, :r].T @ b)
        if np.linalg.norm(resid) > 1e-9 * (1 + np.linalg.norm(b)):
            return SolveResult(INFEASIBLE, info=dict(info, reason="inconsistent equalities"))
        Az = s[:r, None] * Vt[:r]
        b = U[:, :r].T @ b

    args = dict(G=_cvx(Gz), h=_cvx(h.reshape(-1, 1)), dims=dims, options=settings.cvxopt_options())
    if quadratic:
        Ez = (E @ T)
        args.update(P=_cvx(2.0 * Ez.T @ Ez), q=_cvx((cz + 2.0 * Ez.T @ e_const).reshape(-1, 1)))
    else:
        args.update(c=_cvx(cz.reshape(-1, 1)))
    if Az.shape[0]:
        args.update(A=_cvx(Az), b=_cvx(b.reshape(-1, 1)))
    t0 = time.perf_counter()
    try:
        sol = (cvxopt.solvers.coneqp if quadratic else cvxopt.solvers.conelp)(**args)
    except (ArithmeticError, ValueError) as exc:
        return SolveResult(NUMERICAL_FAILURE, solve_time=time.perf_counter() - t0,
                           info=dict(info, reason=str(exc)))
    elapsed = time.perf_counter() - t0
    iters = int(sol.get("iterations", 0))
    info.update({k: sol.get(k) for k in ("gap", "relative gap", "primal infeasibility",
                                         "dual infeasibility", "primal objective")})
    raw = sol["status"]
    if raw == "optimal":
        status = OPTIMAL
    elif raw == "primal infeasible":
        status = INFEASIBLE
    elif raw == "dual infeasible":
        status = UNBOUNDED
    else:
        status = MAX_ITERATIONS if iters >= settings.max_iters else NUMERICAL_FAILURE
    x = T @ np.asarray(sol["x"]).reshape(-1) if sol.get("x") is not None else None
    return _finish(program, x, status, elapsed, iters, info)


def _finish(program, x, status, elapsed, iters, info) -> SolveResult:
    if status != OPTIMAL or x is None:
        return SolveResult(status, solve_time=elapsed, iterations=iters, info=info)
    x = x[:program.n_vars]
    return SolveResult(status, values=program.unpack(x), objective=program.objective_value(x),
                       solve_time=elapsed, iterations=iters, x=x, info=info)
