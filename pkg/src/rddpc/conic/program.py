"""Solver-agnostic conic program: linear plus sum-of-squares objective,
affine equalities and inequalities, unit-ball quadratic constraints and LMIs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .expr import Affine, as_affine


@dataclass
class VariableInfo:
    name: str
    shape: Tuple[int, ...]
    offset: int
    mask: np.ndarray  # bool array of ``shape``; False entries are structural zeros
    nonneg: bool = False

    @property
    def n_free(self) -> int:
        return int(self.mask.sum())

    def unpack(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.mask] = x[self.offset:self.offset + self.n_free]
        return out


@dataclass
class LMI:
    """Constraint ``expr`` PSD.

    ``basis`` optionally declares an orthonormal ``B`` with
    ``F(x) = B B^T F(x) B B^T`` for every ``x``; the solver then works with
    ``B^T F(x) B``, which removes a constant nullspace that would otherwise
    leave the LMI without a strictly feasible point.
    """

    name: str
    expr: Affine
    basis: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.expr.shape[0]


@dataclass
class ConicProgram:
    variables: List[VariableInfo] = field(default_factory=list)
    objective_linear: Affine = field(default_factory=lambda: as_affine(0.0))
    objective_squares: List[Affine] = field(default_factory=list)
    equalities: List[Tuple[str, Affine]] = field(default_factory=list)
    inequalities: List[Tuple[str, Affine]] = field(default_factory=list)
    quad_constraints: List[Tuple[str, Affine]] = field(default_factory=list)
    lmi_constraints: List[LMI] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return sum(v.n_free for v in self.variables)

    def variable(self, name: str, shape=(), nonneg: bool = False, mask: Optional[np.ndarray] = None) -> Affine:
        """Declare a variable; entries where ``mask`` is False are fixed at zero."""
        if any(v.name == name for v in self.variables):
            raise ValueError(f"variable {name!r} already declared")
        shape = (int(shape),) if np.isscalar(shape) else tuple(int(d) for d in shape)
        mask = np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if mask.shape != shape:
            raise ValueError(f"mask shape {mask.shape} != variable shape {shape}")
        info = VariableInfo(name, shape, self.n_vars, mask, nonneg)
        self.variables.append(info)
        n = self.n_vars
        rows = np.flatnonzero(mask.reshape(-1))
        cols = info.offset + np.arange(info.n_free)
        coef = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(mask.size, n))
        expr = Affine(np.zeros(shape), coef)
        if nonneg:
            self.inequalities.append((f"{name} >= 0", expr[mask] if mask.size > 1 else expr.ravel()))
        return expr

    def var_info(self, name: str) -> VariableInfo:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def minimize(self, linear=0.0, squares=()) -> "ConicProgram":
        """Objective ``linear + sum_k ||squares[k]||^2``."""
        linear = as_affine(linear)
        if linear.size != 1:
            raise ValueError("linear objective must be scalar")
        self.objective_linear = linear.reshape(())
        self.objective_squares = [as_affine(s).ravel() for s in squares]
        return self

    def add_equality(self, expr, name: str = "eq") -> None:
        self.equalities.append((name, as_affine(expr).ravel()))

    def add_nonneg(self, expr, name: str = "ineq") -> None:
        self.inequalities.append((name, as_affine(expr).ravel()))

    def add_unit_ball(self, expr, name: str = "quad") -> None:
        """Constraint ``||expr||^2 <= 1``."""
        self.quad_constraints.append((name, as_affine(expr).ravel()))

    def add_lmi(self, expr: Affine, name: str = "lmi", basis: Optional[np.ndarray] = None) -> LMI:
        expr = as_affine(expr)
        if len(expr.shape) != 2 or expr.shape[0] != expr.shape[1]:
            raise ValueError("LMI expression must be square")
        asym = (expr - expr.T)
        if np.abs(asym.const).max(initial=0) > 1e-9 * (1 + np.abs(expr.const).max(initial=0)) or (
                asym.coef.nnz and np.abs(asym.coef).max() > 1e-9 * (1 + np.abs(expr.coef).max())):
            raise ValueError(f"LMI {name!r} is not symmetric")
        lmi = LMI(name, expr, basis)
        self.lmi_constraints.append(lmi)
        return lmi

    # -- evaluation -------------------------------------------------------
    def unpack(self, x: np.ndarray) -> Dict[str, np.ndarray]:
        return {v.name: v.unpack(x) for v in self.variables}

    def objective_value(self, x: np.ndarray) -> float:
        val = float(self.objective_linear.value(x))
        return val + sum(float(np.sum(s.value(x) ** 2)) for s in self.objective_squares)

    def lmi_min_eigs(self, x: np.ndarray) -> List[float]:
        out = []
        for lmi in self.lmi_constraints:
            F = lmi.expr.value(x)
            out.append(float(np.linalg.eigvalsh((F + F.T) / 2)[0]))
        return out

    def dump(self) -> str:
        """Human-readable variable table and constraint list."""
        lines = [f"ConicProgram: {self.n_vars} scalar decision variables"]
        lines.append("variables:")
        for v in self.variables:
            flags = []
            if v.nonneg:
                flags.append("nonneg")
            if not v.mask.all():
                flags.append(f"structured ({v.n_free}/{v.mask.size} free)")
            lines.append(f"  {v.name:<12} shape={v.shape!s:<10} offset={v.offset:<5} {' '.join(flags)}")
        lines.append(f"objective: linear + {len(self.objective_squares)} squared-norm term(s)")
        for title, items in (("equalities", self.equalities), ("inequalities (>= 0)", self.inequalities),
                             ("quadratic (||.||^2 <= 1)", self.quad_constraints)):
            lines.append(f"{title}: {len(items)}")
            for name, e in items:
                lines.append(f"  {name}: {e.size} row(s)")
        lines.append(f"LMIs: {len(self.lmi_constraints)}")
        for lmi in self.lmi_constraints:
            red = "" if lmi.basis is None else f" (solved as {lmi.basis.shape[1]}x{lmi.basis.shape[1]})"
            lines.append(f"  {lmi.name}: {lmi.dim}x{lmi.dim}{red}")
        return "\n".join(lines)
