"""Affine expressions over a flat decision vector.

An :class:`Affine` of shape ``s`` stores ``const`` (an array of shape ``s``)
and a sparse ``coef`` with one row per entry (C order), so that its value at
``x`` is ``const + (coef @ x).reshape(s)``.
"""
from __future__ import annotations

from numbers import Number
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp


def _pad(coef: sp.csr_matrix, n: int) -> sp.csr_matrix:
    if coef.shape[1] == n:
        return coef
    if coef.shape[1] > n:
        raise ValueError("cannot shrink coefficient matrix")
    return sp.csr_matrix((coef.data, coef.indices, coef.indptr), shape=(coef.shape[0], n))


class Affine:
    __array_ufunc__ = None  # ndarray (op) Affine defers to the reflected method here

    def __init__(self, const: np.ndarray, coef: Optional[sp.spmatrix] = None, n_vars: int = 0):
        self.const = np.asarray(const, dtype=float)
        size = self.const.size
        if coef is None:
            coef = sp.csr_matrix((size, n_vars))
        coef = sp.csr_matrix(coef)
        if coef.shape[0] != size:
            raise ValueError(f"coefficient rows {coef.shape[0]} != entries {size}")
        self.coef = coef

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.const.shape

    @property
    def size(self) -> int:
        return self.const.size

    @property
    def n_vars(self) -> int:
        return self.coef.shape[1]

    @property
    def is_constant(self) -> bool:
        return self.coef.nnz == 0

    def __repr__(self) -> str:
        return f"Affine(shape={self.shape}, n_vars={self.n_vars}, nnz={self.coef.nnz})"

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        return self.const + (_pad(self.coef, x.size) @ x).reshape(self.shape)

    # -- structural ops ---------------------------------------------------
    def reshape(self, *shape) -> "Affine":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Affine(self.const.reshape(shape), self.coef)

    def ravel(self) -> "Affine":
        return self.reshape(self.size)

    def _take(self, flat_index: np.ndarray, shape) -> "Affine":
        flat_index = np.asarray(flat_index, dtype=int).reshape(-1)
        return Affine(self.const.reshape(-1)[flat_index].reshape(shape), self.coef[flat_index])

    def __getitem__(self, key) -> "Affine":
        idx = np.arange(self.size).reshape(self.shape)[key]
        idx = np.asarray(idx)
        return self._take(idx.reshape(-1), idx.shape)

    @property
    def T(self) -> "Affine":
        if len(self.shape) < 2:
            return self
        idx = np.arange(self.size).reshape(self.shape).T
        return self._take(idx.reshape(-1), idx.shape)

    # -- arithmetic -------------------------------------------------------
    def __neg__(self) -> "Affine":
        return Affine(-self.const, -self.coef)

    def __add__(self, other) -> "Affine":
        if isinstance(other, Affine):
            if other.shape != self.shape:
                if other.size == 1 and self.size != 1:
                    other = broadcast(other, self.shape)
                elif self.size == 1 and other.size != 1:
                    return broadcast(self, other.shape) + other
                else:
                    raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
            n = max(self.n_vars, other.n_vars)
            return Affine(self.const + other.const, _pad(self.coef, n) + _pad(other.coef, n))
        other = np.asarray(other, dtype=float)
        if other.shape != self.shape and other.size != 1:
            if self.size == 1:
                return broadcast(self, other.shape) + other
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        return Affine(self.const + other, self.coef)

    __radd__ = __add__

    def __sub__(self, other) -> "Affine":
        return self + (-other)

    def __rsub__(self, other) -> "Affine":
        return (-self) + other

    def __mul__(self, other) -> "Affine":
        if isinstance(other, Affine):
            if other.is_constant:
                return self * other.const
            if self.is_constant:
                return other * self.const
            raise TypeError("product of two non-constant expressions is not affine")
        if isinstance(other, Number):
            return Affine(self.const * other, self.coef * float(other))
        other = np.asarray(other, dtype=float)
        if other.size == 1:
            return self * float(other.reshape(-1)[0])
        if self.size == 1:
            # scalar expression times a constant array
            col = sp.csr_matrix(other.reshape(-1, 1))
            return Affine(self.const.reshape(()) * other, sp.kron(col, self.coef, format="csr"))
        if other.shape != self.shape:
            raise ValueError(f"elementwise shape mismatch {self.shape} vs {other.shape}")
        return Affine(self.const * other, sp.diags(other.reshape(-1)) @ self.coef)

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "Affine":
        return self * (1.0 / float(other))

    def __matmul__(self, other) -> "Affine":
        if isinstance(other, Affine):
            if other.is_constant:
                return self @ other.const
            raise TypeError("Affine @ Affine is not affine")
        B = np.asarray(other, dtype=float)
        if self.const.ndim == 1:
            # row vector times matrix
            return (Affine(self.const.reshape(1, -1), self.coef) @ B).reshape(B.shape[1:] if B.ndim > 1 else ())
        p, q = self.shape
        if B.ndim == 1:
            return (self @ B.reshape(-1, 1)).reshape(p)
        if B.shape[0] != q:
            raise ValueError(f"matmul shape mismatch {self.shape} @ {B.shape}")
        op = sp.kron(sp.eye(p), sp.csr_matrix(B.T), format="csr")
        return Affine(self.const @ B, op @ self.coef)

    def __rmatmul__(self, other) -> "Affine":
        A = np.asarray(other, dtype=float)
        if self.const.ndim == 1:
            if A.shape[-1] != self.shape[0]:
                raise ValueError(f"matmul shape mismatch {A.shape} @ {self.shape}")
            if A.ndim == 1:
                return Affine(A @ self.const, sp.csr_matrix(A.reshape(1, -1)) @ self.coef).reshape(())
            return Affine(A @ self.const, sp.csr_matrix(A) @ self.coef)
        p, q = self.shape
        if A.ndim == 1:
            return (A.reshape(1, -1) @ self).reshape(q)
        if A.shape[1] != p:
            raise ValueError(f"matmul shape mismatch {A.shape} @ {self.shape}")
        op = sp.kron(sp.csr_matrix(A), sp.eye(q), format="csr")
        return Affine(A @ self.const, op @ self.coef)


Operand = Union[Affine, np.ndarray, Number, None]


def constant(value) -> Affine:
    return Affine(np.asarray(value, dtype=float))


def as_affine(value) -> Affine:
    return value if isinstance(value, Affine) else constant(value)


def broadcast(expr: Affine, shape) -> Affine:
    if expr.size != 1:
        raise ValueError("only scalar expressions broadcast")
    return expr * np.ones(shape)


def _shape2(value: Operand) -> Optional[Tuple[int, int]]:
    if value is None:
        return None
    shape = value.shape if isinstance(value, Affine) else np.shape(value)
    if len(shape) == 0:
        return (1, 1)
    if len(shape) == 1:
        return (shape[0], 1)
    return shape


def bmat(blocks: Sequence[Sequence[Operand]]) -> Affine:
    """Block matrix from a nested list; ``None`` marks a zero block of inferred size."""
    n_rows = len(blocks)
    n_cols = len(blocks[0])
    heights = [None] * n_rows
    widths = [None] * n_cols
    for i, row in enumerate(blocks):
        if len(row) != n_cols:
            raise ValueError("ragged block rows")
        for j, blk in enumerate(row):
            s = _shape2(blk)
            if s is None:
                continue
            for arr, k, v in ((heights, i, s[0]), (widths, j, s[1])):
                if arr[k] is None:
                    arr[k] = v
                elif arr[k] != v:
                    raise ValueError(f"block ({i},{j}) has incompatible shape {s}")
    if None in heights or None in widths:
        raise ValueError("every block row and column needs at least one sized block")
    H, W = sum(heights), sum(widths)
    r_off = np.concatenate([[0], np.cumsum(heights)])
    c_off = np.concatenate([[0], np.cumsum(widths)])
    const = np.zeros((H, W))
    n = max((blk.n_vars for row in blocks for blk in row if isinstance(blk, Affine)), default=0)
    rows, parts = [], []
    for i, row in enumerate(blocks):
        for j, blk in enumerate(row):
            if blk is None:
                continue
            h, w = heights[i], widths[j]
            if isinstance(blk, Affine):
                const[r_off[i]:r_off[i] + h, c_off[j]:c_off[j] + w] = blk.const.reshape(h, w)
                if blk.coef.nnz:
                    target = ((r_off[i] + np.arange(h))[:, None] * W + c_off[j] + np.arange(w)[None, :]).reshape(-1)
                    rows.append(target)
                    parts.append(_pad(blk.coef, n))
            else:
                const[r_off[i]:r_off[i] + h, c_off[j]:c_off[j] + w] = np.asarray(blk, dtype=float).reshape(h, w)
    if not parts:
        return Affine(const, sp.csr_matrix((H * W, n)))
    stacked = sp.vstack(parts, format="coo")
    target = np.concatenate(rows)
    coef = sp.csr_matrix((stacked.data, (target[stacked.row], stacked.col)), shape=(H * W, n))
    return Affine(const, coef)


def hstack(items: Iterable[Operand]) -> Affine:
    items = [as_affine(v) if not isinstance(v, Affine) else v for v in items]
    items = [v.reshape(v.size, 1) if len(v.shape) < 2 else v for v in items]
    return bmat([items])


def vstack(items: Iterable[Operand]) -> Affine:
    items = [as_affine(v) if not isinstance(v, Affine) else v for v in items]
    flat = all(len(v.shape) <= 1 for v in items)
    out = bmat([[v.reshape(v.size, 1) if len(v.shape) < 2 else v] for v in items])
    return out.reshape(out.size) if flat else out

