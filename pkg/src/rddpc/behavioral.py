"""Hankel-matrix behavioural models and the predictor matrices built from them.

Row ordering of the stacked data matrix is ``Phi = col(Up, Uf, Yp)``, so a
data vector is ``col(u_p, u_f, y_p)`` with time-major blocks inside each part.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .lti_sim import Trajectory

EPS = np.finfo(float).eps
# Relative cutoff for quantities derived from data through a projector.
# Rounding in I - pinv(Phi) Phi leaves spurious singular values near
# ||Yf|| * 1e-13, well above the machine-epsilon cutoff used for raw data.
DERIVED_RTOL = 1e-10


def pinv_cutoff(s: np.ndarray, shape: Tuple[int, int]) -> float:
    """Singular-value cutoff ``max(shape) * s_max * eps`` for raw data matrices."""
    if s.size == 0:
        return 0.0
    return max(shape) * s[0] * EPS


def pinv(A: np.ndarray, rtol: Optional[float] = None) -> np.ndarray:
    """SVD pseudo-inverse with the data cutoff, or ``rtol * s_max`` if given."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return np.zeros(A.shape[::-1])
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    tol = pinv_cutoff(s, A.shape) if rtol is None else rtol * (s[0] if s.size else 0.0)
    keep = s > tol
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def numerical_rank(A: np.ndarray, rtol: Optional[float] = None, scale: Optional[float] = None) -> int:
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if rtol is None:
        return int(np.sum(s > pinv_cutoff(s, A.shape)))
    ref = s[0] if scale is None else scale
    return int(np.sum(s > rtol * ref))


def row_space_basis(A: np.ndarray, rtol: float, scale: Optional[float] = None) -> np.ndarray:
    """Orthonormal basis (as columns) of the row space of ``A``."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return np.zeros((A.shape[1], 0))
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    ref = (s[0] if s.size else 0.0) if scale is None else scale
    return Vt[s > rtol * ref].T


def projector_range_basis(P: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the range of an orthogonal projector."""
    w, V = np.linalg.eigh((P + P.T) / 2)
    return V[:, w > 0.5]


def build_hankel(seq, depth: int) -> np.ndarray:
    """Block Hankel matrix of ``depth`` block rows; column ``j`` is ``col(x(j), ..., x(j+depth-1))``."""
    x = np.asarray(seq, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if depth < 1:
        raise ValueError("depth must be positive")
    if n < depth:
        raise ValueError(f"sequence length {n} is shorter than depth {depth}")
    cols = n - depth + 1
    H = np.empty((d * depth, cols))
    for i in range(depth):
        H[i * d:(i + 1) * d] = x[i:i + cols].T
    return H


def is_persistently_exciting(seq, order: int) -> bool:
    """True iff the depth-``order`` Hankel matrix of ``seq`` has full row rank."""
    x = np.asarray(seq, dtype=float)
    if (x.shape[0] if x.ndim else 0) < order:
        return False
    H = build_hankel(x, order)
    if H.shape[0] > H.shape[1]:
        return False
    return numerical_rank(H) == H.shape[0]


@dataclass(frozen=True)
class BehavioralData:
    """Partitioned Hankel data and the predictor matrices derived from it."""

    Up: np.ndarray
    Uf: np.ndarray
    Yp: np.ndarray
    Yf: np.ndarray
    Phi: np.ndarray
    PhiPinv: np.ndarray
    PhiPerp: np.ndarray
    M: np.ndarray
    Mf: np.ndarray
    Mp: np.ndarray
    n_u: int
    n_y: int
    L_p: int
    L_f: int
    N: int

    @property
    def L(self) -> int:
        return self.L_p + self.L_f

    @property
    def n_cols(self) -> int:
        return self.Phi.shape[1]

    @property
    def dims(self) -> dict:
        return dict(n_u=self.n_u, n_y=self.n_y, L_p=self.L_p, L_f=self.L_f, N=self.N, N_bar=self.n_cols)

    @cached_property
    def predictor(self) -> np.ndarray:
        """``Yf @ pinv(Phi)``."""
        return self.Yf @ self.PhiPinv

    @cached_property
    def perp_basis(self) -> np.ndarray:
        """Orthonormal basis of range(PhiPerp); PhiPerp = B B^T."""
        return projector_range_basis(self.PhiPerp)

    @cached_property
    def M_rank(self) -> int:
        return numerical_rank(self.M, DERIVED_RTOL, scale=max(np.linalg.norm(self.Yf, 2), EPS))

    @cached_property
    def M_pinv(self) -> np.ndarray:
        return pinv(self.M, DERIVED_RTOL * max(np.linalg.norm(self.Yf, 2), EPS)
                    / max(np.linalg.norm(self.M, 2), EPS))

    def nominal(self, u_p, u_f, y_p) -> np.ndarray:
        return spc_predict(self, u_p, u_f, y_p)

    def past_vector(self, u_p, y_p) -> np.ndarray:
        return np.concatenate([_vec(u_p, self.n_u * self.L_p, "u_p"), _vec(y_p, self.n_y * self.L_p, "y_p")])


def _vec(v, n: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != n:
        raise ValueError(f"{name} has length {v.size}, expected {n}")
    return v


def split_predictor(P: np.ndarray, n_u: int, L_p: int, L_f: int) -> Tuple[np.ndarray, np.ndarray]:
    """Split columns of a ``col(u_p, u_f, y_p)`` map into the ``u_f`` block and the ``col(u_p, y_p)`` block."""
    a, b = n_u * L_p, n_u * (L_p + L_f)
    return P[:, a:b], np.hstack([P[:, :a], P[:, b:]])


def _as_io(dataset) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(dataset, Trajectory):
        return dataset.inputs, dataset.outputs
    u, y = dataset
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    return u.reshape(len(u), -1), y.reshape(len(y), -1)


def partition(dataset: Union[Trajectory, Tuple[np.ndarray, np.ndarray]], L_p: int, L_f: int,
              n_x: Optional[int] = None) -> BehavioralData:
    """Build depth ``L_p + L_f`` Hankel data from ``dataset`` (a Trajectory or ``(u, y)``)."""
    u, y = _as_io(dataset)
    if len(u) != len(y):
        raise ValueError("input and output records differ in length")
    L = L_p + L_f
    N = len(u)
    if N < L:
        raise ValueError(f"need at least {L} samples, got {N}")
    order = L + (n_x or 0)
    if N >= order and not is_persistently_exciting(u, order):
        what = f"order L + n_x = {order}" if n_x else f"order L = {order} (n_x unknown)"
        warnings.warn(f"input data is not persistently exciting of {what}", stacklevel=2)
    n_u, n_y = u.shape[1], y.shape[1]
    Ud = build_hankel(u, L)
    Yd = build_hankel(y, L)
    Up, Uf = Ud[:n_u * L_p], Ud[n_u * L_p:]
    Yp, Yf = Yd[:n_y * L_p], Yd[n_y * L_p:]
    Phi = np.vstack([Up, Uf, Yp])
    PhiPinv = pinv(Phi)
    PhiPerp = np.eye(Phi.shape[1]) - PhiPinv @ Phi
    PhiPerp = (PhiPerp + PhiPerp.T) / 2
    M = Yf @ PhiPerp
    Mf, Mp = split_predictor(Yf @ PhiPinv, n_u, L_p, L_f)
    return BehavioralData(Up, Uf, Yp, Yf, Phi, PhiPinv, PhiPerp, M, Mf, Mp, n_u, n_y, L_p, L_f, N)


@dataclass(frozen=True)
class ReducedData:
    """SVD-compressed twin of :class:`BehavioralData`.

    With ``col(Phi, Yf) = W S V1^T`` and ``W~ = W S`` split into ``W1t``
    (data rows) and ``W2t`` (future-output rows), every quantity keeps
    ``(n_u + n_y) L`` columns regardless of the data length.
    """

    W1t: np.ndarray
    W2t: np.ndarray
    PhiPerpT: np.ndarray
    Mt: np.ndarray
    MfT: np.ndarray
    MpT: np.ndarray
    V1: Optional[np.ndarray]
    n_u: int
    n_y: int
    L_p: int
    L_f: int
    yf_norm: float

    @property
    def n_cols(self) -> int:
        return self.W1t.shape[1]

    @cached_property
    def perp_basis(self) -> np.ndarray:
        return projector_range_basis(self.PhiPerpT)

    @cached_property
    def compact_basis(self) -> np.ndarray:
        """Orthonormal basis ``T`` of the row space of ``Mt``.

        ``Mt w = (Mt T)(T^T w)`` and ``||PhiPerpT w||^2 >= ||T^T w||^2`` with
        equality on range(T), so ``{Mt w : ||PhiPerpT w||^2 <= lam}`` equals
        ``{(Mt T) z : ||z||^2 <= lam}``.
        """
        return row_space_basis(self.Mt, DERIVED_RTOL, scale=max(self.yf_norm, EPS))

    @cached_property
    def M_compact(self) -> np.ndarray:
        return self.Mt @ self.compact_basis

    def predictor(self) -> np.ndarray:
        return np.hstack([self.MpT[:, :self.n_u * self.L_p], self.MfT,
                          self.MpT[:, self.n_u * self.L_p:]])

    def nominal(self, u_p, u_f, y_p) -> np.ndarray:
        return (self.MfT @ _vec(u_f, self.n_u * self.L_f, "u_f")
                + self.MpT @ self.past_vector(u_p, y_p))

    def past_vector(self, u_p, y_p) -> np.ndarray:
        return np.concatenate([_vec(u_p, self.n_u * self.L_p, "u_p"), _vec(y_p, self.n_y * self.L_p, "y_p")])


def svd_reduce(data: BehavioralData, keep_v1: bool = True) -> ReducedData:
    """Compress ``data`` via a thin SVD of ``col(Phi, Yf)``."""
    stacked = np.vstack([data.Phi, data.Yf])
    try:
        W, s, Vt = np.linalg.svd(stacked, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"SVD of stacked Hankel data failed: {exc}") from exc
    r = (data.n_u + data.n_y) * data.L
    if s.size < r:
        raise ValueError(f"data has {s.size} columns, fewer than (n_u + n_y) L = {r}")
    Wt = W[:, :r] * s[:r]
    n_phi = data.Phi.shape[0]
    W1t, W2t = Wt[:n_phi], Wt[n_phi:]
    PhiPerpT = np.eye(r) - pinv(W1t) @ W1t
    PhiPerpT = (PhiPerpT + PhiPerpT.T) / 2
    Mt = W2t @ PhiPerpT
    MfT, MpT = split_predictor(W2t @ pinv(W1t), data.n_u, data.L_p, data.L_f)
    V1 = Vt[:r].T if keep_v1 else None
    return ReducedData(W1t, W2t, PhiPerpT, Mt, MfT, MpT, V1, data.n_u, data.n_y, data.L_p, data.L_f,
                       float(np.linalg.norm(data.Yf, 2)))


def spc_predict(data: Union[BehavioralData, ReducedData], u_p, u_f, y_p) -> np.ndarray:
    """Minimum-norm subspace prediction ``Yf pinv(Phi) col(u_p, u_f, y_p)``."""
    if isinstance(data, ReducedData):
        return data.nominal(u_p, u_f, y_p)
    z = np.concatenate([_vec(u_p, data.n_u * data.L_p, "u_p"), _vec(u_f, data.n_u * data.L_f, "u_f"),
                        _vec(y_p, data.n_y * data.L_p, "y_p")])
    return data.predictor @ z


def save_matrix_csv(path: Union[str, Path], A: np.ndarray) -> Path:
    """Row-major CSV dump with a ``# shape rows cols`` header line."""
    path = Path(path)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    np.savetxt(path, A, delimiter=",", header=f"shape {A.shape[0]} {A.shape[1]}", fmt="%.17g")
    return path


def load_matrix_csv(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
    rows, cols = int(header[1]), int(header[2])
    return np.loadtxt(path, delimiter=",", ndmin=2).reshape(rows, cols)
