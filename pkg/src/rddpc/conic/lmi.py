"""Bordered LMI builders: Schur-complement blocks and S-lemma robust constraints."""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla

from .expr import Affine, as_affine, bmat
from .program import ConicProgram, LMI


def check_pd(W: np.ndarray, name: str = "weight") -> np.ndarray:
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[0] != W.shape[1] or not np.allclose(W, W.T, atol=1e-12 * (1 + np.abs(W).max())):
        raise ValueError(f"{name} must be a symmetric matrix")
    try:
        np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None
    return W


def inverse_pd(W: np.ndarray, name: str = "weight") -> np.ndarray:
    """Inverse of a symmetric positive definite matrix through its Cholesky factor."""
    W = check_pd(W, name)
    c = sla.cho_factor(W, lower=True)
    inv = sla.cho_solve(c, np.eye(W.shape[0]))
    return (inv + inv.T) / 2


def schur_lmi(head, cross, inverse_weight: np.ndarray) -> Affine:
    """``[[head, cross^T], [cross, W^{-1}]]``, PSD iff ``head - cross^T W cross`` is PSD.

    ``inverse_weight`` is ``W^{-1}`` itself (e.g. ``Q^{-1}``); it must be
    positive definite.
    """
    Winv = check_pd(inverse_weight, "inverse weight")
    head = as_affine(head)
    cross = as_affine(cross)
    if len(head.shape) < 2:
        head = head.reshape(1, 1)
    if len(cross.shape) < 2:
        cross = cross.reshape(cross.size, 1) if head.shape[0] == 1 else cross.reshape(1, cross.size)
    if cross.shape[0] != Winv.shape[0] or cross.shape[1] != head.shape[0]:
        raise ValueError(f"cross block {cross.shape} incompatible with head {head.shape} / weight {Winv.shape}")
    return bmat([[head, cross.T], [cross, Winv]])


def bordered_basis(*parts) -> np.ndarray:
    """Block-diagonal congruence basis; integers stand for identity blocks."""
    mats = [np.eye(p) if isinstance(p, (int, np.integer)) else np.asarray(p, dtype=float) for p in parts]
    return sla.block_diag(*mats)


def slemma_pair(program: ConicProgram, uncertainty: Tuple[np.ndarray, float], center, cross,
                name: str = "mu", perp_basis: Optional[np.ndarray] = None) -> Tuple[LMI, Affine]:
    """Robust unit-ball constraint via the S-lemma.

    Encodes ``||center + cross w||^2 <= 1`` for all ``w`` with
    ``w^T P w <= lam`` as::

        [[1 - mu lam, 0,      center^T],
         [0,          mu P,   cross^T ],
         [center,     cross,  I       ]]  >= 0,   mu >= 0.

    ``perp_basis`` (orthonormal, spanning range(P)) lets the solver drop the
    constant nullspace; it must also contain the row space of ``cross``.
    """
    P, lam = uncertainty
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if lam < 0:
        raise ValueError("uncertainty size must be nonnegative")
    center = as_affine(center).ravel()
    cross = as_affine(cross)
    if len(cross.shape) < 2:
        cross = cross.reshape(center.size, -1)
    m, p = center.size, P.shape[0]
    mu = program.variable(name, nonneg=True)
    head = bmat([[1.0 - mu * lam, np.zeros((1, p))], [np.zeros((p, 1)), mu * P]])
    expr = schur_lmi(head, bmat([[center.reshape(m, 1), cross]]), np.eye(m))
    basis = None if perp_basis is None else bordered_basis(1, perp_basis, m)
    return program.add_lmi(expr, name=f"robust[{name}]", basis=basis), mu
