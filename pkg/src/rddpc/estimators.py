"""scikit-learn style wrappers.

``fit(u, y)`` takes one recorded input/output trajectory (rows are time
steps) and builds the Hankel predictor. Controllers expose ``solve`` for the
full solution and ``predict`` for the first input of each row of past data.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .behavioral import partition, spc_predict, svd_reduce
from .conic import SolverSettings
from .controllers import ControlConfig, RobustSolution, solve_frddpc, solve_pbr, solve_rddpc, solve_spc


def _fit_arrays(u, y):
    u = check_array(np.asarray(u, dtype=float).reshape(len(u), -1), ensure_min_samples=2)
    y = check_array(np.asarray(y, dtype=float).reshape(len(y), -1), ensure_min_samples=2)
    if len(u) != len(y):
        raise ValueError("u and y must have the same number of samples")
    return u, y


class SubspacePredictor(RegressorMixin, BaseEstimator):
    """Multi-step output predictor ``Yf pinv(Phi)``; rows of ``X`` are ``col(u_p, u_f, y_p)``."""

    def __init__(self, L_p: int = 5, L_f: int = 5):
        self.L_p = L_p
        self.L_f = L_f

    def fit(self, u, y):
        u, y = _fit_arrays(u, y)
        self.data_ = partition((u, y), self.L_p, self.L_f)
        self.n_u_, self.n_y_ = u.shape[1], y.shape[1]
        self.n_features_in_ = self.data_.Phi.shape[0]
        return self

    def predict(self, X):
        check_is_fitted(self, "data_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.data_.predictor.T

    def windows(self, u, y):
        """Stack all ``(col(u_p, u_f, y_p), y_f)`` windows of a trajectory."""
        from .behavioral import build_hankel
        u, y = _fit_arrays(u, y)
        L = self.L_p + self.L_f
        U, Y = build_hankel(u, L), build_hankel(y, L)
        n_u, n_y = u.shape[1], y.shape[1]
        X = np.vstack([U, Y[:n_y * self.L_p]]).T
        return X, Y[n_y * self.L_p:].T


class _Controller(BaseEstimator):
    kind = ""

    def __init__(self, L_p: int = 5, L_f: int = 5, Q=None, R=None, y_ref=None, input_constraints=(),
                 output_constraints=(), lam: float = 0.0, form: str = "compact",
                 solver_settings: Optional[SolverSettings] = None):
        self.L_p = L_p
        self.L_f = L_f
        self.Q = Q
        self.R = R
        self.y_ref = y_ref
        self.input_constraints = input_constraints
        self.output_constraints = output_constraints
        self.lam = lam
        self.form = form
        self.solver_settings = solver_settings

    def fit(self, u, y):
        u, y = _fit_arrays(u, y)
        self.n_u_, self.n_y_ = u.shape[1], y.shape[1]
        self.data_ = partition((u, y), self.L_p, self.L_f)
        self.reduced_ = svd_reduce(self.data_, keep_v1=False)
        self.config_ = self.control_config()
        self.n_features_in_ = (self.n_u_ + self.n_y_) * self.L_p
        return self

    def control_config(self, y_ref=None) -> ControlConfig:
        """Problem settings from the current parameters (``y_ref`` overrides the stored one)."""
        Q = np.eye(self.n_y_) if self.Q is None else np.atleast_2d(self.Q)
        R = np.eye(self.n_u_) if self.R is None else np.atleast_2d(self.R)
        return ControlConfig(self.L_p, self.L_f, Q, R, y_ref=self.y_ref if y_ref is None else y_ref,
                             input_constraints=self.input_constraints,
                             output_constraints=self.output_constraints, lam=float(self.lam), form=self.form,
                             settings=self.solver_settings or SolverSettings())

    def _data(self):
        return self.data_ if self.form == "full" else self.reduced_

    def _solve(self, config, u_p, y_p) -> RobustSolution:
        raise NotImplementedError

    def solve(self, u_p, y_p, y_ref=None) -> RobustSolution:
        check_is_fitted(self, "config_")
        return self._solve(self.control_config(y_ref), u_p, y_p)

    def predict(self, X, y_ref=None):
        """First optimal input for each row ``col(u_p, y_p)`` of ``X``.

        Rows may carry the reference slice as extra trailing columns.
        """
        check_is_fitted(self, "config_")
        X = check_array(X)
        n_past = self.n_features_in_
        n_ref = self.n_y_ * self.L_f
        if X.shape[1] not in (n_past, n_past + n_ref):
            raise ValueError(f"expected {n_past} or {n_past + n_ref} features, got {X.shape[1]}")
        out = np.full((len(X), self.n_u_), np.nan)
        k = self.n_u_ * self.L_p
        for i, row in enumerate(X):
            ref = row[n_past:] if X.shape[1] > n_past else y_ref
            sol = self.solve(row[:k], row[k:n_past], ref)
            if sol.ok:
                out[i] = sol.first_input
        return out


class SPCController(_Controller):
    kind = "spc"

    def _solve(self, config, u_p, y_p):
        return solve_spc(self._data(), config, u_p, y_p)


class PBRController(_Controller):
    kind = "pbr"

    def __init__(self, L_p: int = 5, L_f: int = 5, Q=None, R=None, y_ref=None, input_constraints=(),
                 output_constraints=(), lam: float = 0.0, form: str = "compact",
                 solver_settings: Optional[SolverSettings] = None, mode: str = "constraint",
                 weight: Optional[float] = None):
        super().__init__(L_p, L_f, Q, R, y_ref, input_constraints, output_constraints, lam, form,
                         solver_settings)
        self.mode = mode
        self.weight = weight

    def _solve(self, config, u_p, y_p):
        return solve_pbr(self._data(), config, u_p, y_p, mode=self.mode, weight=self.weight)


class RobustDDPC(_Controller):
    kind = "rddpc"

    def _solve(self, config, u_p, y_p):
        if config.lam <= 0:
            sol = solve_spc(self._data(), config, u_p, y_p)
            sol.kind = self.kind
            return sol
        return solve_rddpc(self._data(), config, u_p, y_p)


class FeedbackRobustDDPC(_Controller):
    kind = "frddpc"

    def _solve(self, config, u_p, y_p):
        if config.lam <= 0:
            sol = solve_spc(self._data(), config, u_p, y_p)
            sol.kind = self.kind
            if sol.ok:
                sol.K = np.zeros((config.n_u * config.L_f, config.n_y * config.L_f))
            return sol
        return solve_frddpc(self._data(), config, u_p, y_p)


CONTROLLERS = {"spc": SPCController, "pbr": PBRController, "rddpc": RobustDDPC, "frddpc": FeedbackRobustDDPC}
