from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from rddpc.behavioral import svd_reduce
from rddpc.conic import SolverSettings
from rddpc.controllers import (ControlConfig, FeedbackPolicy, causal_mask, solve_frddpc, solve_pbr, solve_rddpc,
                               solve_spc, uncertainty_model)
from rddpc.verification import random_instance, worst_case_cost_oracle

LAM = 0.04


@pytest.fixture(scope="module")
def cfg(bench_cfg, bench_window):
    return bench_cfg.control_config(LAM, y_ref=bench_window[2])


@pytest.fixture(scope="module")
def r_sol(bench_ws, cfg, bench_window):
    return solve_rddpc(bench_ws.reduced, cfg, *bench_window[:2])


@pytest.fixture(scope="module")
def fr_sol(bench_ws, cfg, bench_window):
    return solve_frddpc(bench_ws.reduced, cfg, *bench_window[:2])


def test_spc_unconstrained_matches_normal_equations(bench_ws, bench_window):
    u_p, y_p, r = bench_window
    d = bench_ws.data
    cfg = ControlConfig(5, 5, np.diag([1.0, 1e-4, 1e-4, 1e-4]), np.diag([0.01]), y_ref=r)
    sol = solve_spc(d, cfg, u_p, y_p)
    assert sol.ok
    c = d.Mp @ d.past_vector(u_p, y_p)
    H = d.Mf.T @ cfg.Qbar @ d.Mf + cfg.Rbar
    u_star = -np.linalg.solve(H, d.Mf.T @ cfg.Qbar @ (c - r))
    np.testing.assert_allclose(sol.u_f, u_star, atol=1e-6)
    assert sol.objective == pytest.approx(cfg.cost(u_star, d.Mf @ u_star + c), rel=1e-8)


def test_spc_respects_input_box(bench_ws, cfg, bench_window):
    sol = solve_spc(bench_ws.reduced, cfg, *bench_window[:2])
    assert sol.ok
    assert np.abs(sol.u_f).max() <= 5.0 + 1e-6  # |0.2 u| <= 1


def test_config_validation():
    with pytest.raises(ValueError):
        ControlConfig(2, 2, np.eye(2), -np.eye(1))
    with pytest.raises(ValueError):
        ControlConfig(2, 2, np.eye(2), np.eye(1), y_ref=np.zeros(3))
    with pytest.raises(ValueError):
        ControlConfig(2, 2, np.eye(2), np.eye(1), lam=-1.0)
    with pytest.raises(ValueError):
        ControlConfig(2, 2, np.eye(2), np.eye(1), form="sparse")


def test_robust_controllers_need_positive_lambda(bench_ws, cfg, bench_window):
    with pytest.raises(ValueError):
        solve_rddpc(bench_ws.reduced, replace(cfg, lam=0.0), *bench_window[:2])
    with pytest.raises(ValueError):
        solve_frddpc(bench_ws.reduced, replace(cfg, lam=0.0), *bench_window[:2])


def test_dimension_mismatch_rejected(bench_ws, bench_window):
    cfg = ControlConfig(4, 5, np.eye(4), np.eye(1), lam=0.1)
    with pytest.raises(ValueError):
        solve_rddpc(bench_ws.reduced, cfg, np.zeros(4), np.zeros(16))


def test_rddpc_lmi_layout(r_sol, bench_ws, cfg, bench_window):
    assert r_sol.ok
    # two robust output constraints plus the worst-case cost
    assert r_sol.info["lmi_dims"] == [31, 31, 31]
    red = solve_rddpc(bench_ws.reduced, cfg, *bench_window[:2], form="reduced")
    assert red.info["lmi_dims"] == [71, 71, 71]
    np.testing.assert_allclose(red.u_f, r_sol.u_f, atol=1e-4)
    assert red.objective == pytest.approx(r_sol.objective, rel=1e-5)


def test_compact_model_has_noise_rank(bench_ws):
    m = uncertainty_model(bench_ws.reduced, "compact")
    assert m.M.shape == (20, 10)
    np.testing.assert_array_equal(m.P, np.eye(10))
    np.testing.assert_allclose(m.M @ m.M.T, bench_ws.data.M @ bench_ws.data.M.T,
                               atol=1e-8 * np.linalg.norm(bench_ws.data.M, 2) ** 2)
    with pytest.raises(TypeError):
        uncertainty_model(bench_ws.reduced, "full")


def _trust_region_max(e, D, Q, lam):
    """max ||e + D z||_Q^2 over ||z||^2 <= lam through its one-dimensional dual."""
    H, g, c = D.T @ Q @ D, D.T @ Q @ e, e @ Q @ e
    top = np.linalg.eigvalsh(H)[-1]

    def dual(s):
        gamma = top + np.exp(s)
        return c + gamma * lam + g @ np.linalg.solve(gamma * np.eye(len(g)) - H, g)

    res = minimize_scalar(dual, bounds=(-30, 15), method="bounded", options={"xatol": 1e-12})
    return res.fun


def test_rddpc_psi_matches_trust_region_value(r_sol, bench_ws, cfg):
    m = uncertainty_model(bench_ws.reduced, "compact")
    expected = _trust_region_max(r_sol.b - cfg.y_ref, m.M, cfg.Qbar, LAM)
    assert r_sol.psi == pytest.approx(expected, rel=1e-5)
    z = np.random.default_rng(0).normal(size=(500, m.M.shape[1]))
    z *= np.sqrt(LAM) / np.linalg.norm(z, axis=1, keepdims=True)
    e = r_sol.b - cfg.y_ref + z @ m.M.T
    assert np.max(np.einsum("ij,jk,ik->i", e, cfg.Qbar, e)) <= r_sol.psi * (1 + 1e-8)
    assert r_sol.worst_case_tracking == r_sol.psi
    assert r_sol.objective == pytest.approx(r_sol.psi + r_sol.u_f @ cfg.Rbar @ r_sol.u_f, rel=1e-7)


def test_rddpc_psi_matches_enumeration_oracle():
    inst = random_instance(1)
    sol = solve_rddpc(inst.data, inst.config, inst.u_p, inst.y_p, form="full")
    assert sol.ok
    orc = worst_case_cost_oracle(sol.b, inst.data.M, inst.config.Qbar, inst.config.y_ref, inst.config.lam,
                                 phi_perp=inst.data.PhiPerp)
    assert sol.psi == pytest.approx(orc.max_value, rel=1e-3)


def test_robust_cost_grows_with_lambda(bench_ws, cfg, bench_window):
    values = []
    for lam in (1e-3, 0.01, 0.1, 0.5):
        sol = solve_rddpc(bench_ws.reduced, replace(cfg, lam=lam), *bench_window[:2])
        assert sol.ok
        values.append(sol.objective)
    assert all(a < b for a, b in zip(values, values[1:]))


def test_robust_cost_dominates_nominal(r_sol, bench_ws, cfg, bench_window):
    spc = solve_spc(bench_ws.reduced, cfg, *bench_window[:2])
    assert spc.objective <= r_sol.objective


def test_pbr_is_optimistic(bench_ws, cfg, bench_window):
    spc = solve_spc(bench_ws.reduced, cfg, *bench_window[:2])
    pbr = solve_pbr(bench_ws.reduced, cfg, *bench_window[:2])
    assert pbr.ok
    assert pbr.objective <= spc.objective + 1e-8
    assert pbr.w @ pbr.w <= LAM * (1 + 1e-6)
    pen = solve_pbr(bench_ws.reduced, cfg, *bench_window[:2], mode="penalty", weight=100.0)
    assert pen.ok and pen.objective <= spc.objective + 1e-8
    with pytest.raises(ValueError):
        solve_pbr(bench_ws.reduced, cfg, *bench_window[:2], mode="penalty")


def test_feedback_gain_is_strictly_causal(fr_sol):
    assert fr_sol.ok
    K = fr_sol.K
    assert K.shape == (5, 20)
    assert not np.any(K[~causal_mask(1, 4, 5)])
    assert np.any(np.abs(K) > 1e-6)


def test_feedback_is_no_worse_than_open_loop(fr_sol, r_sol, bench_ws, cfg, bench_window):
    assert fr_sol.objective <= r_sol.objective * (1 + 1e-6)
    no_fb = solve_frddpc(bench_ws.reduced, cfg, *bench_window[:2], feedback=False)
    assert no_fb.objective == pytest.approx(r_sol.objective, rel=1e-5)
    v = fr_sol.v_f
    assert fr_sol.psi >= v @ cfg.Rbar @ v
    assert fr_sol.worst_case_total == fr_sol.objective


def test_policy_applies_gain_causally(fr_sol):
    pol = fr_sol.policy
    assert isinstance(pol, FeedbackPolicy)
    y = fr_sol.b + 0.01
    full = pol.inputs(y)
    steps = np.concatenate([pol.input_at(k, y[:4 * k]) for k in range(5)])
    np.testing.assert_allclose(full, steps, atol=1e-14)
    np.testing.assert_array_equal(pol.first_input, fr_sol.v_f[:1])
    with pytest.raises(ValueError):
        pol.input_at(3, y[:4])


def test_forms_agree_on_small_instance():
    tight = SolverSettings(feastol=1e-10, abstol=1e-10, reltol=1e-10, fallback_tol=1e-8, max_iters=60)
    inst = random_instance(2, settings=tight)
    red = svd_reduce(inst.data)
    sols = {f: solve_rddpc(inst.data if f == "full" else red, inst.config, inst.u_p, inst.y_p, form=f)
            for f in ("full", "reduced", "compact")}
    assert all(s.ok for s in sols.values())
    for f in ("reduced", "compact"):
        np.testing.assert_allclose(sols[f].u_f, sols["full"].u_f, atol=1e-5)
        assert sols[f].objective == pytest.approx(sols["full"].objective, rel=1e-6)
    fr = {f: solve_frddpc(inst.data if f == "full" else red, inst.config, inst.u_p, inst.y_p, form=f)
          for f in ("full", "compact")}
    assert fr["full"].objective == pytest.approx(fr["compact"].objective, rel=1e-5)


def test_infeasible_output_set_reported(bench_ws, cfg, bench_window):
    # huge uncertainty cannot fit in the output ellipsoid
    sol = solve_rddpc(bench_ws.reduced, replace(cfg, lam=1e6), *bench_window[:2])
    assert sol.status == "infeasible"
    assert sol.u_f is None
    with pytest.raises(ValueError):
        sol.first_input
