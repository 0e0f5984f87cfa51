import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rddpc.behavioral import partition
from rddpc.controllers import solve_frddpc, solve_rddpc
from rddpc.verification import (cost_bound_check, min_lambda_feedback, min_lambda_for_trajectory, random_instance,
                                robust_sampling_check, theorem1_lambda_o, theorem3_lambda_c, tune_lambda,
                                validation_slices, worst_case_cost_oracle)


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.floats(0, 4))
@settings(max_examples=50, deadline=None)
def test_oracle_one_dimensional_closed_form(d, m, lam):
    d, m = np.array(d), np.array(m)
    orc = worst_case_cost_oracle(d, m[:, None], np.eye(3), np.zeros(3), lam)
    if np.linalg.norm(m) < 1e-6:
        return
    expected = d @ d + 2 * math.sqrt(lam) * abs(m @ d) + lam * (m @ m)
    assert orc.max_value == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_oracle_two_dimensional_matches_dense_scan():
    rng = np.random.default_rng(4)
    M = rng.normal(size=(4, 2))
    b, y_r = rng.normal(size=4), rng.normal(size=4)
    Q = np.diag([1.0, 2.0, 0.5, 3.0])
    lam = 0.7
    orc = worst_case_cost_oracle(b, M, Q, y_r, lam)
    t = np.linspace(0, 2 * np.pi, 200_001)
    W = math.sqrt(lam) * np.column_stack([np.cos(t), np.sin(t)])
    E = b - y_r + W @ M.T
    scan = np.einsum("ij,jk,ik->i", E, Q, E).max()
    assert orc.max_value == pytest.approx(scan, rel=1e-9)
    assert orc.method == "grid+ascent" and orc.rank == 2
    w = orc.argmax_w
    assert w @ w == pytest.approx(lam)


def test_oracle_respects_projector():
    P = np.diag([1.0, 1.0, 0.0])
    M = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    orc = worst_case_cost_oracle(np.zeros(2), M, np.eye(2), np.zeros(2), 1.0, phi_perp=P)
    assert orc.max_value == pytest.approx(4.0)
    with pytest.raises(ValueError, match="unbounded"):
        worst_case_cost_oracle(np.zeros(2), np.eye(2, 3, 1), np.eye(2), np.zeros(2), 1.0, phi_perp=P)
    with pytest.raises(ValueError, match="cap"):
        worst_case_cost_oracle(np.zeros(4), np.eye(4), np.eye(4), np.zeros(4), 1.0)
    assert worst_case_cost_oracle(np.ones(2), M, np.eye(2), np.zeros(2), 0.0).max_value == 2.0


def test_min_lambda_recovers_planted_coordinates(bench_ws, bench_window):
    d = bench_ws.data
    u_p, y_p, _ = bench_window
    u_f = np.linspace(-1, 1, 5)
    w = d.M.T @ np.random.default_rng(0).normal(size=20)  # row space of M
    w *= 0.3 / np.linalg.norm(w)
    y_f = d.nominal(u_p, u_f, y_p) + d.M @ w
    assert min_lambda_for_trajectory(d, u_p, y_p, u_f, y_f) == pytest.approx(0.09, rel=1e-6)
    assert min_lambda_for_trajectory(bench_ws.reduced, u_p, y_p, u_f, y_f) == pytest.approx(0.09, rel=1e-6)
    # a direction outside range(M) is never consistent
    off = np.linalg.svd(d.M)[0][:, -1]
    assert min_lambda_for_trajectory(d, u_p, y_p, u_f, y_f + 0.1 * off) == math.inf


def test_min_lambda_feedback_reduces_to_open_loop_for_zero_gain(bench_ws, bench_window):
    d = bench_ws.data
    u_p, y_p, _ = bench_window
    sl = validation_slices(bench_ws.validation, 5, 5, 3)[1]
    a = min_lambda_for_trajectory(d, sl.u_p, sl.y_p, sl.u_f, sl.y_f)
    b = min_lambda_feedback(d, sl.u_p, sl.y_p, sl.u_f, np.zeros((5, 20)), sl.y_f)
    assert a == pytest.approx(b, rel=1e-10)


def test_noise_free_membership(noise_free_ws, noise_free_cfg):
    d = noise_free_ws.data
    slices = validation_slices(noise_free_ws.validation, 5, 5, 20)
    assert tune_lambda(d, slices) <= 1e-10
    s = slices[0]
    assert min_lambda_for_trajectory(d, s.u_p, s.y_p, s.u_f, s.y_f + 1e-3) == math.inf


def test_validation_slices_are_evenly_spaced(bench_ws):
    slices = validation_slices(bench_ws.validation, 5, 5, 100)
    assert len(slices) == 100
    u = bench_ws.validation.inputs.ravel()
    np.testing.assert_array_equal(slices[0].u_p, u[:5])
    np.testing.assert_array_equal(slices[-1].u_f, u[-5:])
    with pytest.raises(ValueError):
        tune_lambda(bench_ws.data, [])


def test_tuned_lambda_is_the_largest_slice_value(bench_ws, bench_cfg):
    slices = bench_ws.slices(bench_cfg)
    lam = tune_lambda(bench_ws.reduced, slices)
    each = [min_lambda_for_trajectory(bench_ws.data, s.u_p, s.y_p, s.u_f, s.y_f) for s in slices]
    assert lam == pytest.approx(max(each), rel=1e-6)
    assert 0 < lam < 1


@pytest.fixture(scope="module")
def theory(bench_ws, bench_cfg, bench_window):
    clean = partition(bench_ws.offline.clean_twin(), 5, 5)
    nu, ny = bench_cfg.plant.noises()
    xi_y = ny.envelope * float(np.linalg.norm(bench_cfg.plant.model().B_v))
    u_p, y_p, _ = bench_window
    return clean, nu.envelope, xi_y, u_p, y_p


def test_safe_bound_dwarfs_tuned_lambda(bench_ws, bench_cfg, theory):
    clean, xi_u, xi_y, u_p, y_p = theory
    b = theorem1_lambda_o(bench_ws.data, clean, 4, xi_u, xi_y, u_p, np.zeros(5), y_p)
    lam = tune_lambda(bench_ws.reduced, bench_ws.slices(bench_cfg))
    assert b.Lambda_o / lam >= 1e4
    assert b.beta >= b.delta > 0
    assert b.Lambda_o == pytest.approx(b.gain ** 2 * (b.Lambda1 * np.linalg.norm(np.r_[u_p, np.zeros(5), y_p])
                                                      + b.Lambda2) ** 2)


def test_feedback_bound_divides_by_gain_norm(bench_ws, theory):
    clean, xi_u, xi_y, u_p, y_p = theory
    zero = theorem3_lambda_c(bench_ws.data, clean, np.zeros((5, 20)), np.zeros(5), u_p, y_p, 4, xi_u, xi_y)
    assert zero.Lambda_c == pytest.approx(zero.Lambda_o)
    K = np.zeros((5, 20))
    K[1, 0] = 0.5
    b = theorem3_lambda_c(bench_ws.data, clean, K, np.zeros(5), u_p, y_p, 4, xi_u, xi_y)
    T = (np.eye(20) - clean.Mf @ K) @ (np.eye(20) + bench_ws.data.Mf @ K)
    assert b.Lambda_c == pytest.approx(b.Lambda_o / np.linalg.norm(T, 2) ** 2)


def test_insufficient_excitation_is_reported(bench_ws, theory):
    clean, xi_u, xi_y, u_p, y_p = theory
    with pytest.raises(ValueError, match="excitation"):
        theorem1_lambda_o(bench_ws.data, clean, 40, xi_u, xi_y, u_p, np.zeros(5), y_p)


@pytest.fixture(scope="module")
def robust_pair(bench_ws, bench_cfg, bench_window):
    cfg = bench_cfg.control_config(0.04, y_ref=bench_window[2])
    u_p, y_p, _ = bench_window
    return cfg, solve_rddpc(bench_ws.reduced, cfg, u_p, y_p), solve_frddpc(bench_ws.reduced, cfg, u_p, y_p)


def test_sampling_check_certifies_both_controllers(bench_ws, robust_pair):
    cfg, r, fr = robust_pair
    for sol in (r, fr):
        rep = robust_sampling_check(sol, bench_ws.reduced, cfg, n_samples=2000, form="compact")
        assert rep.ok()
        assert rep.worst_cost_excess <= 0
        rep_red = robust_sampling_check(sol, bench_ws.reduced, cfg, n_samples=500, form="reduced")
        assert rep_red.ok()


def test_cost_bounds_hold_on_member_outputs(bench_ws, robust_pair, bench_window):
    cfg, r, fr = robust_pair
    d = bench_ws.data
    u_p, y_p, _ = bench_window
    w = d.M.T @ np.random.default_rng(1).normal(size=20)
    w *= 0.15 / np.linalg.norm(w)
    y = r.b + d.M @ w
    chk = cost_bound_check("thm2", r, r.u_f, y, cfg, d, u_p, y_p)
    assert chk.precondition and chk.passed
    assert chk.membership <= 0.04
    assert chk.margin == pytest.approx(chk.bound - chk.realized)
    y_fb = fr.b + (np.eye(20) + d.Mf @ fr.K) @ (d.M @ w)
    u_fb = fr.policy.inputs(y_fb)
    chk4 = cost_bound_check("thm4", fr, u_fb, y_fb, cfg, d, u_p, y_p)
    assert chk4.precondition and chk4.passed
    with pytest.raises(ValueError):
        cost_bound_check("thm9", r, r.u_f, y, cfg, d)


def test_cost_bound_flags_non_members(bench_ws, robust_pair, bench_window):
    cfg, r, _ = robust_pair
    d = bench_ws.data
    u_p, y_p, _ = bench_window
    w = d.M.T @ np.ones(20)
    w *= 1.0 / np.linalg.norm(w)  # ||w||^2 = 1 >> 0.04
    chk = cost_bound_check("thm2", r, r.u_f, r.b + d.M @ w, cfg, d, u_p, y_p)
    assert not chk.precondition
    assert chk.membership == pytest.approx(1.0, rel=1e-6)


def test_random_instances_are_feasible_and_small():
    for seed in range(4):
        inst = random_instance(seed)
        sol = solve_rddpc(inst.data, inst.config, inst.u_p, inst.y_p, form="full")
        assert sol.ok
        assert 1 <= inst.data.M_rank <= 3
    a, b = random_instance(7), random_instance(7)
    np.testing.assert_array_equal(a.data.Phi, b.data.Phi)
