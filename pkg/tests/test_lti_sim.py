import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rddpc.lti_sim import (ArNoiseModel, LtiPlant, PidGains, SystemModel, Trajectory, ar_noise_step,
                           collect_closed_loop, gen_excitation, make_two_mass_model, simulate, square_wave)

QUIET = ArNoiseModel(sigma=0.0)


def test_two_mass_matrices_match_hand_discretization():
    m = make_two_mass_model()
    # k1/m1*dt = 4/1.2*0.1, (k1+k2)/m2*dt = 0.4, b1/m1*dt = 0.125, (b1+b2)/m2*dt = 0.175
    expected_A = np.array([[1, 0, 0.1, 0], [0, 1, 0, 0.1], [-1 / 3, 1 / 3, 0.875, 0.125], [0.2, -0.4, 0.075, 0.825]])
    np.testing.assert_allclose(m.A, expected_A, atol=1e-15)
    np.testing.assert_allclose(m.B_u.ravel(), [0, 0, 0.1 / 1.2, 0])
    np.testing.assert_array_equal(m.C, np.eye(4))
    np.testing.assert_array_equal(m.B_v, [0.5, 1.0, 0.4, 0.3])
    assert (m.n_x, m.n_u, m.n_y) == (4, 1, 4)
    assert np.all(np.abs(np.linalg.eigvals(m.A)) < 1)


def test_model_rejects_inconsistent_shapes():
    with pytest.raises(ValueError):
        SystemModel(np.eye(2), np.ones((2, 1)), np.ones((1, 3)), np.ones(1))
    with pytest.raises(ValueError):
        SystemModel(np.ones((2, 3)), np.ones((2, 1)), np.ones((1, 2)), np.ones(1))
    with pytest.raises(ValueError):
        SystemModel(np.eye(2), np.ones((2, 1)), np.ones((1, 2)), np.ones(2))


def test_model_arrays_are_read_only():
    m = make_two_mass_model()
    with pytest.raises(ValueError):
        m.A[0, 0] = 2.0


def test_seeded_benchmark_run_is_reproducible_and_frozen():
    m = make_two_mass_model()
    u = gen_excitation(600, 1.0, 0.01, 600, seed=17)
    a = simulate(m, ArNoiseModel(sigma=0.01), ArNoiseModel(sigma=0.019), u, seed=17)
    b = simulate(m, ArNoiseModel(sigma=0.01), ArNoiseModel(sigma=0.019), u, seed=17)
    np.testing.assert_array_equal(a.outputs, b.outputs)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    # y(0) = B_v v2(0) since x(0) = 0
    np.testing.assert_allclose(a.outputs[0], [0.003215097128138689, 0.006430194256277378,
                                              0.002572077702510951, 0.0019290582768832134], rtol=1e-12)
    np.testing.assert_allclose(a.outputs[-1], [-0.5085578481325925, -0.2605542007718188,
                                               -0.009637728032728386, -0.003203779018098889], rtol=1e-9)


def test_ar_noise_recursion_and_truncation():
    model = ArNoiseModel(coeff=0.5, sigma=0.1, truncation=3.0)
    assert ar_noise_step(model, 1.0) == pytest.approx(0.1)
    assert ar_noise_step(model, 10.0) == pytest.approx(0.05 + 0.3)  # innovation clipped to 3 sigma
    assert ar_noise_step(model, -10.0) == pytest.approx(0.175 - 0.3)
    assert model.envelope == pytest.approx(0.6)  # 3 sigma / (1 - 0.5)


def test_noise_stays_inside_envelope():
    m = make_two_mass_model()
    nu, ny = ArNoiseModel(sigma=0.01), ArNoiseModel(sigma=0.019)
    tr = simulate(m, nu, ny, np.zeros(2000), seed=3)
    assert np.abs(tr.input_noise).max() <= nu.envelope + 1e-15
    assert np.abs(tr.output_noise).max() <= ny.envelope + 1e-15
    innov = tr.input_noise[1:] - 0.5 * tr.input_noise[:-1]
    assert np.abs(innov).max() <= 0.03 + 1e-15


def test_noise_free_simulation_matches_state_recursion():
    m = make_two_mass_model()
    u = np.sin(0.1 * np.arange(50))
    tr = simulate(m, QUIET, QUIET, u)
    x = np.zeros(4)
    for t in range(50):
        np.testing.assert_allclose(tr.outputs[t], m.C @ x, atol=1e-14)
        x = m.A @ x + m.B_u[:, 0] * u[t]
    np.testing.assert_array_equal(tr.outputs, tr.noiseless_outputs)


def test_clean_twin_lies_in_the_noise_free_behaviour():
    m = make_two_mass_model()
    u = gen_excitation(600, 1.0, 0.01, 120, seed=2)
    tr = simulate(m, ArNoiseModel(sigma=0.01), ArNoiseModel(sigma=0.019), u, seed=5)
    twin = tr.clean_twin()
    replay = simulate(m, QUIET, QUIET, twin.inputs)
    np.testing.assert_allclose(replay.outputs, twin.outputs, atol=1e-12)


def test_square_wave_frozen():
    np.testing.assert_array_equal(square_wave(4, 2.0, 9), [2, 2, -2, -2, 2, 2, -2, -2, 2])
    with pytest.raises(ValueError):
        square_wave(0, 1.0, 3)


@given(st.integers(1, 50), st.floats(0.01, 10), st.integers(1, 200))
@settings(max_examples=50, deadline=None)
def test_square_wave_takes_two_levels(period, amp, length):
    w = square_wave(period, amp, length)
    assert w.shape == (length,)
    assert set(np.unique(w)) <= {amp, -amp}
    assert w[0] == amp


def test_excitation_is_square_plus_seeded_noise():
    a = gen_excitation(600, 1.0, 0.01, 600, seed=4)
    b = gen_excitation(600, 1.0, 0.01, 600, seed=4)
    np.testing.assert_array_equal(a, b)
    dev = a - square_wave(600, 1.0, 600)
    assert abs(dev.std() - 0.1) < 0.015
    np.testing.assert_array_equal(gen_excitation(10, 1.0, 0.0, 10), square_wave(10, 1.0, 10))


def test_simulate_rejects_bad_inputs():
    m = make_two_mass_model()
    with pytest.raises(ValueError):
        simulate(m, QUIET, QUIET, np.zeros((5, 2)))
    with pytest.raises(ValueError):
        simulate(m, QUIET, QUIET, np.zeros(0))


def test_pid_constant_reference_reaches_steady_state():
    m = make_two_mass_model()
    tr = collect_closed_loop(m, QUIET, QUIET, PidGains(1.91, 0.917, 0.93), np.full(400, 0.4), 400)
    assert abs(tr.outputs[-1, 0] - 0.4) < 1e-3


def test_pid_benchmark_square_reference_stays_bounded():
    m = make_two_mass_model()
    ref = square_wave(600, 0.4, 600)
    tr = collect_closed_loop(m, ArNoiseModel(sigma=0.01), ArNoiseModel(sigma=0.019),
                             PidGains(1.91, 0.917, 0.93), ref, 600, seed=1)
    assert np.all(np.isfinite(tr.inputs))
    assert np.abs(tr.inputs).max() < 5.0
    assert tr.meta["pid"] == [1.91, 0.917, 0.93]


def test_closed_loop_rejects_short_reference():
    with pytest.raises(ValueError):
        collect_closed_loop(make_two_mass_model(), QUIET, QUIET, PidGains(1, 0, 0), np.zeros(3), 10)


def test_plant_noise_stream_ignores_inputs():
    m = make_two_mass_model()
    a = LtiPlant(m, ArNoiseModel(sigma=0.01), ArNoiseModel(sigma=0.019), seed=9)
    b = LtiPlant(m, ArNoiseModel(sigma=0.01), ArNoiseModel(sigma=0.019), seed=9)
    for t in range(20):
        assert (a.v1, a.v2) == (b.v1, b.v2)
        a.step([1.0])
        b.step([-3.0])


def test_csv_round_trip_is_exact(tmp_path):
    m = make_two_mass_model()
    tr = simulate(m, ArNoiseModel(sigma=0.01), ArNoiseModel(sigma=0.019), np.random.default_rng(0).normal(size=30),
                  seed=1)
    path = tr.to_csv(tmp_path / "d.csv")
    back = Trajectory.from_csv(path)
    np.testing.assert_array_equal(back.inputs, tr.inputs)
    np.testing.assert_array_equal(back.outputs, tr.outputs)
    np.testing.assert_array_equal(back.noiseless_outputs, tr.noiseless_outputs)
    assert (tmp_path / "d.clean.csv").exists()


def test_trajectory_length_mismatch():
    with pytest.raises(ValueError):
        Trajectory(np.zeros(4), np.zeros((3, 2)))
