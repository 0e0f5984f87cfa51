import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from rddpc.estimators import (CONTROLLERS, FeedbackRobustDDPC, PBRController, RobustDDPC, SPCController,
                              SubspacePredictor)
from rddpc.lti_sim import ArNoiseModel, make_two_mass_model, simulate


@pytest.fixture(scope="module")
def record(bench_ws):
    return bench_ws.offline.inputs, bench_ws.offline.outputs


def _params():
    return dict(Q=np.diag([1.0, 1e-4, 1e-4, 1e-4]), R=np.diag([0.01]), lam=0.04,
                input_constraints=[(0.2 * np.eye(1, 5, i), np.zeros(1)) for i in range(5)])


def test_predictor_is_exact_on_noise_free_data():
    m = make_two_mass_model()
    quiet = ArNoiseModel(sigma=0.0)
    u = np.random.default_rng(0).normal(size=300)
    tr = simulate(m, quiet, quiet, u)
    est = SubspacePredictor().fit(tr.inputs, tr.outputs)
    test = simulate(m, quiet, quiet, np.random.default_rng(1).normal(size=60))
    X, Y = est.windows(test.inputs, test.outputs)
    assert X.shape == (51, 30) and Y.shape == (51, 20)
    np.testing.assert_allclose(est.predict(X), Y, atol=1e-8)
    assert est.score(X, Y) == pytest.approx(1.0)


def test_predictor_rejects_wrong_width(record):
    est = SubspacePredictor().fit(*record)
    with pytest.raises(ValueError):
        est.predict(np.zeros((2, 7)))
    with pytest.raises(NotFittedError):
        SubspacePredictor().predict(np.zeros((1, 30)))


@pytest.mark.parametrize("cls", [SPCController, PBRController, RobustDDPC, FeedbackRobustDDPC])
def test_clone_preserves_params(cls):
    est = cls(**_params())
    twin = clone(est)
    p, q = est.get_params(), twin.get_params()
    assert set(p) == set(q)
    np.testing.assert_array_equal(p["Q"], q["Q"])
    assert q["lam"] == 0.04
    twin.set_params(lam=0.5)
    assert est.lam == 0.04 and twin.lam == 0.5


def test_registry_names():
    assert {k: v.kind for k, v in CONTROLLERS.items()} == {k: k for k in CONTROLLERS}


@pytest.mark.parametrize("name", ["spc", "pbr", "rddpc", "frddpc"])
def test_predict_shapes_and_first_input(name, record, bench_window):
    est = CONTROLLERS[name](**_params()).fit(*record)
    assert est.n_u_ == 1 and est.n_y_ == 4 and est.n_features_in_ == 25
    u_p, y_p, r = bench_window
    sol = est.solve(u_p, y_p, r)
    assert sol.ok and sol.kind == name
    X = np.r_[u_p, y_p, r][None, :]
    np.testing.assert_allclose(est.predict(X), sol.first_input[None, :], atol=1e-12)
    both = est.predict(np.vstack([np.r_[u_p, y_p], np.r_[u_p, y_p]]), y_ref=r)
    assert both.shape == (2, 1)
    with pytest.raises(ValueError):
        est.predict(np.zeros((1, 26)))


def test_unfitted_controller_raises():
    with pytest.raises(NotFittedError):
        RobustDDPC().solve(np.zeros(5), np.zeros(20))


def test_zero_lambda_falls_back_to_nominal(record, bench_window):
    p = _params()
    p["lam"] = 0.0
    u_p, y_p, r = bench_window
    spc = SPCController(**p).fit(*record).solve(u_p, y_p, r)
    fr = FeedbackRobustDDPC(**p).fit(*record).solve(u_p, y_p, r)
    np.testing.assert_allclose(fr.u_f, spc.u_f, atol=1e-12)
    assert fr.kind == "frddpc" and not fr.K.any()


def test_set_params_changes_the_solution(record, bench_window):
    est = RobustDDPC(**_params()).fit(*record)
    u_p, y_p, r = bench_window
    small = est.solve(u_p, y_p, r).objective
    est.set_params(lam=0.2)
    assert est.solve(u_p, y_p, r).objective > small


def test_fit_checks_lengths():
    with pytest.raises(ValueError):
        SPCController().fit(np.zeros(20), np.zeros((19, 2)))
