import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mot_envelope import MOTEnvelope, ValidationError, call_spread, spread_value

SPREAD = {"type": "call_spread", "k1": -0.1, "k2": 0.5}


@pytest.fixture(scope="module")
def fitted():
    return MOTEnvelope(payoff=SPREAD, m=40).fit()


def test_params_roundtrip():
    est = MOTEnvelope(payoff=SPREAD, m=30, method="obstacle")
    params = est.get_params()
    assert params["m"] == 30 and params["method"] == "obstacle"
    twin = clone(est)
    assert twin.get_params() == params
    assert not hasattr(twin, "field_")
    est.set_params(m=12)
    assert est.m == 12


def test_predict_matches_oracle(fitted):
    X = np.array([[0.5, 0.2, 0.3], [0.2, 0.4, 0.4], [0.3, 0.5, 0.2]])
    expected = spread_value(-0.1, 0.5, X[:, 1], X[:, 2])
    assert np.max(np.abs(fitted.predict(X) - expected)) <= 2e-2
    assert fitted.predict([0.5, 0.2, 0.3]).shape == (1,)


def test_transform_columns(fitted):
    out = fitted.transform([[0.5, 0.2, 0.3], [0.15, 0.1, 0.75]])
    assert out.shape == (2, 3)
    assert np.allclose(out[:, 2], out[:, 0] - out[:, 1])
    assert np.all(out[:, 2] >= -1e-12)
    assert out[1, 2] == pytest.approx(0.0, abs=1e-6)


def test_accepts_cost_object():
    est = MOTEnvelope(payoff=call_spread(-0.1, 0.5), m=10).fit()
    assert est.n_features_in_ == 3


def test_not_fitted():
    est = MOTEnvelope(payoff=SPREAD)
    with pytest.raises(NotFittedError):
        est.predict([[0.5, 0.2, 0.3]])
    with pytest.raises(NotFittedError):
        est.simulate([0.5, 0.2, 0.3])


@pytest.mark.parametrize(
    "X", [[[0.5, 0.5]], [[0.6, 0.6, -0.2]], [[0.5, 0.2, 0.2]], [[np.nan, 0.5, 0.5]]]
)
def test_invalid_rows(fitted, X):
    with pytest.raises(ValidationError):
        fitted.predict(X)


@pytest.mark.parametrize("kw", [{"m": 1}, {"m": 2.5}, {"method": "lp"}])
def test_invalid_params(kw):
    with pytest.raises(ValidationError):
        MOTEnvelope(payoff=SPREAD, **kw).fit()


def test_missing_payoff():
    with pytest.raises(TypeError):
        MOTEnvelope().fit()


def test_simulate(fitted):
    est = fitted.simulate([0.5, 0.2, 0.3], n_paths=200, master_seed=1)
    assert est.n_paths == 200
    assert abs(est.mean - 0.32) <= 4 * est.std_error + 2e-2
    assert fitted.policy() is fitted.policy()
