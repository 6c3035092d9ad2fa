import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from dewm.data import PanelDataset
from dewm.propensity import (
    Known,
    KnownTable,
    Logistic,
    PropensityFitError,
    PropensityModel,
    dumps_propensity,
    fit_logistic,
    fit_logistic_stage,
    loads_propensity,
    propensity_at,
)


def _one_stage(D, X):
    D = np.asarray(D, dtype=np.int8)[:, None]
    return PanelDataset(D, np.zeros(D.shape, float), [np.asarray(X, float).reshape(len(D), -1)])


def test_known_half_both_arms():
    m = PropensityModel.known(0.5, 1)
    assert propensity_at(m, 1, 1, [0.3]) == 0.5
    assert propensity_at(m, 1, 0, [0.3]) == 0.5


def test_zero_logistic_is_half():
    m = PropensityModel((Logistic((0.0, 0.0), (0,)),))
    assert propensity_at(m, 1, 1, [17.0]) == 0.5


def test_clip_floor_applies():
    beta0 = np.log(0.001 / 0.999)
    m = PropensityModel((Logistic((beta0,), ()),), clip_floor=0.01)
    assert propensity_at(m, 1, 1, np.zeros(0)) == pytest.approx(0.01)
    assert propensity_at(m, 1, 0, np.zeros(0)) == pytest.approx(0.99)


def test_known_must_be_interior():
    with pytest.raises(ValueError):
        Known(1.0)


def test_table_lookup_and_missing_key():
    m = PropensityModel((KnownTable((0,), {(0.0,): 0.3, (1.0,): 0.6}),))
    assert propensity_at(m, 1, 1, [1.0]) == pytest.approx(0.6)
    with pytest.raises(KeyError):
        propensity_at(m, 1, 1, [2.0])


@settings(max_examples=300, deadline=None)
@given(st.floats(-30, 30), st.floats(-5, 5), st.floats(-5, 5), st.floats(0.001, 0.49))
def test_complementarity(b0, b1, h, kappa):
    m = PropensityModel((Logistic((b0, b1), (0,)),), clip_floor=kappa)
    p1 = propensity_at(m, 1, 1, [h])
    p0 = propensity_at(m, 1, 0, [h])
    raw = expit(b0 + b1 * h)
    eps = 1e-15
    assert kappa - eps <= p1 <= 1 - kappa + eps and kappa - eps <= p0 <= 1 - kappa + eps
    assert p0 + p1 <= 1 + 2 * kappa + 1e-15
    if kappa < raw < 1 - kappa:
        assert p0 + p1 == pytest.approx(1.0, abs=1e-15)


def test_null_model_fit():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(5000, 2))
    D = rng.random(5000) < 0.5
    fitres = fit_logistic_stage(_one_stage(D, X), 1, (0, 1))
    assert np.all(np.abs(fitres.entry.beta) < 0.1)


def test_recovers_known_coefficients():
    rng = np.random.default_rng(2)
    x = rng.normal(size=20000)
    D = rng.random(20000) < expit(0.5 + 1.0 * x)
    fitres = fit_logistic_stage(_one_stage(D, x), 1, (0,))
    np.testing.assert_allclose(fitres.entry.beta, (0.5, 1.0), atol=0.1)
    assert fitres.converged


def test_single_arm_error():
    with pytest.raises(PropensityFitError, match="both arms"):
        fit_logistic_stage(_one_stage(np.ones(10), np.arange(10.0)), 1, (0,))


def test_separation_error():
    x = np.arange(-5.0, 5.0)
    with pytest.raises(PropensityFitError, match="separated"):
        fit_logistic_stage(_one_stage(x > 0, x), 1, (0,))


def test_intercept_score_equation_and_monotone_likelihood():
    rng = np.random.default_rng(3)
    x = rng.normal(size=800)
    D = rng.random(800) < expit(-0.3 + 0.8 * x)
    ds = _one_stage(D, x)
    fitres = fit_logistic_stage(ds, 1, (0,))
    p = fitres.entry.treat_prob(ds.history_matrix(1))
    assert abs(p.mean() - D.mean()) < 1e-6
    assert all(b >= a for a, b in zip(fitres.loglik, fitres.loglik[1:]))


def test_fit_logistic_two_stages_and_text_round_trip():
    rng = np.random.default_rng(4)
    n = 500
    D = (rng.random((n, 2)) < 0.5).astype(np.int8)
    ds = PanelDataset(D, rng.normal(size=(n, 2)), [rng.normal(size=(n, 1)), np.zeros((n, 0))])
    m = fit_logistic(ds, [(0,), (0, 1)])
    back = loads_propensity(dumps_propensity(m))
    np.testing.assert_array_equal(back.probabilities(ds), m.probabilities(ds))


def test_probabilities_at_observed_arm():
    ds = PanelDataset([[1], [0]], [[0.0], [0.0]], [np.zeros((2, 0))])
    m = PropensityModel.known(0.3, 1)
    np.testing.assert_allclose(m.probabilities(ds)[:, 0], [0.3, 0.7])
