import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from dewm.policy import Constants, LinearClass, StageRule
from dewm.search import (
    ConstantCandidates,
    EnumeratedCandidates,
    EnumerationBudgetError,
    NoFeasibleCandidate,
    SweepCandidates,
    ThresholdCandidates,
    argmax_weighted_rule,
    enumerate_candidates,
)


def lp_separable(P, pos, signs):
    """Independent oracle: is there beta with sign pattern such that
    (1, x) . beta >= 0 exactly on ``pos``?  Uses margin 1 on the negative side
    (scale invariance makes this equivalent)."""
    m, p = P.shape
    A = np.column_stack([np.ones(m), P])
    A_ub = np.where(pos[:, None], -A, A)
    b_ub = np.where(pos, 0.0, -1.0)
    bounds = [(0, None) if s == "nonneg" else (None, 0) if s == "nonpos" else (None, None) for s in signs]
    res = linprog(np.zeros(p + 1), A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    return res.status == 0


def oracle_dichotomies(P, signs):
    return {
        pat
        for pat in itertools.product((0, 1), repeat=len(P))
        if lp_separable(P, np.array(pat, bool), signs)
    }


def brute_threshold_value(x, w):
    """Best sum of weights over all 1-d threshold rules (both orientations)."""
    xs = np.unique(x)
    cuts = np.concatenate([[xs[0] - 1], (xs[:-1] + xs[1:]) / 2, [xs[-1] + 1]])
    best = 0.0
    for c in cuts:
        best = max(best, w[x >= c].sum(), w[x <= c].sum())
    return best


def test_two_points_all_dichotomies():
    cs = enumerate_candidates(np.array([[0.4], [0.6]]), LinearClass((0,)))
    assert cs.dichotomies() == {(0, 0), (0, 1), (1, 0), (1, 1)}


def test_constants_two_candidates():
    cs = enumerate_candidates(np.zeros((5, 0)), Constants())
    assert isinstance(cs, ConstantCandidates) and len(cs) == 2
    assert [cs.rule(k).value for k in range(2)] == [0, 1]


def test_nonneg_slope_excludes_treating_only_low_point():
    cs = enumerate_candidates(np.array([[0.4], [0.6]]), LinearClass((0,), ("free", "nonneg")))
    assert (1, 0) not in cs.dichotomies()
    assert (0, 1) in cs.dichotomies()


def test_dominance_cases(rng):
    X = rng.normal(size=(10, 1))
    cs = enumerate_candidates(X, LinearClass((0,)))
    w = rng.random(10) + 0.1
    rule, val = argmax_weighted_rule(cs, w)
    assert rule.assign(X).all() and val == pytest.approx(w.sum())
    rule, val = argmax_weighted_rule(cs, -w)
    assert not rule.assign(X).any() and val == 0.0


def test_six_point_threshold_oracle():
    rng = np.random.default_rng(6)
    x = rng.normal(size=6)
    w = rng.normal(size=6)
    _, val = argmax_weighted_rule(enumerate_candidates(x[:, None], LinearClass((0,))), w)
    assert val == pytest.approx(brute_threshold_value(x, w), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 50), st.integers(0, 2**31))
def test_threshold_exactness(n, seed):
    rng = np.random.default_rng(seed)
    x = np.round(rng.normal(size=n), 1)  # ties included
    w = rng.normal(size=n)
    rule, val = argmax_weighted_rule(enumerate_candidates(x[:, None], LinearClass((0,))), w)
    assert val == pytest.approx(brute_threshold_value(x, w), abs=1e-9)
    assert np.dot(rule.assign(x[:, None]), w) == pytest.approx(val, abs=1e-9)


@pytest.mark.parametrize("trial", range(25))
def test_completeness_certificate_2d(trial):
    rng = np.random.default_rng(100 + trial)
    m = int(rng.integers(1, 9))
    P = rng.normal(size=(m, 2))
    if trial % 3 == 0:
        P = np.round(P)  # collinear and repeated points
    P = np.unique(P, axis=0)
    truth = oracle_dichotomies(P, ("free",) * 3)
    assert enumerate_candidates(P, LinearClass((0, 1))).dichotomies() == truth
    assert EnumeratedCandidates(1, P, (0, 1), ("free",) * 3).dichotomies() == truth


@pytest.mark.parametrize("signs", [("free", "nonneg", "free"), ("nonneg", "free", "nonpos"), ("free", "nonpos", "nonpos")])
@pytest.mark.parametrize("trial", range(8))
def test_completeness_certificate_signed(signs, trial):
    rng = np.random.default_rng(200 + trial)
    P = np.unique(rng.normal(size=(int(rng.integers(1, 8)), 2)), axis=0)
    cs = enumerate_candidates(P, LinearClass((0, 1), signs))
    assert cs.dichotomies() == oracle_dichotomies(P, signs)


@pytest.mark.parametrize(
    "signs", [("free", "free"), ("free", "nonneg"), ("nonneg", "free"), ("nonpos", "nonneg"), ("free", "nonpos")]
)
def test_completeness_certificate_1d(signs):
    rng = np.random.default_rng(7)
    for _ in range(10):
        P = np.unique(np.round(rng.normal(size=(int(rng.integers(1, 7)), 1)), 1), axis=0)
        cs = enumerate_candidates(P, LinearClass((0,), signs))
        assert cs.dichotomies() == oracle_dichotomies(P, signs)


def test_totals_match_assignments(rng):
    X = np.column_stack([rng.integers(0, 2, 40), rng.normal(size=40)])
    cs = enumerate_candidates(X, LinearClass((0, 1)))
    assert isinstance(cs, SweepCandidates)
    V = rng.normal(size=40)
    tot = cs.totals(V)
    for k in range(0, len(cs), max(1, len(cs) // 200)):
        assert tot[k] == pytest.approx(cs.rule(k).assign(X) @ V, abs=1e-9)
        np.testing.assert_array_equal(cs.assignment(k), cs.rule(k).assign(X))


def test_random_beta_lower_bound(rng):
    X = rng.normal(size=(12, 2))
    w = rng.normal(size=12)
    _, val = argmax_weighted_rule(enumerate_candidates(X, LinearClass((0, 1))), w)
    B = rng.normal(size=(20000, 3))
    draws = ((B[:, :1] + B[:, 1:] @ X.T) >= 0) @ w
    assert val >= draws.max() - 1e-12


def test_lowest_index_tie_break_and_determinism(rng):
    X = rng.normal(size=(15, 1))
    cs = enumerate_candidates(X, LinearClass((0,)))
    rule, val = argmax_weighted_rule(cs, np.zeros(15))
    assert rule == cs.rule(0) and val == 0.0
    w = rng.normal(size=15)
    assert argmax_weighted_rule(cs, w) == argmax_weighted_rule(enumerate_candidates(X, LinearClass((0,))), w)


def test_feasibility_mask_and_predicate(rng):
    X = rng.normal(size=(8, 1))
    cs = enumerate_candidates(X, LinearClass((0,)))
    w = np.ones(8)
    rule, _ = argmax_weighted_rule(cs, w, lambda r: r.kind != "constant")
    assert rule.kind == "linear"
    with pytest.raises(NoFeasibleCandidate):
        argmax_weighted_rule(cs, w, np.zeros(len(cs), bool))


def test_routing():
    X = np.random.default_rng(0).normal(size=(10, 3))
    assert isinstance(enumerate_candidates(X[:, :1], LinearClass((0,))), ThresholdCandidates)
    assert isinstance(enumerate_candidates(X[:, :2], LinearClass((0, 1))), SweepCandidates)
    assert isinstance(enumerate_candidates(X, LinearClass((0, 1, 2))), EnumeratedCandidates)


def test_enumeration_budget_error():
    X = np.random.default_rng(0).normal(size=(60, 3))
    with pytest.raises(EnumerationBudgetError, match="MILP"):
        enumerate_candidates(X, LinearClass((0, 1, 2)), max_subsets=100)


def test_three_features_lower_bound():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(10, 3))
    w = rng.normal(size=10)
    _, val = argmax_weighted_rule(enumerate_candidates(X, LinearClass((0, 1, 2))), w)
    B = rng.normal(size=(20000, 4))
    assert val >= (((B[:, :1] + B[:, 1:] @ X.T) >= 0) @ w).max() - 1e-12
