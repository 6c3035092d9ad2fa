import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_panel
from dewm.data import PanelDataset
from dewm.policy import Dtr, StageRule
from dewm.propensity import PropensityModel
from dewm.welfare import (
    BudgetRow,
    BudgetSpec,
    EmptyPathWarning,
    WelfareWeights,
    backward_objective,
    budget_feasible,
    budget_lhs,
    empirical_treated_share,
    empirical_welfare,
    welfare_report,
)

TOY = PanelDataset([[1], [0]], [[2.0], [4.0]], [np.zeros((2, 0))])
PM1 = PropensityModel.known(0.5, 1)
W1 = WelfareWeights((1.0,))


def test_toy_treat_all():
    assert empirical_welfare(TOY, Dtr.constant([1]), PM1, W1) == 2.0


def test_toy_treat_none():
    assert empirical_welfare(TOY, Dtr.constant([0]), PM1, W1) == 4.0


def test_zero_outcomes(rng):
    ds = random_panel(rng)
    ds = ds.with_outcomes(np.zeros_like(ds.outcomes))
    assert empirical_welfare(ds, Dtr.constant((1, 0)), PropensityModel.known(0.5, 2), WelfareWeights((0.5, 1))) == 0.0


def test_backward_objective_final_stage_toy():
    assert backward_objective(TOY, 1, StageRule.constant(1, 1), [], PM1, W1) == 2.0


def test_backward_objective_zero_weights(rng, half):
    ds = random_panel(rng)
    assert backward_objective(ds, 2, StageRule.constant(2, 1), [], half, WelfareWeights((1.0, 0.0))) == 0.0


def test_backward_objective_t1_is_full_welfare(rng, half):
    ds = random_panel(rng)
    w = WelfareWeights((0.4, 0.9))
    g1 = StageRule.linear(1, (0.1, 1.0), (0,))
    g2 = StageRule.linear(2, (0.0, 1.0, -1.0), (0, 1))
    assert backward_objective(ds, 1, g1, [g2], half, w) == pytest.approx(
        empirical_welfare(ds, Dtr((g1, g2)), half, w), abs=1e-12
    )


def test_backward_objective_restarts_propensity_product(rng):
    ds = random_panel(rng, n=40)
    pm = PropensityModel.known((0.3, 0.6), 2)
    w = WelfareWeights((0.0, 1.0))
    g2 = StageRule.constant(2, 1)
    expect = np.mean(np.where(ds.treatments[:, 1] == 1, ds.outcomes[:, 1] / 0.6, 0.0))
    assert backward_objective(ds, 2, g2, [], pm, w) == pytest.approx(expect, abs=1e-12)


def test_share_stage_one_denominator_is_n(rng):
    ds = random_panel(rng)
    assert empirical_treated_share(ds, Dtr.constant((1, 0)), 1) == 1.0


def test_share_empty_path_warns():
    ds = PanelDataset([[0, 1], [0, 0]], np.zeros((2, 2)), [np.zeros((2, 0))] * 2)
    with pytest.warns(EmptyPathWarning):
        assert empirical_treated_share(ds, Dtr.constant((1, 1)), 2) == 0.0


def test_share_conditional_ratio():
    # stage-1 treated rows 0,1 follow g1 = 1; g2 treats when y1 >= 0, true for one of them
    ds = PanelDataset(
        [[1, 0], [1, 1], [0, 0], [0, 1]],
        [[1.0, 0.0], [-1.0, 0.0], [5.0, 0.0], [5.0, 0.0]],
        [np.zeros((4, 0))] * 2,
    )
    dtr = Dtr((StageRule.constant(1, 1), StageRule.linear(2, (0.0, 1.0), (1,))))
    assert empirical_treated_share(ds, dtr, 2) == 0.5


def test_budget_lhs_cases(rng):
    ds = random_panel(rng)
    spec = BudgetSpec((BudgetRow((0.5, 0.5), 0.5),), 0.0)
    assert budget_lhs(ds, Dtr.constant((1, 1)), spec, 1) == 1.0
    assert budget_lhs(ds, Dtr.constant((0, 0)), spec, 1) == 0.0


def test_budget_exactly_at_level():
    # shares 0.63 and 0.37 weighted equally sit exactly on C = 0.5
    from dewm.welfare import _lhs_from_shares

    assert _lhs_from_shares(np.array([0.63, 0.37]), BudgetRow((0.5, 0.5), 0.5)) == pytest.approx(0.5)


def test_budget_row_validation():
    with pytest.raises(ValueError, match="sum to 1"):
        BudgetRow((0.5, 0.6), 0.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1))
def test_budget_lhs_in_unit_interval(seed, k1, b):
    rng = np.random.default_rng(seed)
    ds = random_panel(rng, n=15)
    dtr = Dtr((StageRule.linear(1, (b - 0.5, 1.0), (0,)), StageRule.linear(2, (0.2, -1.0, 1.0), (0, 1))))
    spec = BudgetSpec((BudgetRow((k1, 1 - k1), 0.3),), 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyPathWarning)
        v = budget_lhs(ds, dtr, spec, 1)
    assert 0.0 <= v <= 1.0


def test_strict_mode_rejects_empty_path():
    ds = PanelDataset([[0, 1], [0, 0]], np.zeros((2, 2)), [np.zeros((2, 0))] * 2)
    spec = BudgetSpec((BudgetRow((0.0, 1.0), 0.0),), 0.5)
    assert budget_feasible(ds, Dtr.constant((1, 1)), spec)
    assert not budget_feasible(ds, Dtr.constant((1, 1)), spec, strict=True)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 29))
def test_welfare_additive_over_halves(seed, cut):
    rng = np.random.default_rng(seed)
    ds = random_panel(rng, n=30)
    pm = PropensityModel.known(0.4, 2)
    w = WelfareWeights((0.3, 1.0))
    dtr = Dtr((StageRule.linear(1, (0.0, 1.0), (0,)), StageRule.constant(2, 1)))
    a, b = ds.subset(range(cut)), ds.subset(range(cut, 30))
    whole = empirical_welfare(ds, dtr, pm, w)
    parts = (cut * empirical_welfare(a, dtr, pm, w) + (30 - cut) * empirical_welfare(b, dtr, pm, w)) / 30
    assert whole == pytest.approx(parts, abs=1e-12)


def test_demeaned_ranking_invariant_to_shift(rng):
    from dewm.data import demean_outcomes

    ds = random_panel(rng, n=60)
    pm = PropensityModel.known(0.5, 2)
    w = WelfareWeights((0.0, 1.0))
    cands = [Dtr.constant(v) for v in ((0, 0), (0, 1), (1, 0), (1, 1))]
    cands.append(Dtr((StageRule.linear(1, (0.0, 1.0), (0,)), StageRule.constant(2, 1))))
    base = [empirical_welfare(demean_outcomes(ds), g, pm, w) for g in cands]
    shifted = ds.with_outcomes(ds.outcomes + 50.0)
    moved = [empirical_welfare(demean_outcomes(shifted), g, pm, w) for g in cands]
    assert np.argsort(base).tolist() == np.argsort(moved).tolist()
    np.testing.assert_allclose(base, moved, atol=1e-10)


def test_report_json(rng, half):
    ds = random_panel(rng)
    rep = welfare_report(ds, Dtr.constant((1, 1)), half, WelfareWeights((0, 1)), BudgetSpec((BudgetRow((0.5, 0.5), 1.0),)))
    assert '"welfare"' in rep.to_json() and len(rep.budget_lhs) == 1
