import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dewm.data import Trajectory
from dewm.policy import (
    Constants,
    Dtr,
    Intertemporal,
    LinearClass,
    PolicyClassSpec,
    StageRule,
    apply_rule,
    check_intertemporal,
    dtr_to_raw_outcomes,
    dumps_dtr,
    loads_dtr,
    match_indicator,
)


def test_zero_score_treats():
    r = StageRule.linear(1, (0.0, 0.0), (0,))
    assert apply_rule(r, np.array([123.0])) == 1


def test_threshold_hand_values():
    r = StageRule.linear(1, (-1.0, 2.0), (0,))
    assert apply_rule(r, np.array([0.6])) == 1
    assert apply_rule(r, np.array([0.4])) == 0


def test_scale_by_three_on_random_histories(rng):
    beta = rng.normal(size=3)
    H = rng.normal(size=(100, 4))
    a = StageRule.linear(1, beta, (0, 2)).assign(H)
    b = StageRule.linear(1, 3 * beta, (0, 2)).assign(H)
    np.testing.assert_array_equal(a, b)


@settings(max_examples=1000, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    st.floats(1e-3, 1e3),
)
def test_positive_rescaling_invariance(beta, h, c):
    r1 = StageRule.linear(1, beta, (0, 1))
    r2 = StageRule.linear(1, [c * b for b in beta], (0, 1))
    s = r1.scores(np.array(h))[0]
    # skip scores so close to zero that rounding in the product could flip them
    if abs(s) > 1e-9:
        assert r1(np.array(h)) == r2(np.array(h))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.floats(-100, 100))
def test_unselected_slots_do_not_matter(h, noise):
    r = StageRule.linear(2, (0.3, -1.0, 2.0), (0, 2))
    h2 = list(h)
    h2[1] = noise
    h2[3] = -noise
    assert r(np.array(h)) == r(np.array(h2))


def test_beta_length_checked():
    with pytest.raises(ValueError, match="expected 1 \\+ 2"):
        StageRule.linear(1, (1.0, 2.0), (0, 1))


def test_selector_out_of_range_for_stage():
    r = StageRule.linear(1, (1.0, 2.0), (3,))
    with pytest.raises(ValueError, match="invalid for stage-1"):
        r.assign(np.zeros((2, 1)))


def _traj(D):
    return Trajectory("a", np.array(D), np.zeros(len(D)), tuple(np.zeros(0) for _ in D))


def test_match_indicator_prefix():
    dtr = Dtr.constant((1, 1))
    assert match_indicator(dtr, _traj([1, 1]), 2) == 1
    assert match_indicator(dtr, _traj([1, 0]), 2) == 0
    assert match_indicator(dtr, _traj([1, 0]), 1) == 1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=3, max_size=3), st.lists(st.integers(0, 1), min_size=3, max_size=3))
def test_match_indicator_monotone(g, D):
    dtr = Dtr.constant(g)
    tr = _traj(D)
    vals = [match_indicator(dtr, tr, t) for t in (1, 2, 3)]
    assert vals[0] >= vals[1] >= vals[2]


def test_start_time_violation():
    rep = check_intertemporal(Dtr.constant((1, 0)), _traj([1, 0]), "start")
    assert not rep.feasible and rep.stage == 2


def test_oneshot_cases():
    assert check_intertemporal(Dtr.constant((0, 1)), _traj([0, 1]), "oneshot").feasible
    rep = check_intertemporal(Dtr.constant((1, 1)), _traj([1, 1]), "oneshot")
    assert not rep.feasible and rep.stage == 2


def test_policy_path_reads_own_outputs():
    # observed d1 = 0 but the regime itself treats at stage 1
    tr = _traj([0, 1])
    assert check_intertemporal(Dtr.constant((1, 1)), tr, "oneshot", path="observed").feasible
    assert not check_intertemporal(Dtr.constant((1, 1)), tr, "oneshot", path="policy").feasible


def test_intertemporal_parse():
    assert Intertemporal.parse("StOp") is Intertemporal.STOP
    with pytest.raises(ValueError):
        Intertemporal.parse("sometimes")


def test_constant_class_product_size():
    import itertools

    spec = PolicyClassSpec.constants(3)
    assert all(isinstance(c, Constants) for c in spec.stages)
    assert len(list(itertools.product((0, 1), repeat=spec.stage_count))) == 8


def test_sign_constraints():
    c = LinearClass((0,), ("free", "nonneg"))
    assert c.admits(StageRule.linear(1, (-1.0, 2.0), (0,)))
    assert not c.admits(StageRule.linear(1, (-1.0, -2.0), (0,)))
    with pytest.raises(ValueError, match="sign_constraints length"):
        LinearClass((0, 1), ("free",))


def test_dtr_text_round_trip(rng):
    dtr = Dtr((StageRule.linear(1, rng.normal(size=2), (0,)), StageRule.constant(2, 0)))
    assert loads_dtr(dumps_dtr(dtr)) == dtr


def test_raw_outcome_rewrite_matches_demeaned_rule(rng):
    means = [1.3, -0.4]
    r2 = StageRule.linear(2, (0.2, 0.5, -1.0), (0, 1))
    dtr = Dtr((StageRule.constant(1, 1), r2))
    raw = dtr_to_raw_outcomes(dtr, means)
    H = rng.normal(size=(50, 3))
    Hc = H.copy()
    Hc[:, 1] -= means[0]
    np.testing.assert_array_equal(raw[2].assign(H), r2.assign(Hc))
