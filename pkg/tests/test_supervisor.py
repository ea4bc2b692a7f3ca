import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import algorithm1_straight_line
from safeswitch import model, simulate
from safeswitch.errors import DimensionError
from safeswitch.supervisor import SupervisorConfig, SupervisorState, advance, decide, switch_rule


def gain_ctrl(k, label):
    """Static-output controller whose output is k times its one-dimensional state."""
    return model.DynamicController([[0.0]], [[0.0]], [[0.0]], [[k]], label)


def run_rule(gaps, M, t):
    xi, used, trig = 0, [], []
    for g in gaps:
        u, tr, xi = switch_rule(xi, g, M, t)
        used.append(u)
        trig.append(tr)
    return used, trig


def test_config_validation():
    for M, t in ((0.0, 1), (-1.0, 3), (1.0, 0), (1.0, 2.5)):
        with pytest.raises(ValueError):
            SupervisorConfig(M, t)
    assert SupervisorConfig.never_switch().M == math.inf


def test_decide_counter_active():
    p, f = gain_ctrl(1.0, model.PRIMARY), gain_ctrl(0.0, model.FALLBACK)
    st_ = SupervisorState(3, np.array([0.0]), np.array([100.0]))
    d = decide(st_, SupervisorConfig(1.0, 5), p, f)
    assert not d.used_primary and not d.triggered
    np.testing.assert_array_equal(d.applied_input, d.u0)


def test_decide_tie_triggers():
    p, f = gain_ctrl(1.0, model.PRIMARY), gain_ctrl(0.0, model.FALLBACK)
    st_ = SupervisorState(0, np.array([0.0]), np.array([2.0]))
    d = decide(st_, SupervisorConfig(2.0, 5), p, f)
    assert d.triggered and not d.used_primary
    np.testing.assert_array_equal(d.applied_input, [0.0])


def test_decide_equal_inputs_use_primary():
    p, f = gain_ctrl(1.0, model.PRIMARY), gain_ctrl(1.0, model.FALLBACK)
    st_ = SupervisorState(0, np.array([7.0]), np.array([7.0]))
    d = decide(st_, SupervisorConfig(1e-12, 5), p, f)
    assert d.used_primary and not d.triggered
    np.testing.assert_array_equal(d.applied_input, d.u1)


def test_decide_uses_two_norm():
    p = model.DynamicController(np.zeros((1, 1)), np.zeros((1, 2)), np.zeros((1, 1)), [[3.0], [4.0]])
    f = model.DynamicController(np.zeros((1, 1)), np.zeros((1, 2)), np.zeros((1, 1)), [[0.0], [0.0]],
                                model.FALLBACK)
    st_ = SupervisorState(0, np.array([0.0]), np.array([1.0]))
    assert decide(st_, SupervisorConfig(5.0, 2), p, f).triggered
    assert decide(st_, SupervisorConfig(5.0 + 1e-12, 2), p, f).used_primary


def test_advance_examples():
    p, f = gain_ctrl(1.0, model.PRIMARY), gain_ctrl(0.0, model.FALLBACK)
    cfg = SupervisorConfig(1.0, 4)
    s = SupervisorState(0, np.array([0.0]), np.array([5.0]))
    d = decide(s, cfg, p, f)
    assert d.triggered
    # xi = t is set on the trigger step and counted down at its end
    s2 = advance(s, d, cfg, p, f, [0.0])
    assert s2.xi == cfg.t - 1 and s2.k == 1
    one = SupervisorState(1, np.array([0.0]), np.array([0.0]))
    d1 = decide(one, cfg, p, f)
    s3 = advance(one, d1, cfg, p, f, [0.0])
    assert s3.xi == 0
    assert decide(s3, cfg, p, f).used_primary


def test_advance_zero_controllers_only_output_injection():
    ctrl = model.DynamicController(np.zeros((2, 2)), np.zeros((2, 1)), [[1.0], [2.0]], np.zeros((1, 2)))
    fb = ctrl.relabel(model.FALLBACK)
    cfg = SupervisorConfig(1.0, 2)
    s = SupervisorState.initial(ctrl, fb)
    s2 = advance(s, decide(s, cfg, ctrl, fb), cfg, ctrl, fb, [3.0])
    np.testing.assert_array_equal(s2.z0, [3.0, 6.0])
    np.testing.assert_array_equal(s2.z1, [3.0, 6.0])


def test_advance_uses_applied_input_for_both():
    p = model.DynamicController([[0.0]], [[1.0]], [[0.0]], [[1.0]])
    f = model.DynamicController([[0.0]], [[1.0]], [[0.0]], [[0.0]], model.FALLBACK)
    cfg = SupervisorConfig(0.5, 3)
    s = SupervisorState(0, np.array([0.0]), np.array([2.0]))
    d = decide(s, cfg, p, f)
    assert d.triggered
    s2 = advance(s, d, cfg, p, f, [0.0])
    # applied input was u0 = 0, so both controllers see 0
    np.testing.assert_array_equal(s2.z1, [0.0])
    np.testing.assert_array_equal(s2.z0, [0.0])


def test_dimension_errors():
    p, f = gain_ctrl(1.0, model.PRIMARY), gain_ctrl(0.0, model.FALLBACK)
    cfg = SupervisorConfig(1.0, 2)
    with pytest.raises(DimensionError):
        decide(SupervisorState(0, np.zeros(2), np.zeros(1)), cfg, p, f)
    s = SupervisorState.initial(p, f)
    with pytest.raises(DimensionError):
        advance(s, decide(s, cfg, p, f), cfg, p, f, [0.0, 1.0])


def test_dwell_contract_synthetic():
    t = 4
    gaps = [0, 5, 5, 0, 0, 0, 5, 0, 0, 0, 0, 0]
    used, trig = run_rule(gaps, 1.0, t)
    assert trig == [False, True, False, False, False, False, True, False, False, False, False, False]
    assert used == [True, False, False, False, False, True, False, False, False, False, True, True]


@given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.floats(0.1, 3.0))
def test_rule_matches_straight_line(seed, t, M):
    rng = np.random.default_rng(seed)
    gaps = np.abs(rng.standard_normal(100)) * 2
    gaps[rng.integers(0, 100, 5)] = M  # exercise exact ties
    used, trig = run_rule(gaps, M, t)
    ref_used, ref_trig = algorithm1_straight_line(gaps, M, t)
    assert used == ref_used and trig == ref_trig
    for k in np.flatnonzero(trig):
        block = used[k:k + t]
        assert not any(block)
        if k + t < len(used):
            # the threshold test runs again at k + t
            assert used[k + t] or trig[k + t]


def test_state_machine_xi_bounded():
    rng = np.random.default_rng(3)
    t = 6
    xi = 0
    for g in np.abs(rng.standard_normal(2000)):
        _, _, xi = switch_rule(xi, g, 1.0, t)
        assert 0 <= xi <= t


def test_never_switch_equals_unswitched(optimal_pair):
    sys, primary, fallback = optimal_pair
    bad = model.perturb_controller(primary, 0.05)
    sw = simulate.rollout_switched(sys, bad, fallback, SupervisorConfig.never_switch(10), 9, 300)
    un = simulate.rollout_unswitched(sys, bad, 9, 300, fallback=fallback)
    np.testing.assert_array_equal(sw.states, un.states)
    assert sw.used_primary.all()


def test_same_controller_twice_never_falls_back(optimal_pair):
    sys, primary, _ = optimal_pair
    fb = primary.relabel(model.FALLBACK)
    res = simulate.rollout_switched(sys, primary, fb, SupervisorConfig(1e-9, 10), 1, 500)
    assert res.used_primary.all()
    assert np.all(res.u_diff == 0)


def test_nan_gap_is_a_breach():
    assert switch_rule(0, float("nan"), 1.0, 3) == (False, True, 2)
