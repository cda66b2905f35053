import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from trafficlab.control import (ControlConfig, FuzzyConfig, InfeasiblePlanError, critical_volumes,
                                fixed_plan, fuzzy_adjust, green_splits, membership,
                                plan_for_interval, round_half_up, webster_cycle)
from trafficlab.core import Phase, default_scenario

PHASES = [Phase(0, (0, 1)), Phase(1, (2, 3))]
FUZZY = FuzzyConfig()


def test_critical_volumes_examples():
    cv = critical_volumes(PHASES, {0: 540, 1: 540, 2: 540, 3: 540}, [1800] * 4)
    assert cv.ratios == pytest.approx((0.3, 0.3)) and cv.sum_y == pytest.approx(0.6)
    assert critical_volumes(PHASES, [0, 0, 0, 0], [1800] * 4) == ((0.0, 0.0), 0.0)
    cv = critical_volumes([Phase(0, (0, 1))], [720, 360], [1800, 1800])
    assert cv.ratios == pytest.approx((0.4,))


def test_critical_volumes_oversaturation_recorded():
    cv = critical_volumes(PHASES, [1500, 0, 900, 0], [1800] * 4)
    assert cv.sum_y == pytest.approx(1500 / 1800 + 0.5)
    assert cv.oversaturated


def test_critical_volumes_missing():
    with pytest.raises(ValueError, match="approach 3"):
        critical_volumes(PHASES, {0: 1, 1: 1, 2: 1}, [1800] * 4)


@pytest.mark.parametrize("L, y, cycle, flag", [(12, 0.6, 60, False), (10, 0.5, 40, False),
                                               (0, 0.0, 40, False), (12, 0.95, 120, True)])
def test_webster_examples(L, y, cycle, flag):
    w = webster_cycle(L, y)
    assert (w.cycle, w.oversaturated) == (cycle, flag)


def test_webster_raw_value():
    assert webster_cycle(12, 0.6).raw == pytest.approx(57.5)


def test_round_half_up():
    assert round_half_up(57.5) == 60
    assert round_half_up(57.4999) == 55
    assert round_half_up(62.5) == 65
    assert round_half_up(22.5) == 25


RATIO = st.integers(0, 949).map(lambda k: k / 1000)


@given(st.floats(0, 40), RATIO, RATIO)
def test_webster_monotone_and_bounded(L, y1, y2):
    assume(y1 < y2)
    a, b = webster_cycle(L, y1), webster_cycle(L, y2)
    assert a.raw < b.raw
    assert a.cycle <= b.cycle
    for w in (a, b):
        assert 40 <= w.cycle <= 120 and w.cycle % 5 == 0


@pytest.mark.parametrize("ratios, expected", [([0.3, 0.3], [24, 24]), ([0.4, 0.2], [32, 16]),
                                              ([0, 0], [24, 24])])
def test_green_split_examples(ratios, expected):
    assert green_splits(60, 12, ratios) == expected


def test_min_green_pins_phase():
    g = green_splits(60, 12, [0.59, 0.01], [5, 5])
    assert g == [43.0, 5.0]


def test_infeasible_min_greens():
    with pytest.raises(InfeasiblePlanError):
        green_splits(40, 30, [0.2, 0.2], [6, 6])


@settings(max_examples=200)
@given(st.integers(8, 24).map(lambda k: 5.0 * k), st.floats(0, 20),
       st.lists(st.floats(0, 0.5), min_size=1, max_size=4))
def test_split_scale_invariance(cycle, L, ratios):
    assume(cycle - L > 0)
    base = green_splits(cycle, L, ratios)
    assert green_splits(cycle, L, [3.0 * y for y in ratios]) == base
    units = [round(g * 10) for g in base]
    assert sum(units) == round((cycle - L) * 10)


def test_fuzzy_peaks_give_singletons():
    peak = FUZZY.peak
    assert fuzzy_adjust(FUZZY, peak("ratio", "MED"), peak("trend", "STEADY")) == 1.0
    assert fuzzy_adjust(FUZZY, peak("ratio", "HIGH"), peak("trend", "RISING")) == 1.15
    assert fuzzy_adjust(FUZZY, peak("ratio", "LOW"), peak("trend", "FALLING")) == 0.85


def test_fuzzy_midpoint_hand_evaluated():
    x = 0.5 * (0.55 + 1.0)  # 0.775
    mu_med = (0.8 - x) / (0.8 - 0.55)
    mu_high = (x - 0.7) / (1.0 - 0.7)
    expected = (mu_med * 1.0 + mu_high * 1.15) / (mu_med + mu_high)
    assert fuzzy_adjust(FUZZY, x, 0.0) == pytest.approx(expected, rel=1e-12)


def test_memberships_cover_domains():
    for x in np.linspace(-5, 5, 401):
        assert sum(membership(x, s) for s in FUZZY.ratio_sets.values()) > 0
    for x in np.linspace(-5000, 5000, 401):
        assert sum(membership(x, s) for s in FUZZY.trend_sets.values()) > 0


def test_membership_shapes():
    assert membership(0.55, (0.3, 0.55, 0.55, 0.8)) == 1.0
    assert membership(0.3, (0.3, 0.55, 0.55, 0.8)) == 0.0
    assert membership(-1e9, (-math.inf, -math.inf, 0, 0.4)) == 1.0
    assert membership(0.2, (-math.inf, -math.inf, 0, 0.4)) == pytest.approx(0.5)


def test_fuzzy_config_round_trip():
    assert FuzzyConfig.from_dict(FUZZY.to_dict()) == FUZZY
    with pytest.raises(ValueError, match="rule table"):
        FuzzyConfig(rules={("LOW", "STEADY"): "short"})


def test_fuzzy_rejects_non_finite():
    with pytest.raises(ValueError):
        fuzzy_adjust(FUZZY, math.nan, 0.0)


SCENARIO = default_scenario(lost_time_per_phase=6)  # L = 12


def test_plan_balanced():
    p = plan_for_interval(SCENARIO, [540] * 4, ControlConfig(use_fuzzy=False))
    assert (p.cycle_length, p.greens, p.lost_time) == (60, (24.0, 24.0), 12)
    assert plan_for_interval(SCENARIO, [540] * 4) == p  # MED/STEADY peak keeps the cycle


def test_plan_zero_forecast():
    p = plan_for_interval(SCENARIO, [0] * 4, ControlConfig(use_fuzzy=False))
    assert (p.cycle_length, p.greens) == (40, (14.0, 14.0))


def test_plan_oversaturated():
    p = plan_for_interval(SCENARIO, [1800] * 4)
    assert p.cycle_length == 120 and p.oversaturated
    p.validate(SCENARIO.phases, 40, 120)


@settings(max_examples=200)
@given(st.lists(st.floats(0, 2000), min_size=4, max_size=4), st.floats(-500, 500))
def test_plans_always_valid(volumes, trend):
    p = plan_for_interval(SCENARIO, volumes, trend=trend)
    p.validate(SCENARIO.phases, 40, 120)
    assert p.cycle_length % 5 == 0


def test_plan_rejects_negative_forecast():
    with pytest.raises(ValueError):
        plan_for_interval(SCENARIO, [-1, 0, 0, 0])


def test_fixed_plan_equal_split():
    p = fixed_plan(SCENARIO, 90)
    assert p.greens == (39.0, 39.0) and p.cycle_length == 90


@given(st.floats(-2, 3), st.floats(-1e4, 1e4))
def test_fuzzy_output_bounded(ratio, trend):
    assert 0.85 <= fuzzy_adjust(FUZZY, ratio, trend) <= 1.15
