from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from harvestbot.config import load_config
from harvestbot.distributions import TrayDraw
from harvestbot.field import Point
from harvestbot.request_gen import (
    InsufficientData,
    UncertaintyParams,
    draw_bias,
    estimate_speed_regression,
    fr_threshold,
    make_perfect_request,
    make_stochastic_request,
    predict_fill,
)


def picker(y, mass, v_pick=0.05, pick_time=300.0):
    return SimpleNamespace(picker_id=0, x=1.0, y=y, mass=mass, furrow=0,
                           draw=TrayDraw(v_pick, 1.0, pick_time))


def test_full_tray_gives_immediate_request():
    q = make_perfect_request(picker(30.0, 4500.0), 1.0, 4500, 0.5, 12.0, "R")
    assert q.remaining_fill == 0 and q.full_time == 12.0
    assert q.full_location == Point(1.0, 30.0)


def test_below_threshold_gives_nothing():
    assert make_perfect_request(picker(30.0, 4000.0), 1.0, 4500, 0.5, 0.0, "R") is None


def test_no_request_when_tray_fills_past_furrow_end():
    # 200 s of picking remain at 0.05 m/s: 10 m of row needed, only 2 m left
    p = picker(2.0, 1500.0)
    assert make_perfect_request(p, 0.3, 4500, 0.5, 0.0, "R") is None


def test_request_at_pick_start():
    q = make_perfect_request(picker(30.0, 0.0), 0.0, 4500, 0.5, 0.0, "R")
    assert q.remaining_fill == pytest.approx(300.0)
    assert q.full_location.y == pytest.approx(30.0 - 0.05 * 300.0)


def test_prediction_is_step_exact():
    pred = predict_fill(50.0, 4400.0, 4500.0, 15.0, 0.05, 0.5)
    # 100 g at 7.5 g/step needs 14 steps
    assert pred.steps == 14 and pred.fill_s == 7.0


def test_zero_uncertainty_matches_truth():
    rng = np.random.default_rng(0)
    q = make_stochastic_request((80.0, -0.05, Point(1.0, 20.0)), UncertaintyParams(), 275.5, rng)
    assert q.fill_time.degenerate and q.fill_time.mean == 80.0
    assert q.speed.degenerate and q.speed.mean == -0.05
    assert q.expected_full_time == 80.0
    assert q.expected_location() == Point(1.0, 16.0)


@given(st.integers(0, 2**32 - 1))
def test_bias_is_bounded(seed):
    b = draw_bias(UncertaintyParams(bias_fraction=0.1), 275.5, np.random.default_rng(seed))
    assert abs(b) <= 27.55


def test_prediction_sd_is_configured_value():
    u = UncertaintyParams(bias_fraction=0.1, pred_sd=30.0)
    q = make_stochastic_request((80.0, -0.05, Point(1.0, 20.0)), u, 275.5, np.random.default_rng(1))
    assert q.fill_time.sd == 30.0


def test_noisy_history_estimates_speed():
    hist = [(float(t), 30.0 - 0.05 * t) for t in range(60)]
    u = UncertaintyParams(loc_noise_halfwidth=0.5)
    q = make_stochastic_request((80.0, -0.05, Point(1.0, 27.0)), u, 275.5,
                                np.random.default_rng(3), history=hist)
    assert q.speed.sd > 0
    assert abs(q.speed.mean + 0.05) < 4 * q.speed.sd


def test_regression_exact_line():
    g = estimate_speed_regression([(0, 0), (1, 1), (2, 2)])
    assert g.mean == pytest.approx(1.0) and g.sd == pytest.approx(0.0, abs=1e-12)


def test_regression_four_points():
    g = estimate_speed_regression([(0, 0), (1, 0), (2, 2), (3, 2)])
    # t_bar 1.5, Sxx 5, Sxy 4, residuals (0.2, -0.6, 0.6, -0.2) => SSE 0.8
    assert g.mean == pytest.approx(0.8)
    assert g.sd == pytest.approx(np.sqrt(0.8 / (2 * 5)))


def test_regression_needs_spread_and_samples():
    with pytest.raises(InsufficientData):
        estimate_speed_regression([(1, 0), (1, 1), (1, 2)])
    with pytest.raises(InsufficientData):
        estimate_speed_regression([(0, 0), (1, 1)])


@pytest.mark.parametrize("speed, expected", [(1.5, 0.83), (1.0, 0.74), (2.0, 0.87)])
def test_threshold_reference_field(speed, expected):
    rc = load_config("full-block")
    thr = fr_threshold(speed, speed, rc.field, rc.distributions.pick_time.mean)
    assert round(thr, 2) == pytest.approx(expected, abs=0.01)


def test_threshold_clamps_to_unit_interval(small_field):
    assert fr_threshold(0.01, 0.01, small_field, 10.0) == 0.0
    with pytest.raises(ValueError):
        fr_threshold(1.0, 1.0, small_field, 0.0)
