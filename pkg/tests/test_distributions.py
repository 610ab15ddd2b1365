from __future__ import annotations

import numpy as np
import pytest

from harvestbot.distributions import (
    DistributionError,
    Histogram,
    ParamDistributions,
    sample_tray_params,
    synthetic_distributions,
)


def test_point_histogram_is_exact():
    h = Histogram((2.0, 2.0), (1.0,))
    assert h.sample(np.random.default_rng(0)) == 2.0


def test_seeded_draws_repeat():
    d = synthetic_distributions()
    r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
    assert [sample_tray_params(d, r1) for _ in range(20)] == [sample_tray_params(d, r2) for _ in range(20)]


def test_bin_shares_follow_weights():
    h = Histogram((0.0, 1.0, 2.0), (0.3, 0.7))
    rng = np.random.default_rng(42)
    x = np.array([h.sample(rng) for _ in range(100_000)])
    assert abs((x < 1).mean() - 0.3) < 0.01


def test_synthetic_pick_time_mean():
    assert synthetic_distributions().pick_time.mean == pytest.approx(275.5)


def test_invalid_histograms():
    with pytest.raises(DistributionError):
        Histogram((), ())
    with pytest.raises(DistributionError):
        Histogram((0.0, 1.0), (0.5, 0.5))
    with pytest.raises(DistributionError):
        Histogram((1.0, 0.0), (1.0,))


def test_degenerate_distributions():
    d = ParamDistributions.degenerate(0.1, 1.0, 300.0)
    t = sample_tray_params(d, np.random.default_rng(0))
    assert (t.v_pick, t.v_walk, t.pick_time) == (0.1, 1.0, 300.0)
