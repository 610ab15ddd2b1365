"""Transport-request generation: perfect predictions, noisy predictions, FR threshold."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .field import FieldMap, Point, SpeedProfile, max_service_travel_time

_EPS = 1e-9


class InsufficientData(ValueError):
    """Too few or degenerate samples for a regression."""


@dataclass(frozen=True)
class Gaussian:
    mean: float
    sd: float = 0.0

    def __post_init__(self) -> None:
        if self.sd < 0:
            raise ValueError("sd must be non-negative")

    @property
    def degenerate(self) -> bool:
        return self.sd == 0.0

    def sample(self, rng: np.random.Generator) -> float:
        if self.sd == 0.0:
            return self.mean
        return float(rng.normal(self.mean, self.sd))


@dataclass(frozen=True)
class DeterministicRequest:
    """Exact tray-full prediction; ``remaining_fill`` counts from ``created_at``."""

    request_id: Hashable
    picker_id: int
    created_at: float
    remaining_fill: float
    full_location: Point
    furrow: int = 0

    def __post_init__(self) -> None:
        if self.remaining_fill < 0:
            raise ValueError("remaining_fill must be non-negative")

    @property
    def full_time(self) -> float:
        return self.created_at + self.remaining_fill


@dataclass(frozen=True)
class StochasticRequest:
    """Tray-full prediction as distributions.

    ``speed`` is the signed along-row speed (negative when walking toward the
    headland). ``fill_time`` counts from ``created_at``.
    """

    request_id: Hashable
    picker_id: int
    created_at: float
    fill_time: Gaussian
    speed: Gaussian
    current_location: Point
    furrow: int = 0

    @property
    def expected_full_time(self) -> float:
        return self.created_at + max(self.fill_time.mean, 0.0)

    def expected_location(self) -> Point:
        y = self.current_location.y + self.speed.mean * max(self.fill_time.mean, 0.0)
        return Point(self.current_location.x, max(y, 0.0))


@dataclass(frozen=True)
class UncertaintyParams:
    bias_fraction: float = 0.0
    pred_sd: float = 0.0
    loc_noise_halfwidth: float = 0.0
    window_s: float = 60.0
    sample_period_s: float = 1.0

    def __post_init__(self) -> None:
        if min(self.bias_fraction, self.pred_sd, self.loc_noise_halfwidth) < 0:
            raise ValueError("uncertainty parameters must be non-negative")
        if self.window_s <= 0 or self.sample_period_s <= 0:
            raise ValueError("window and sample period must be positive")

    @property
    def exact(self) -> bool:
        return self.bias_fraction == 0 and self.pred_sd == 0 and self.loc_noise_halfwidth == 0


@dataclass(frozen=True)
class FillPrediction:
    steps: int
    fill_s: float
    full_y: float
    fills_in_furrow: bool


def predict_fill(
    y: float, mass: float, capacity: float, rate: float, v_pick: float, dt: float
) -> FillPrediction:
    """Step-exact forecast of when and where a picking tray becomes full.

    The picker walks toward the headland (decreasing y). The tray fills in
    this furrow only if the picker is still inside it after the first
    ``steps - 1`` steps.
    """
    if rate <= 0:
        raise ValueError("picking rate must be positive")
    n = max(math.ceil((capacity - mass) / (rate * dt) - _EPS), 0)
    inside = n == 0 or y - (n - 1) * v_pick * dt > _EPS
    return FillPrediction(n, n * dt, max(y - n * v_pick * dt, 0.0), inside)


def make_perfect_request(
    picker,
    fr_request: float,
    capacity: float,
    dt: float,
    now: float,
    request_id: Hashable,
) -> DeterministicRequest | None:
    """Ground-truth request once the fill ratio reaches ``fr_request``.

    ``picker`` needs ``y``, ``x``, ``mass``, ``furrow``, ``picker_id`` and a
    ``draw`` with ``v_pick`` and ``pick_time``. Returns ``None`` while the fill
    ratio is below the threshold or if the tray will not fill in this furrow.
    """
    if picker.mass / capacity < fr_request - _EPS:
        return None
    rate = capacity / picker.draw.pick_time
    pred = predict_fill(picker.y, picker.mass, capacity, rate, picker.draw.v_pick, dt)
    if not pred.fills_in_furrow:
        return None
    return DeterministicRequest(
        request_id=request_id,
        picker_id=picker.picker_id,
        created_at=now,
        remaining_fill=pred.fill_s,
        full_location=Point(picker.x, pred.full_y),
        furrow=picker.furrow,
    )


def estimate_speed_regression(samples: Sequence[tuple[float, float]]) -> Gaussian:
    """OLS slope of position on time, with the slope's standard error as sd."""
    if len(samples) < 3:
        raise InsufficientData(f"need at least 3 samples, got {len(samples)}")
    t = np.array([s[0] for s in samples], dtype=float)
    y = np.array([s[1] for s in samples], dtype=float)
    tc = t - t.mean()
    sxx = float(tc @ tc)
    if sxx <= 0:
        raise InsufficientData("sample times have zero variance")
    slope = float(tc @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * tc
    sse = float(resid @ resid)
    se = math.sqrt(max(sse, 0.0) / ((len(t) - 2) * sxx))
    return Gaussian(slope, se)


def draw_bias(u: UncertaintyParams, mean_pick_time: float, rng: np.random.Generator) -> float:
    """Per-tray prediction bias, uniform on +-bias_fraction * mean_pick_time."""
    half = u.bias_fraction * mean_pick_time
    if half == 0:
        return 0.0
    return float(rng.uniform(-half, half))


def make_stochastic_request(
    truth: tuple[float, float, Point],
    u: UncertaintyParams,
    mean_pick_time: float,
    rng: np.random.Generator,
    *,
    request_id: Hashable = 0,
    picker_id: int = 0,
    created_at: float = 0.0,
    furrow: int = 0,
    bias: float | None = None,
    history: Sequence[tuple[float, float]] | None = None,
) -> StochasticRequest:
    """Wrap a ground-truth forecast in synthetic prediction error.

    ``truth`` is (fill time, signed along-row speed, current location).
    ``history`` holds true (t, y) positions; each gets uniform noise of
    half-width ``loc_noise_halfwidth`` before the speed regression. Without
    noise the true speed is used directly.
    """
    fill_gt, v_gt, loc = truth
    if bias is None:
        bias = draw_bias(u, mean_pick_time, rng)
    fill = Gaussian(fill_gt + bias, u.pred_sd)
    l = u.loc_noise_halfwidth
    if l == 0 or history is None:
        speed = Gaussian(v_gt, 0.0)
    else:
        noisy = [(t, y + float(rng.uniform(-l, l))) for t, y in history]
        speed = estimate_speed_regression(noisy)
    return StochasticRequest(
        request_id=request_id,
        picker_id=picker_id,
        created_at=created_at,
        fill_time=fill,
        speed=speed,
        current_location=loc,
        furrow=furrow,
    )


def fr_threshold(
    v_headland: float, v_furrow: float, fm: FieldMap, mean_pick_time: float
) -> float:
    """Largest fill ratio at which a prediction still leaves time to send a robot."""
    if mean_pick_time <= 0:
        raise ValueError("mean_pick_time must be positive")
    worst = max_service_travel_time(fm, SpeedProfile(v_headland, v_furrow))
    return min(max(1.0 - worst / mean_pick_time, 0.0), 1.0)
