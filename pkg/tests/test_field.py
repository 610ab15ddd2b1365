from __future__ import annotations

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from harvestbot.config import load_config
from harvestbot.field import (
    FieldError,
    FieldExhausted,
    FieldMap,
    FurrowStatus,
    Point,
    SpeedProfile,
    active_station,
    manhattan_distance,
    max_service_distance,
    next_furrow,
    one_way_travel_time,
    travel_time,
)

U, H = FurrowStatus.UNHARVESTED, FurrowStatus.HARVESTED


def wide_field(stations=(Point(50.0, 0.0),)):
    return FieldMap(100, 100.0, 1.0, 50.0, stations)


def test_manhattan_headland_plus_furrow():
    assert manhattan_distance(Point(50, 0), Point(20, 30), wide_field()) == pytest.approx(60.0)


def test_manhattan_zero():
    fm = wide_field((Point(0.0, 0.0),))
    assert manhattan_distance(Point(0, 0), Point(0, 0), fm) == 0.0


def test_manhattan_rejects_points_off_field():
    with pytest.raises(FieldError):
        manhattan_distance(Point(50, 0), Point(500, 10), wide_field())
    with pytest.raises(FieldError):
        manhattan_distance(Point(50, 3), Point(20, 10), wide_field())


@given(st.floats(0, 100), st.floats(0, 100), st.floats(0, 100))
def test_manhattan_at_least_euclidean(ax, bx, by):
    fm = wide_field()
    d = manhattan_distance(Point(ax, 0), Point(bx, by), fm)
    assert d >= math.hypot(ax - bx, by) - 1e-9


def test_largest_service_distance_on_reference_field():
    fm = load_config("full-block").field
    # four stations split the 165 m headland; the far corner of a cell is ~71 m away
    assert max_service_distance(fm) == pytest.approx(71.0, abs=0.5)


def test_travel_time_two_speeds():
    assert one_way_travel_time(30, 30, SpeedProfile(0.4, 1.2)) == pytest.approx(100.0)


def test_travel_time_single_speed():
    assert one_way_travel_time(60, 0, SpeedProfile.uniform(1.5)) == pytest.approx(40.0)


def test_travel_time_zero():
    assert one_way_travel_time(0, 0, SpeedProfile(0.4, 1.2)) == 0.0


def test_travel_time_uses_path_legs():
    fm = wide_field()
    assert travel_time(Point(50, 0), Point(20, 30), fm, SpeedProfile(0.5, 1.0)) == pytest.approx(90.0)


def test_speed_profile_rejects_nonpositive():
    with pytest.raises(FieldError):
        SpeedProfile(0.0, 1.0)


def test_next_furrow_nearest():
    status = [H] * 10
    status[4] = status[7] = U
    assert next_furrow(3, status) == 4


def test_next_furrow_tie_goes_low():
    status = [H] * 10
    status[2] = status[6] = U
    assert next_furrow(4, status) == 2


def test_next_furrow_exhausted():
    with pytest.raises(FieldExhausted):
        next_furrow(0, [H] * 5)


def test_active_station_single():
    assert active_station(wide_field(), [10.0, 90.0]) == 0


def test_active_station_nearest():
    fm = wide_field((Point(10, 0), Point(90, 0)))
    assert active_station(fm, [15.0, 25.0]) == 0


def test_active_station_tie_goes_low():
    fm = wide_field((Point(30, 0), Point(50, 0)))
    assert active_station(fm, [40.0]) == 0


def test_field_validation():
    with pytest.raises(FieldError):
        FieldMap(0, 100, 1.65, 50, (Point(0, 0),))
    with pytest.raises(FieldError):
        FieldMap(10, 100, 1.65, 50, ())
    with pytest.raises(FieldError):
        FieldMap(10, 100, 1.65, 50, (Point(100, 0),))
