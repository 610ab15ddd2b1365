"""Field geometry: furrows, headland stations and along-path travel."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

_EPS = 1e-9


class FieldError(ValueError):
    """Invalid geometry or a point outside the field."""


class FieldExhausted(Exception):
    """No unharvested furrow is left for a picker."""


@dataclass(frozen=True)
class Point:
    x: float
    y: float


@dataclass(frozen=True)
class SpeedProfile:
    headland_speed: float
    furrow_speed: float

    def __post_init__(self) -> None:
        if self.headland_speed <= 0 or self.furrow_speed <= 0:
            raise FieldError("speeds must be strictly positive")

    @classmethod
    def uniform(cls, speed: float) -> SpeedProfile:
        return cls(speed, speed)


class FurrowStatus(enum.Enum):
    UNHARVESTED = "unharvested"
    OCCUPIED = "occupied"
    HARVESTED = "harvested"


@dataclass(frozen=True)
class FieldMap:
    """One half of a split harvesting block.

    Furrow ``i`` runs along y at ``x = (i + 0.5) * bed_spacing``. The headland
    is the line ``y = 0`` and pickers harvest the stretch between the split
    line and the headland.
    """

    furrow_count: int
    furrow_length: float
    bed_spacing: float
    split_line_y: float
    station_positions: tuple[Point, ...] = field(default_factory=tuple)
    active_station_index: int = 0

    def __post_init__(self) -> None:
        if self.furrow_count < 1:
            raise FieldError("furrow_count must be >= 1")
        if self.furrow_length <= 0 or self.bed_spacing <= 0:
            raise FieldError("furrow_length and bed_spacing must be > 0")
        if not 0 < self.split_line_y <= self.furrow_length:
            raise FieldError("split_line_y must lie in (0, furrow_length]")
        object.__setattr__(self, "station_positions", tuple(self.station_positions))
        if not self.station_positions:
            raise FieldError("at least one collection station is required")
        for s in self.station_positions:
            if abs(s.y) > _EPS or not -_EPS <= s.x <= self.width + _EPS:
                raise FieldError(f"station {s} is not on the headland within the field")
        if not 0 <= self.active_station_index < len(self.station_positions):
            raise FieldError("active_station_index out of range")

    @property
    def width(self) -> float:
        return self.furrow_count * self.bed_spacing

    @property
    def active_station(self) -> Point:
        return self.station_positions[self.active_station_index]

    def furrow_x(self, index: int) -> float:
        if not 0 <= index < self.furrow_count:
            raise FieldError(f"furrow {index} out of range")
        return (index + 0.5) * self.bed_spacing

    def furrow_of(self, x: float) -> int:
        return min(self.furrow_count - 1, max(0, int(x // self.bed_spacing)))

    def with_active_station(self, index: int) -> FieldMap:
        if index == self.active_station_index:
            return self
        return FieldMap(
            self.furrow_count,
            self.furrow_length,
            self.bed_spacing,
            self.split_line_y,
            self.station_positions,
            index,
        )

    def contains(self, p: Point) -> bool:
        return -_EPS <= p.x <= self.width + _EPS and -_EPS <= p.y <= self.furrow_length + _EPS

    def service_interval(self, index: int | None = None) -> tuple[float, float]:
        """x-range of the headland served by a station (its nearest-station cell)."""
        if index is None:
            index = self.active_station_index
        xs = [s.x for s in self.station_positions]
        me = xs[index]
        lo, hi = 0.0, self.width
        for j, other in enumerate(xs):
            if j == index:
                continue
            mid = 0.5 * (me + other)
            if other < me:
                lo = max(lo, mid)
            elif other > me:
                hi = min(hi, mid)
            elif j < index:
                # coincident station with a lower index owns the whole cell
                return (me, me)
        return lo, hi


def manhattan_components(a: Point, b: Point, fm: FieldMap) -> tuple[float, float]:
    """Headland and furrow legs of the path from headland point ``a`` to ``b``."""
    if abs(a.y) > _EPS:
        raise FieldError(f"{a} is not on the headland")
    if not fm.contains(a) or not fm.contains(b):
        raise FieldError(f"point outside field extent: {a if not fm.contains(a) else b}")
    return abs(a.x - b.x), max(b.y, 0.0)


def manhattan_distance(a: Point, b: Point, fm: FieldMap) -> float:
    h, f = manhattan_components(a, b, fm)
    return h + f


def one_way_travel_time(d_headland: float, d_furrow: float, profile: SpeedProfile) -> float:
    if d_headland < 0 or d_furrow < 0:
        raise FieldError("distances must be non-negative")
    return d_headland / profile.headland_speed + d_furrow / profile.furrow_speed


def travel_time(a: Point, b: Point, fm: FieldMap, profile: SpeedProfile) -> float:
    return one_way_travel_time(*manhattan_components(a, b, fm), profile)


def next_furrow(current: int, status: Sequence[FurrowStatus]) -> int:
    """Closest unharvested, unoccupied furrow to ``current``; ties go to the lower index."""
    best = None
    for i, s in enumerate(status):
        if s is not FurrowStatus.UNHARVESTED:
            continue
        if best is None or abs(i - current) < abs(best - current):
            best = i
    if best is None:
        raise FieldExhausted("no unharvested furrow remains")
    return best


def active_station(fm: FieldMap, crew_x: Sequence[float]) -> int:
    if not crew_x:
        return fm.active_station_index
    centroid = sum(crew_x) / len(crew_x)
    best = 0
    for i, s in enumerate(fm.station_positions):
        if abs(s.x - centroid) < abs(fm.station_positions[best].x - centroid) - _EPS:
            best = i
    return best


def max_service_travel_time(fm: FieldMap, profile: SpeedProfile) -> float:
    """Longest one-way trip from the active station to any point of its cell."""
    st = fm.active_station
    lo, hi = fm.service_interval()
    reach = max(st.x - lo, hi - st.x, 0.0)
    return one_way_travel_time(reach, fm.split_line_y, profile)


def max_service_distance(fm: FieldMap) -> float:
    st = fm.active_station
    lo, hi = fm.service_interval()
    return max(st.x - lo, hi - st.x, 0.0) + fm.split_line_y


def evenly_spaced_stations(furrow_count: int, bed_spacing: float, count: int) -> tuple[Point, ...]:
    """Stations at the centres of ``count`` equal headland segments."""
    width = furrow_count * bed_spacing
    seg = width / count
    return tuple(Point((j + 0.5) * seg, 0.0) for j in range(count))
