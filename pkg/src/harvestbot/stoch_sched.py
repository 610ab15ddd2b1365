"""Multiple-scenario scheduling with request rejection.

Each live request is sampled into deterministic scenarios. A scenario is
solved exactly (small instances) or with the SRLPT heuristic; solutions are
folded into a consensus ranking that drives dispatching. A rejected request
is transported by the picker, costing the full walking round trip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .field import FieldMap, Point, SpeedProfile, travel_time
from .request_gen import StochasticRequest

_EPS = 1e-9

DEFAULT_EXACT_CAP = 6
DEFAULT_GRID_S = 1.0
HEADLAND_REJECT_M = 5.0


class ScenarioSizeError(ValueError):
    """Scenario is larger than the exact solver accepts."""


@dataclass(frozen=True)
class ScenarioRequest:
    """One sampled request; times are relative to the planning instant."""

    request_id: Hashable
    fill: float
    one_way: float
    process: float
    self_time: float
    y_full: float = math.inf

    @property
    def release(self) -> float:
        return max(self.fill - self.one_way, 0.0)


@dataclass(frozen=True)
class Scenario:
    requests: tuple[ScenarioRequest, ...]
    load_time: float = 5.0


@dataclass(frozen=True)
class Service:
    order: int
    start: float
    robot: int


@dataclass
class ScenarioSolution:
    served: dict = field(default_factory=dict)
    rejected: frozenset = frozenset()
    objective: float = 0.0

    def serving_order(self) -> list:
        return [rid for rid, _ in sorted(self.served.items(), key=lambda kv: kv[1].order)]


@dataclass
class ConsensusPlan:
    scores: dict
    order: list
    rejected: frozenset


def make_scenario_request(
    request_id: Hashable,
    fill: float,
    one_way: float,
    self_time: float,
    load_time: float,
    unload_time: float,
    y_full: float = math.inf,
) -> ScenarioRequest:
    return ScenarioRequest(
        request_id, fill, one_way, 2.0 * one_way + load_time + unload_time, self_time, y_full
    )


def self_transport_time(
    full_location: Point,
    walk_speed: float,
    station: Point,
    unload_time: float,
    fm: FieldMap,
    full_time: float = 0.0,
) -> tuple[float, float]:
    """Round trip of a picker carrying its own tray: (duration, completion instant)."""
    if walk_speed <= 0:
        raise ValueError("walk speed must be positive")
    one_way = travel_time(station, full_location, fm, SpeedProfile.uniform(walk_speed))
    total = 2.0 * one_way + unload_time
    return total, full_time + total


def get_samples(
    requests: Sequence[StochasticRequest],
    count: int,
    rng: np.random.Generator,
    *,
    now: float,
    station: Point,
    fm: FieldMap,
    profile: SpeedProfile,
    walk_speeds: Mapping[int, float],
    load_time: float,
    unload_time: float,
) -> list[Scenario]:
    """Draw ``count`` deterministic scenarios.

    Fill times are clamped at zero; the sampled full location follows the
    sampled speed along the row and stops at the headland.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    out = []
    for _ in range(count):
        reqs = []
        for q in requests:
            f = max(q.fill_time.sample(rng), 0.0)
            v = q.speed.sample(rng)
            y = min(max(q.current_location.y + v * f, 0.0), fm.furrow_length)
            loc = Point(q.current_location.x, y)
            fill_rel = max(q.created_at + f - now, 0.0)
            u = travel_time(station, loc, fm, profile)
            st, _ = self_transport_time(loc, walk_speeds[q.picker_id], station, unload_time, fm)
            reqs.append(make_scenario_request(q.request_id, fill_rel, u, st, load_time, unload_time, y))
        out.append(Scenario(tuple(reqs), load_time))
    return out


def _snap(t: float, grid: float) -> float:
    if grid <= 0:
        return t
    return grid * math.ceil(t / grid - _EPS)


def _served_cost(q: ScenarioRequest, start: float, load_time: float) -> float:
    return start + q.one_way + load_time - q.fill


def _earliest(free: Sequence[float]) -> int:
    best = 0
    for k in range(1, len(free)):
        if free[k] < free[best] - _EPS:
            best = k
    return best


def _finish(
    scn: Scenario, seqs: dict[int, tuple[float, int]], ids_served: Sequence[int]
) -> ScenarioSolution:
    reqs = scn.requests
    ranked = sorted(ids_served, key=lambda j: (seqs[j][0], seqs[j][1], ids_served.index(j)))
    served = {reqs[j].request_id: Service(o + 1, seqs[j][0], seqs[j][1]) for o, j in enumerate(ranked)}
    rejected = frozenset(q.request_id for j, q in enumerate(reqs) if j not in seqs)
    obj = sum(_served_cost(reqs[j], seqs[j][0], scn.load_time) for j in ids_served)
    obj += sum(q.self_time for j, q in enumerate(reqs) if j not in seqs)
    return ScenarioSolution(served, rejected, obj)


def solve_scenario_exact(
    scn: Scenario,
    availability: Sequence[float],
    *,
    allow_rejection: bool = True,
    grid: float = DEFAULT_GRID_S,
    cap: int = DEFAULT_EXACT_CAP,
) -> ScenarioSolution:
    """Minimum total non-productive time over serve/reject choices and robot sequences.

    Robots are identical, so appending each served request to the robot that
    frees earliest loses no optimum; every prefix of such a sequence is a
    candidate with the remaining requests rejected. Starts lie on a grid of
    ``grid`` seconds, and serving past the horizon (latest fill plus longest
    self-transport) is never better than rejecting.
    """
    reqs = scn.requests
    n = len(reqs)
    if n > cap:
        raise ScenarioSizeError(f"{n} requests exceed the exact cap of {cap}; use solve_scenario_srlpt")
    a = [float(x) for x in availability]
    if n == 0:
        return ScenarioSolution()
    horizon = max(q.fill for q in reqs) + max(q.self_time for q in reqs)
    total_self = sum(q.self_time for q in reqs)

    best_cost = math.inf
    best: tuple[dict, list] | None = None
    if allow_rejection or not a:
        best_cost = total_self
        best = ({}, [])
    if not a:
        if not allow_rejection and n:
            raise ValueError("no robot can serve and rejection is forbidden")
        return _finish(scn, {}, [])

    starts: dict[int, tuple[float, int]] = {}
    path: list[int] = []

    def walk(free: list[float], cost: float, mask: int) -> None:
        nonlocal best_cost, best
        k = _earliest(free)
        for j in range(n):
            if mask >> j & 1:
                continue
            q = reqs[j]
            s = _snap(max(q.release, free[k]), grid)
            if allow_rejection and s > horizon + _EPS:
                continue
            c = cost - q.self_time + _served_cost(q, s, scn.load_time)
            old = free[k]
            free[k] = s + q.process
            starts[j] = (s, k)
            path.append(j)
            full = len(path) == n
            if (allow_rejection or full) and c < best_cost - _EPS:
                best_cost = c
                best = (dict(starts), list(path))
            walk(free, c, mask | (1 << j))
            path.pop()
            del starts[j]
            free[k] = old

    walk(list(a), total_self, 0)
    assert best is not None
    return _finish(scn, best[0], best[1])


def solve_scenario_srlpt(
    scn: Scenario,
    availability: Sequence[float],
    *,
    grid: float = DEFAULT_GRID_S,
    headland_reject_m: float = HEADLAND_REJECT_M,
) -> ScenarioSolution:
    """Pool released requests; a free robot takes the longest process time first.

    Requests filling within ``headland_reject_m`` of the headland are rejected
    up front, and so is any request whose tray fills before a robot could be
    dispatched to it.
    """
    reqs = scn.requests
    a = [float(x) for x in availability]
    todo = [j for j, q in enumerate(reqs) if q.y_full >= headland_reject_m - _EPS]
    seqs: dict[int, tuple[float, int]] = {}
    served: list[int] = []
    if not a:
        todo = []
    free = list(a)
    while todo:
        k = _earliest(free)
        t = free[k]
        todo = [j for j in todo if reqs[j].fill >= t - _EPS]
        if not todo:
            break
        pool = [j for j in todo if reqs[j].release <= t + _EPS]
        if not pool:
            t = min(reqs[j].release for j in todo)
            pool = [j for j in todo if reqs[j].release <= t + _EPS]
        j = min(pool, key=lambda i: (-reqs[i].process, reqs[i].fill, i))
        s = _snap(t, grid)
        seqs[j] = (s, k)
        served.append(j)
        free[k] = s + reqs[j].process
        todo.remove(j)
    return _finish(scn, seqs, served)


def consensus(
    solutions: Sequence[ScenarioSolution],
    live_requests: Sequence[Hashable],
    expected_full: Mapping[Hashable, float] | None = None,
) -> ConsensusPlan:
    """Fold scenario solutions into one ranking.

    A scenario adds -1 for a rejection and N - order for a service. Ties go to
    the earlier expected full time, then the request's position in
    ``live_requests``.
    """
    if not solutions:
        raise ValueError("at least one scenario solution is required")
    n = len(live_requests)
    scores = {rid: 0 for rid in live_requests}
    for sol in solutions:
        for rid in live_requests:
            svc = sol.served.get(rid)
            scores[rid] += -1 if svc is None else n - svc.order
    pos = {rid: i for i, rid in enumerate(live_requests)}
    ef = expected_full or {}
    order = sorted(live_requests, key=lambda r: (-scores[r], ef.get(r, 0.0), pos[r]))
    return ConsensusPlan(scores, order, frozenset(r for r in live_requests if scores[r] < 0))


def expected_release(req: StochasticRequest, one_way: float) -> float:
    return req.created_at + max(req.fill_time.mean - one_way, 0.0)


def dispatch_decision(
    plan: ConsensusPlan,
    available_robots: Sequence[int],
    releases: Mapping[Hashable, float],
    now: float,
    *,
    dispatched: Iterable[Hashable] = (),
    full_now: Iterable[Hashable] = (),
) -> tuple[list[tuple[int, Hashable]], list[Hashable]]:
    """Dispatch commands and reject flags at ``now``.

    Available robots, lowest id first, go to the leading undispatched
    requests of the consensus order; a robot waits if the leading request's
    expected release has not come yet. Requests in the plan's rejection set
    are never dispatched. A request whose tray is full without a robot gets a
    reject flag.
    """
    taken = set(dispatched)
    commands: list[tuple[int, Hashable]] = []
    robots = sorted(available_robots)
    queue = [r for r in plan.order if r not in taken and r not in plan.rejected]
    for rid in queue:
        if not robots:
            break
        if releases[rid] > now + _EPS:
            break
        commands.append((robots.pop(0), rid))
        taken.add(rid)
    flags = [r for r in full_now if r not in taken]
    return commands, flags
