"""Deterministic predictive dispatch: identical robots, release dates, sum of completions.

All solvers take request timelines (release delay and process time relative
to ``now``) plus the availability delay of every robot, and return a
:class:`Schedule` whose objective is the sum of absolute completion instants.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field, replace
from typing import Hashable, Sequence

import numpy as np

from .field import FieldMap, Point, SpeedProfile, travel_time

_EPS = 1e-9

DEFAULT_BAB_CAP = 12
BRUTE_FORCE_CAP = 8


class ScheduleSizeError(ValueError):
    """Instance is larger than an exact solver accepts."""


@dataclass(frozen=True)
class RequestTimeline:
    """Timing of one transport request as seen by the scheduler at ``now``.

    ``wait`` follows the release-delay form (completion minus process time,
    release delay and ``now``); ``picker_wait`` is the physical wait
    ``max(arrival - fill instant, 0)``. They differ only for late requests,
    where the robot cannot make it before the tray fills.
    """

    request_id: Hashable
    one_way: float
    release_delay: float
    process: float
    fill: float = 0.0
    location: Point | None = None
    dispatch: float | None = None
    arrival: float | None = None
    completion: float | None = None
    wait: float | None = None
    picker_wait: float | None = None
    robot: int | None = None


def make_timeline(
    request_id: Hashable,
    fill: float,
    one_way: float,
    load_time: float,
    unload_time: float,
    location: Point | None = None,
) -> RequestTimeline:
    if fill < 0 or one_way < 0:
        raise ValueError("fill and one-way times must be non-negative")
    return RequestTimeline(
        request_id=request_id,
        one_way=one_way,
        release_delay=max(fill - one_way, 0.0),
        process=2.0 * one_way + load_time + unload_time,
        fill=fill,
        location=location,
    )


def derive_timeline(
    req,
    station: Point,
    profile: SpeedProfile,
    load_time: float,
    unload_time: float,
    now: float,
    fm: FieldMap,
) -> RequestTimeline:
    """Timeline of a :class:`~harvestbot.requests.DeterministicRequest` at ``now``."""
    fill = max(req.created_at + req.remaining_fill - now, 0.0)
    u = travel_time(station, req.full_location, fm, profile)
    return make_timeline(req.request_id, fill, u, load_time, unload_time, req.full_location)


@dataclass(frozen=True)
class DispatchTuple:
    request_id: Hashable
    location: Point | None
    dispatch_time: float


@dataclass
class Schedule:
    now: float
    assignment: dict = field(default_factory=dict)
    dispatch_tuples: list[list[DispatchTuple]] = field(default_factory=list)
    timelines: dict = field(default_factory=dict)
    objective: float = 0.0

    @property
    def total_wait(self) -> float:
        return sum(t.wait for t in self.timelines.values())

    @property
    def total_picker_wait(self) -> float:
        return sum(t.picker_wait for t in self.timelines.values())


# -- helpers -----------------------------------------------------------------


def _arrays(requests: Sequence[RequestTimeline]) -> tuple[list[float], list[float]]:
    return [q.release_delay for q in requests], [q.process for q in requests]


def _check_robots(availability: Sequence[float]) -> list[float]:
    a = [float(x) for x in availability]
    if not a:
        raise ValueError("at least one robot is required")
    if any(x < 0 for x in a):
        raise ValueError("availability delays must be non-negative")
    return a


def _earliest(free: Sequence[float]) -> int:
    best = 0
    for k in range(1, len(free)):
        if free[k] < free[best] - _EPS:
            best = k
    return best


def _list_schedule(
    order: Sequence[int], r: Sequence[float], p: Sequence[float], a: Sequence[float]
) -> tuple[list[list[int]], dict[int, float]]:
    """Place jobs in ``order``, each on the robot that frees earliest."""
    free = list(a)
    seqs: list[list[int]] = [[] for _ in a]
    starts: dict[int, float] = {}
    for j in order:
        k = _earliest(free)
        s = max(r[j], free[k])
        starts[j] = s
        free[k] = s + p[j]
        seqs[k].append(j)
    return seqs, starts


def _build(
    requests: Sequence[RequestTimeline],
    seqs: Sequence[Sequence[int]],
    starts: dict[int, float],
    now: float,
) -> Schedule:
    sched = Schedule(now=now, dispatch_tuples=[[] for _ in seqs])
    total = 0.0
    for k, seq in enumerate(seqs):
        for j in seq:
            q = requests[j]
            td = now + starts[j]
            tc = td + q.process
            ta = td + q.one_way
            tl = replace(
                q,
                dispatch=td,
                arrival=ta,
                completion=tc,
                wait=tc - q.process - q.release_delay - now,
                picker_wait=max(ta - (now + q.fill), 0.0),
                robot=k,
            )
            sched.timelines[q.request_id] = tl
            sched.assignment[q.request_id] = k
            sched.dispatch_tuples[k].append(DispatchTuple(q.request_id, q.location, td))
            total += tc
    sched.objective = total
    return sched


# -- lower bounds --------------------------------------------------------------


def _spt_sum(p: Sequence[float], a: Sequence[float]) -> float:
    free = sorted(a)
    total = 0.0
    for x in sorted(p):
        k = _earliest(free)
        free[k] += x
        total += free[k]
    return total


def _srpt_fast_machine(
    r: Sequence[float], p: Sequence[float], a: Sequence[float]
) -> tuple[list[float], list[int]]:
    """Preemptive SRPT where a job may run on every available robot at once.

    Robot ``k`` contributes capacity from time ``a[k]`` on. Returns the
    completion time of each job and the order in which they complete.
    """
    n = len(p)
    rem = list(p)
    done = [False] * n
    comp = [0.0] * n
    order: list[int] = []
    events = sorted(set(list(r) + list(a)))
    t = min(events) if events else 0.0
    current = None
    while len(order) < n:
        cap = sum(1 for x in a if x <= t + _EPS)
        ready = [i for i in range(n) if not done[i] and r[i] <= t + _EPS]
        later = [e for e in events if e > t + _EPS]
        nxt = later[0] if later else float("inf")
        if cap == 0 or not ready:
            t = nxt
            continue
        j = min(ready, key=lambda i: (rem[i], r[i], i))
        if current is not None and current in ready and rem[current] <= rem[j] + _EPS:
            j = current
        current = j
        finish = t + rem[j] / cap
        if finish <= nxt + _EPS:
            t = finish
            rem[j] = 0.0
            done[j] = True
            comp[j] = t
            order.append(j)
            current = None
        else:
            rem[j] -= (nxt - t) * cap
            t = nxt
    return comp, order


def lb_no_release(
    requests: Sequence[RequestTimeline], availability: Sequence[float], now: float = 0.0
) -> float:
    """SPT on the instance with release delays dropped."""
    if not requests:
        return 0.0
    a = _check_robots(availability)
    _, p = _arrays(requests)
    return _spt_sum(p, a) + now * len(requests)


def lb_preemptive_srpt(
    requests: Sequence[RequestTimeline], availability: Sequence[float], now: float = 0.0
) -> float:
    """SRPT with job splitting across all available robots."""
    if not requests:
        return 0.0
    a = _check_robots(availability)
    r, p = _arrays(requests)
    comp, _ = _srpt_fast_machine(r, p, a)
    return sum(comp) + now * len(requests)


# -- solvers -------------------------------------------------------------------


def schedule_srpt_convert(
    requests: Sequence[RequestTimeline], availability: Sequence[float], now: float = 0.0
) -> Schedule:
    """Non-preemptive list schedule in preemptive-SRPT completion order."""
    a = _check_robots(availability)
    if not requests:
        return Schedule(now=now, dispatch_tuples=[[] for _ in a])
    r, p = _arrays(requests)
    comp, _ = _srpt_fast_machine(r, p, a)
    order = sorted(range(len(requests)), key=lambda i: (comp[i], i))
    seqs, starts = _list_schedule(order, r, p, a)
    return _build(requests, seqs, starts, now)


def schedule_bab(
    requests: Sequence[RequestTimeline],
    availability: Sequence[float],
    now: float = 0.0,
    cap: int = DEFAULT_BAB_CAP,
) -> Schedule:
    """Exact best-first branch and bound.

    A node is a partial job sequence, each job appended to the robot that
    frees earliest (this family of list schedules contains an optimum). Nodes
    are bounded by the larger of the release-relaxed SPT bound and the
    preemptive SRPT bound, and pruned by dominance on
    (scheduled set, multiset of robot free times).
    """
    n = len(requests)
    if n > cap:
        raise ScheduleSizeError(
            f"{n} requests exceed the exact-solver cap of {cap}; use schedule_srpt_convert"
        )
    a = _check_robots(availability)
    if n == 0:
        return Schedule(now=now, dispatch_tuples=[[] for _ in a])
    r, p = _arrays(requests)

    # incumbent from the approximation
    comp, _ = _srpt_fast_machine(r, p, a)
    inc_order = sorted(range(n), key=lambda i: (comp[i], i))
    seqs, starts = _list_schedule(inc_order, r, p, a)
    best_cost = sum(starts[j] + p[j] for j in range(n))
    best_order: tuple[int, ...] = tuple(inc_order)

    full = (1 << n) - 1

    def bound(mask: int, free: Sequence[float], cost: float) -> float:
        rest = [j for j in range(n) if not mask >> j & 1]
        if not rest:
            return cost
        rr = [r[j] for j in rest]
        pp = [p[j] for j in rest]
        lb1 = _spt_sum(pp, free)
        c2, _ = _srpt_fast_machine(rr, pp, free)
        return cost + max(lb1, sum(c2))

    seen: dict[tuple, float] = {}
    root_free = tuple(a)
    heap = [(bound(0, root_free, 0.0), 0.0, (), 0, root_free)]
    while heap:
        lb, cost, order, mask, free = heapq.heappop(heap)
        if lb >= best_cost - _EPS:
            break
        if mask == full:
            if cost < best_cost - _EPS:
                best_cost, best_order = cost, order
            continue
        k = _earliest(free)
        for j in range(n):
            if mask >> j & 1:
                continue
            s = max(r[j], free[k])
            nfree = list(free)
            nfree[k] = s + p[j]
            ncost = cost + s + p[j]
            nmask = mask | (1 << j)
            key = (nmask, tuple(sorted(nfree)))
            prev = seen.get(key)
            if prev is not None and prev <= ncost + _EPS:
                continue
            seen[key] = ncost
            nlb = bound(nmask, nfree, ncost)
            if nlb >= best_cost - _EPS:
                continue
            heapq.heappush(heap, (nlb, ncost, order + (j,), nmask, tuple(nfree)))

    seqs, starts = _list_schedule(best_order, r, p, a)
    return _build(requests, seqs, starts, now)


def _single_robot_table(r: Sequence[float], p: Sequence[float], avail: float) -> dict[int, tuple]:
    """Best (cost, sequence) for every job subset on one robot.

    Every ordered sequence is a prefix of some permutation, so evaluating all
    prefixes of all permutations enumerates them exhaustively.
    """
    n = len(p)
    table: dict[int, tuple[float, tuple[int, ...]]] = {0: (0.0, ())}
    if n == 0:
        return table
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    ra = np.asarray(r, dtype=float)
    pa = np.asarray(p, dtype=float)
    t = np.full(len(perms), float(avail))
    cost = np.zeros(len(perms))
    mask = np.zeros(len(perms), dtype=np.int64)
    for k in range(n):
        col = perms[:, k]
        t = np.maximum(ra[col], t) + pa[col]
        cost = cost + t
        mask = mask | (np.int64(1) << col)
        order = np.lexsort((np.arange(len(perms)), cost, mask))
        m_sorted = mask[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = m_sorted[1:] != m_sorted[:-1]
        for idx in order[first]:
            table[int(mask[idx])] = (float(cost[idx]), tuple(int(j) for j in perms[idx, : k + 1]))
    return table


def brute_force_schedule(
    requests: Sequence[RequestTimeline],
    availability: Sequence[float],
    now: float = 0.0,
    cap: int = BRUTE_FORCE_CAP,
) -> Schedule:
    """Exhaustive enumeration of assignments and per-robot orders (testing oracle)."""
    n = len(requests)
    if n > cap:
        raise ScheduleSizeError(f"{n} requests exceed the brute-force cap of {cap}")
    a = _check_robots(availability)
    if n == 0:
        return Schedule(now=now, dispatch_tuples=[[] for _ in a])
    r, p = _arrays(requests)
    tables: dict[float, dict] = {}
    for x in a:
        if x not in tables:
            tables[x] = _single_robot_table(r, p, x)

    best_cost = float("inf")
    best_seqs: list[tuple[int, ...]] = []
    for assign in itertools.product(range(len(a)), repeat=n):
        masks = [0] * len(a)
        for j, k in enumerate(assign):
            masks[k] |= 1 << j
        cost = 0.0
        for k, m in enumerate(masks):
            cost += tables[a[k]][m][0]
        if cost < best_cost - _EPS:
            best_cost = cost
            best_seqs = [tables[a[k]][m][1] for k, m in enumerate(masks)]

    starts: dict[int, float] = {}
    for k, seq in enumerate(best_seqs):
        t = a[k]
        for j in seq:
            s = max(r[j], t)
            starts[j] = s
            t = s + p[j]
    return _build(requests, [list(s) for s in best_seqs], starts, now)


SOLVERS = {
    "bab": schedule_bab,
    "srpt-convert": schedule_srpt_convert,
    "brute": brute_force_schedule,
}
