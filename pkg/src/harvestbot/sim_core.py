"""Discrete-time simulation of coupled picker and robot state machines.

Two variants are supported. ``simple`` is the robot-aided model in which
every tray is collected by a robot. ``extended`` adds request rejection: a
picker whose tray fills with no robot on the way carries it to the station
and walks back. It also adds robots that wait short of the predicted location
and return empty when the picker leaves the furrow.

Transitions take effect at step boundaries. Movement carries leftover time
across consecutive path legs inside a step, so a walk that crosses from a
furrow onto the headland does not lose time at the corner.
"""

from __future__ import annotations

import copy
import csv
import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Sequence

import numpy as np

from .distributions import ParamDistributions, TrayDraw, sample_tray_params
from .field import (
    FieldExhausted,
    FieldMap,
    FurrowStatus,
    Point,
    SpeedProfile,
    active_station,
    manhattan_distance,
    next_furrow,
)
from .request_gen import (
    DeterministicRequest,
    InsufficientData,
    StochasticRequest,
    UncertaintyParams,
    draw_bias,
    make_perfect_request,
    make_stochastic_request,
    predict_fill,
)

_EPS = 1e-9

__all__ = [
    "HarvestTrace",
    "PickerMode",
    "PickerState",
    "RobotMode",
    "RobotState",
    "SimConfig",
    "SimulationFault",
    "TrayRecord",
    "run_harvest",
    "sample_tray_params",
    "step_picker",
    "step_robot",
    "transition_picker",
    "transition_robot",
]


class SimulationFault(RuntimeError):
    """Illegal transition or a run that does not terminate."""


class PickerMode(enum.Enum):
    START = "START"
    # simple variant
    WALK_TO_FURROW_ENTRANCE = "WALK_TO_FURROW_ENTRANCE"
    WALK_TO_FURROW_SPLITLINE = "WALK_TO_FURROW_SPLITLINE"
    PICK = "PICK"
    WAIT_FOR_ROBOT_ARRIVAL = "WAIT_FOR_ROBOT_ARRIVAL"
    EXCHANGE_TRAYS = "EXCHANGE_TRAYS"
    # extended variant
    WALK_EMPTY_TRAY_HEADLAND = "Walk-Empty-Tray-Headland"
    WALK_EMPTY_TRAY_FURROW = "Walk-Empty-Tray-Furrow"
    PICKING = "Picking"
    WAITING_FOR_ROBOT = "Waiting-For-Robot"
    EXCHANGE = "Exchange-Trays"
    WALK_PARTLY_FULL_TRAY_HEADLAND = "Walk-Partly-Full-Tray-Headland"
    WALK_PARTLY_FULL_TRAY_FURROW = "Walk-Partly-Full-Tray-Furrow"
    TRANSPORT_FULL_TRAY_FURROW = "Transport-Full-Tray-Furrow"
    TRANSPORT_FULL_TRAY_HEADLAND = "Transport-Full-Tray-Headland"
    IDLE_IN_QUEUE = "Idle-In-Queue"
    EMPTY_TRAY_BACK_HEADLAND = "Empty-Tray-Back-Headland"
    EMPTY_TRAY_BACK_FURROW = "Empty-Tray-Back-Furrow"
    STOP = "STOP"


class RobotMode(enum.Enum):
    START = "START"
    AVAILABLE = "AVAILABLE"
    # simple variant
    TRAVEL_TO_PICKER = "TRAVEL_TO_PICKER"
    WAIT_UNTIL_TRAY_FILLS = "WAIT_UNTIL_TRAY_FILLS"
    EXCHANGE_TRAYS = "EXCHANGE_TRAYS"
    TRANSPORT_FULL_TRAY = "TRANSPORT_FULL-TRAY"
    IDLE_IN_QUEUE = "IDLE_IN_QUEUE"
    # extended variant
    TRANSP_EMPTY_TRAY = "Transp-Empty-Tray-to-Dispatch-Location"
    WAIT_AT_DISPATCH = "Wait-At-Dispatch-Location"
    DRIVE_TO_FULL_TRAY = "Drive-To-Full-Tray-Location"
    EMPTY_TRAY_BACK = "Empty-Tray-Back"
    EXCHANGE = "Exchange-Trays"
    TRANSP_FULL_TRAY_BACK = "Transp-Full-Tray-Back"
    QUEUE = "Idle-In-Queue"
    STOP = "STOP"


P, R = PickerMode, RobotMode

PICKER_TABLES: dict[str, dict[tuple[PickerMode, str], PickerMode]] = {
    "simple": {
        (P.START, "start"): P.WALK_TO_FURROW_ENTRANCE,
        (P.WALK_TO_FURROW_ENTRANCE, "reached_furrow"): P.WALK_TO_FURROW_SPLITLINE,
        (P.WALK_TO_FURROW_SPLITLINE, "reached_splitline"): P.PICK,
        (P.PICK, "tray_full"): P.WAIT_FOR_ROBOT_ARRIVAL,
        (P.PICK, "furrow_end"): P.WALK_TO_FURROW_ENTRANCE,
        (P.PICK, "field_done"): P.STOP,
        (P.WAIT_FOR_ROBOT_ARRIVAL, "robot_arrived"): P.EXCHANGE_TRAYS,
        (P.EXCHANGE_TRAYS, "exchange_done"): P.PICK,
        (P.EXCHANGE_TRAYS, "furrow_end"): P.WALK_TO_FURROW_ENTRANCE,
        (P.EXCHANGE_TRAYS, "field_done"): P.STOP,
    },
    "extended": {
        (P.START, "start"): P.WALK_EMPTY_TRAY_HEADLAND,
        (P.WALK_EMPTY_TRAY_HEADLAND, "reached_furrow"): P.WALK_EMPTY_TRAY_FURROW,
        (P.WALK_EMPTY_TRAY_FURROW, "reached_splitline"): P.PICKING,
        (P.PICKING, "tray_full"): P.WAITING_FOR_ROBOT,
        (P.PICKING, "rejected"): P.TRANSPORT_FULL_TRAY_FURROW,
        (P.PICKING, "furrow_end"): P.WALK_PARTLY_FULL_TRAY_HEADLAND,
        (P.PICKING, "field_done"): P.STOP,
        (P.WALK_PARTLY_FULL_TRAY_HEADLAND, "reached_furrow"): P.WALK_PARTLY_FULL_TRAY_FURROW,
        (P.WALK_PARTLY_FULL_TRAY_FURROW, "reached_splitline"): P.PICKING,
        (P.WAITING_FOR_ROBOT, "robot_arrived"): P.EXCHANGE,
        (P.EXCHANGE, "exchange_done"): P.PICKING,
        (P.EXCHANGE, "furrow_end"): P.WALK_EMPTY_TRAY_HEADLAND,
        (P.EXCHANGE, "field_done"): P.STOP,
        (P.TRANSPORT_FULL_TRAY_FURROW, "reached_headland"): P.TRANSPORT_FULL_TRAY_HEADLAND,
        (P.TRANSPORT_FULL_TRAY_HEADLAND, "reached_station"): P.IDLE_IN_QUEUE,
        (P.IDLE_IN_QUEUE, "delivered"): P.EMPTY_TRAY_BACK_HEADLAND,
        (P.IDLE_IN_QUEUE, "furrow_end"): P.WALK_EMPTY_TRAY_HEADLAND,
        (P.IDLE_IN_QUEUE, "field_done"): P.STOP,
        (P.EMPTY_TRAY_BACK_HEADLAND, "reached_furrow"): P.EMPTY_TRAY_BACK_FURROW,
        (P.EMPTY_TRAY_BACK_FURROW, "resumed"): P.PICKING,
    },
}

ROBOT_TABLES: dict[str, dict[tuple[RobotMode, str], RobotMode]] = {
    "simple": {
        (R.START, "start"): R.AVAILABLE,
        (R.AVAILABLE, "dispatch"): R.TRAVEL_TO_PICKER,
        (R.AVAILABLE, "field_done"): R.STOP,
        (R.TRAVEL_TO_PICKER, "arrived"): R.WAIT_UNTIL_TRAY_FILLS,
        (R.WAIT_UNTIL_TRAY_FILLS, "tray_full"): R.EXCHANGE_TRAYS,
        (R.EXCHANGE_TRAYS, "exchange_done"): R.TRANSPORT_FULL_TRAY,
        (R.TRANSPORT_FULL_TRAY, "reached_station"): R.IDLE_IN_QUEUE,
        (R.IDLE_IN_QUEUE, "unloaded"): R.AVAILABLE,
    },
    "extended": {
        (R.START, "start"): R.AVAILABLE,
        (R.AVAILABLE, "dispatch"): R.TRANSP_EMPTY_TRAY,
        (R.AVAILABLE, "field_done"): R.STOP,
        (R.TRANSP_EMPTY_TRAY, "arrived"): R.WAIT_AT_DISPATCH,
        (R.TRANSP_EMPTY_TRAY, "tray_full"): R.DRIVE_TO_FULL_TRAY,
        (R.TRANSP_EMPTY_TRAY, "picker_left_furrow"): R.EMPTY_TRAY_BACK,
        (R.WAIT_AT_DISPATCH, "tray_full"): R.DRIVE_TO_FULL_TRAY,
        (R.WAIT_AT_DISPATCH, "picker_left_furrow"): R.EMPTY_TRAY_BACK,
        (R.DRIVE_TO_FULL_TRAY, "arrived"): R.EXCHANGE,
        (R.EXCHANGE, "exchange_done"): R.TRANSP_FULL_TRAY_BACK,
        (R.TRANSP_FULL_TRAY_BACK, "reached_station"): R.QUEUE,
        (R.QUEUE, "unloaded"): R.AVAILABLE,
        (R.EMPTY_TRAY_BACK, "reached_station"): R.AVAILABLE,
    },
}

PICKER_MOVING = {
    P.WALK_TO_FURROW_ENTRANCE,
    P.WALK_TO_FURROW_SPLITLINE,
    P.WALK_EMPTY_TRAY_HEADLAND,
    P.WALK_EMPTY_TRAY_FURROW,
    P.WALK_PARTLY_FULL_TRAY_HEADLAND,
    P.WALK_PARTLY_FULL_TRAY_FURROW,
    P.TRANSPORT_FULL_TRAY_FURROW,
    P.TRANSPORT_FULL_TRAY_HEADLAND,
    P.EMPTY_TRAY_BACK_HEADLAND,
    P.EMPTY_TRAY_BACK_FURROW,
}
PICKER_PICKING = {P.PICK, P.PICKING}
PICKER_WAITING = {P.WAIT_FOR_ROBOT_ARRIVAL, P.WAITING_FOR_ROBOT}
PICKER_EXCHANGING = {P.EXCHANGE_TRAYS, P.EXCHANGE}

ROBOT_MOVING = {
    R.TRAVEL_TO_PICKER,
    R.TRANSPORT_FULL_TRAY,
    R.TRANSP_EMPTY_TRAY,
    R.DRIVE_TO_FULL_TRAY,
    R.EMPTY_TRAY_BACK,
    R.TRANSP_FULL_TRAY_BACK,
}
ROBOT_QUEUED = {R.IDLE_IN_QUEUE, R.QUEUE}

FSM_VARIANTS = ("simple", "extended")


@dataclass(frozen=True)
class SimConfig:
    timestep: float = 0.5
    tray_capacity: float = 4500.0
    load_time: float = 5.0
    unload_time: float = 5.0
    robot_standoff: float = 5.0
    crew_size: int = 1
    robot_count: int = 1
    speed_profile: SpeedProfile = SpeedProfile(1.5, 1.5)
    fr_request: float = 1.0
    fsm_variant: str = "simple"
    rng_seed: int = 0
    max_steps: int = 2_000_000
    history_window_s: float = 60.0
    history_period_s: float = 1.0

    def __post_init__(self) -> None:
        if self.timestep <= 0:
            raise ValueError("timestep must be > 0")
        if self.tray_capacity <= 0:
            raise ValueError("tray_capacity must be > 0")
        if not 0.0 <= self.fr_request <= 1.0:
            raise ValueError("fr_request must lie in [0, 1]")
        if self.robot_standoff < 0 or self.load_time < 0 or self.unload_time < 0:
            raise ValueError("standoff, load and unload times must be >= 0")
        if self.crew_size < 1 or self.robot_count < 0:
            raise ValueError("crew_size must be >= 1 and robot_count >= 0")
        if self.fsm_variant not in FSM_VARIANTS:
            raise ValueError(f"fsm_variant must be one of {FSM_VARIANTS}")


@dataclass
class PickerState:
    picker_id: int
    mode: PickerMode
    x: float
    y: float
    mass: float = 0.0
    elapsed: float = 0.0
    heading: float = 0.0
    draw: TrayDraw | None = None
    furrow: int = 0
    target: Point | None = None
    tray_id: int = 0
    tray_start: float = 0.0
    full_at: float | None = None
    full_loc: Point | None = None
    furrow_done: bool = False
    request_id: Hashable | None = None
    reject_flag: bool = False
    exchange_start: float | None = None
    bias: float | None = None
    history: deque = field(default_factory=deque)

    @property
    def position(self) -> Point:
        return Point(self.x, self.y)

    @property
    def served_flag(self) -> bool:
        return self.exchange_start is not None


@dataclass
class RobotState:
    robot_id: int
    mode: RobotMode
    x: float
    y: float
    elapsed: float = 0.0
    heading: float = 0.0
    path: list = field(default_factory=list)
    request_id: Hashable | None = None
    picker_id: int | None = None
    carried_tray: str = "empty"
    predicted_free: float = 0.0
    station_index: int = 0

    @property
    def position(self) -> Point:
        return Point(self.x, self.y)

    def availability_delay(self, now: float, dt: float) -> float:
        if self.mode in (R.AVAILABLE, R.START):
            return 0.0
        return max(dt, self.predicted_free - now)


@dataclass
class SimRequest:
    """A live request inside the simulator."""

    request_id: int
    picker_id: int
    tray_id: int
    created_at: float
    det: DeterministicRequest | None = None
    stoch: StochasticRequest | None = None
    robot: int | None = None
    dispatch_time: float | None = None
    distance: float | None = None


@dataclass
class Dispatch:
    robot_id: int
    request_id: Hashable
    target: Point
    predicted_free: float


@dataclass
class TrayRecord:
    tray_id: int
    picker_id: int
    t_start: float
    t_end: float
    t_resume: float
    x_full: float
    y_full: float
    served_by: str
    wait: float | None = None
    distance: float = 0.0
    mass: float = 0.0
    partial: bool = False

    @property
    def productive(self) -> float:
        return self.t_end - self.t_start

    @property
    def non_productive(self) -> float:
        return self.t_resume - self.t_end


TRAY_CSV_COLUMNS = ("tray_id", "picker_id", "t_start", "t_end", "t_resume", "x_full", "y_full", "served_by")


@dataclass
class HarvestTrace:
    trays: list[TrayRecord] = field(default_factory=list)
    events: list[tuple] = field(default_factory=list)
    duration: float = 0.0
    end_time: float = 0.0
    requests: int = 0
    rejections: int = 0
    seed: int = 0

    def complete_trays(self) -> list[TrayRecord]:
        return [t for t in self.trays if not t.partial]

    def write_events_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t, kind, aid, transition, x, y, w in self.events:
                row = {"t": t, "agent_kind": kind, "agent_id": aid, "transition": transition,
                       "x": round(x, 6), "y": round(y, 6), "W": round(w, 6)}
                fh.write(json.dumps(row) + "\n")

    def write_trays_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(TRAY_CSV_COLUMNS)
            for r in self.trays:
                w.writerow([r.tray_id, r.picker_id, _fmt(r.t_start), _fmt(r.t_end), _fmt(r.t_resume),
                            _fmt(r.x_full), _fmt(r.y_full), r.served_by])


def _fmt(v: float) -> str:
    return f"{v:.6f}"


# -- transitions ---------------------------------------------------------------


def _lookup(table: dict, mode, event: str, kind: str):
    try:
        return table[(mode, event)]
    except KeyError:
        raise SimulationFault(f"illegal {kind} transition: {mode.value} on {event!r}") from None


def transition_picker(state: PickerState, event: str, variant: str) -> PickerState:
    new = copy.copy(state)
    new.mode = _lookup(PICKER_TABLES[variant], state.mode, event, "picker")
    new.elapsed = 0.0
    return new


def transition_robot(state: RobotState, event: str, variant: str) -> RobotState:
    new = copy.copy(state)
    new.mode = _lookup(ROBOT_TABLES[variant], state.mode, event, "robot")
    new.elapsed = 0.0
    return new


# -- kinematics ----------------------------------------------------------------


def _move_toward(agent, target: Point, speed: float, budget: float) -> tuple[float, bool]:
    """Axis-aligned move toward ``target``; returns (time used, reached)."""
    dx = target.x - agent.x
    dy = target.y - agent.y
    dist = abs(dx) + abs(dy)
    if dist <= _EPS:
        agent.x, agent.y = target.x, target.y
        return 0.0, True
    agent.heading = math.atan2(dy, dx)
    reach = speed * budget
    if reach >= dist - _EPS:
        agent.x, agent.y = target.x, target.y
        return dist / speed, True
    agent.x += reach * math.cos(agent.heading)
    agent.y += reach * math.sin(agent.heading)
    return budget, False


def _leg_speed(a: Point | Any, b: Point, profile: SpeedProfile) -> float:
    return profile.headland_speed if abs(a.y - b.y) <= _EPS else profile.furrow_speed


def _pick(p: PickerState, cfg: SimConfig) -> str | None:
    dt = cfg.timestep
    p.heading = -math.pi / 2
    p.y -= p.draw.v_pick * dt
    p.mass += p.draw.rate(cfg.tray_capacity) * dt
    if p.mass >= cfg.tray_capacity - _EPS:
        p.mass = cfg.tray_capacity
        if p.y <= _EPS:
            p.y = 0.0
            p.furrow_done = True
        return "tray_full"
    if p.y <= _EPS:
        p.y = 0.0
        return "furrow_end"
    return None


def step_picker(state: PickerState, cfg: SimConfig) -> PickerState:
    """Advance one picker by one timestep (no transitions are taken)."""
    p = copy.copy(state)
    dt = cfg.timestep
    if p.mode in PICKER_PICKING:
        _pick(p, cfg)
    elif p.mode in PICKER_MOVING and p.target is not None:
        _move_toward(p, p.target, p.draw.v_walk, dt)
    p.elapsed += dt
    return p


def step_robot(state: RobotState, cfg: SimConfig) -> RobotState:
    """Advance one robot by one timestep along its path (no transitions are taken)."""
    r = copy.copy(state)
    r.path = list(state.path)
    budget = cfg.timestep
    if r.mode in ROBOT_MOVING:
        while r.path and budget > _EPS:
            tgt = r.path[0]
            used, reached = _move_toward(r, tgt, _leg_speed(r, tgt, cfg.speed_profile), budget)
            budget -= used
            if reached:
                r.path.pop(0)
            else:
                break
    r.elapsed += cfg.timestep
    return r


def robot_path(frm: Point, to: Point) -> list[Point]:
    """Headland-and-furrow path between two field points."""
    pts: list[Point] = []
    cur = frm
    if abs(frm.x - to.x) > _EPS:
        if frm.y > _EPS:
            pts.append(Point(frm.x, 0.0))
        cur = Point(to.x, 0.0)
        pts.append(cur)
    if abs(cur.y - to.y) > _EPS:
        pts.append(to)
    return pts


# -- engine --------------------------------------------------------------------


class Dispatcher:
    """Base class: no requests, no robots dispatched (all-manual harvesting)."""

    prediction: str | None = None
    fr_request: float = 1.0

    def on_request(self, sim: "Harvest", req: SimRequest) -> None:
        pass

    def on_removed(self, sim: "Harvest", req: SimRequest) -> None:
        pass

    def on_robot_available(self, sim: "Harvest", robot: RobotState) -> None:
        pass

    def decide(self, sim: "Harvest") -> list[Dispatch]:
        return []


class Harvest:
    """One harvesting run. Drive it with :meth:`run`."""

    def __init__(
        self,
        cfg: SimConfig,
        fm: FieldMap,
        dists: ParamDistributions,
        dispatcher: Dispatcher | None = None,
        uncertainty: UncertaintyParams | None = None,
        record_events: bool = True,
    ) -> None:
        if cfg.crew_size > fm.furrow_count:
            raise ValueError("crew_size cannot exceed furrow_count")
        self.cfg = cfg
        self.dists = dists
        self.dispatcher = dispatcher or Dispatcher()
        if self.dispatcher.prediction != "perfect" and cfg.fsm_variant != "extended":
            # rejections and self-transport only exist in the extended machines
            raise SimulationFault("manual and stochastic dispatch need the extended FSM variant")
        self.uncertainty = uncertainty or UncertaintyParams()
        self.variant = cfg.fsm_variant
        self.ptable = PICKER_TABLES[self.variant]
        self.rtable = ROBOT_TABLES[self.variant]
        self.record_events = record_events
        ss = np.random.SeedSequence(cfg.rng_seed)
        kids = ss.spawn(cfg.crew_size + 2)
        self.tray_rngs = [np.random.default_rng(k) for k in kids[: cfg.crew_size]]
        self.noise_rng = np.random.default_rng(kids[-2])
        self.sched_rng = np.random.default_rng(kids[-1])
        self.now = 0.0
        self.step_index = 0
        self.status = [FurrowStatus.UNHARVESTED] * fm.furrow_count
        xs = [fm.furrow_x(i) for i in range(cfg.crew_size)]
        self.field = fm.with_active_station(active_station(fm, xs))
        self.trace = HarvestTrace(seed=cfg.rng_seed)
        self.requests: dict[int, SimRequest] = {}
        self._next_request = 0
        self._next_tray = 0
        self.queues: dict[int, deque] = {}
        self.queue_timer: dict[int, float] = {}
        self.harvest_end = 0.0

        self.pickers: list[PickerState] = []
        st = self.field.active_station
        for i in range(cfg.crew_size):
            p = PickerState(i, P.START, st.x, st.y, furrow=i)
            self.status[i] = FurrowStatus.OCCUPIED
            self._new_tray(p, 0.0)
            self.pickers.append(p)
        self.robots = [RobotState(k, R.START, st.x, st.y) for k in range(cfg.robot_count)]
        for p in self.pickers:
            self._tp(p, "start")
            p.target = Point(self.field.furrow_x(p.furrow), 0.0)
        for r in self.robots:
            self._tr(r, "start")
            r.station_index = self.field.active_station_index

    # -- bookkeeping helpers

    def _log(self, kind: str, aid: int, transition: str, x: float, y: float, w: float) -> None:
        if self.record_events:
            self.trace.events.append((round(self.now, 6), kind, aid, transition, x, y, w))

    def _tp(self, p: PickerState, event: str) -> None:
        new = _lookup(self.ptable, p.mode, event, "picker")
        self._log("picker", p.picker_id, f"{p.mode.value}->{new.value}:{event}", p.x, p.y, p.mass)
        p.mode = new
        p.elapsed = 0.0

    def _tr(self, r: RobotState, event: str) -> None:
        new = _lookup(self.rtable, r.mode, event, "robot")
        self._log("robot", r.robot_id, f"{r.mode.value}->{new.value}:{event}", r.x, r.y, 0.0)
        r.mode = new
        r.elapsed = 0.0

    def _new_tray(self, p: PickerState, t: float) -> None:
        p.draw = sample_tray_params(self.dists, self.tray_rngs[p.picker_id])
        p.mass = 0.0
        p.tray_id = self._next_tray
        self._next_tray += 1
        p.tray_start = t
        p.full_at = None
        p.full_loc = None
        p.exchange_start = None
        p.reject_flag = False
        p.request_id = None
        p.bias = None

    def _close_tray(self, p: PickerState, served_by: str) -> None:
        loc = p.full_loc
        wait = None if p.exchange_start is None else p.exchange_start - p.full_at
        self.trace.trays.append(
            TrayRecord(
                tray_id=p.tray_id,
                picker_id=p.picker_id,
                t_start=p.tray_start,
                t_end=p.full_at,
                t_resume=self.now,
                x_full=loc.x,
                y_full=loc.y,
                served_by=served_by,
                wait=wait,
                distance=manhattan_distance(self.field.active_station, loc, self.field),
                mass=self.cfg.tray_capacity,
            )
        )

    @property
    def station(self) -> Point:
        return self.field.active_station

    def available_robots(self) -> list[RobotState]:
        return [r for r in self.robots if r.mode is R.AVAILABLE]

    def pending_requests(self) -> list[SimRequest]:
        return [q for q in self.requests.values() if q.robot is None]

    def _update_station(self) -> None:
        xs = [self.field.furrow_x(p.furrow) for p in self.pickers if p.mode is not P.STOP]
        idx = active_station(self.field, xs)
        if idx != self.field.active_station_index:
            self.field = self.field.with_active_station(idx)
            st = self.field.active_station
            for r in self.robots:
                if r.mode is R.AVAILABLE:
                    r.x, r.y = st.x, st.y
                    r.station_index = idx

    # -- picker side

    def _assign_next_furrow(self, p: PickerState) -> bool:
        self.status[p.furrow] = FurrowStatus.HARVESTED
        try:
            nxt = next_furrow(p.furrow, self.status)
        except FieldExhausted:
            return False
        p.furrow = nxt
        self.status[nxt] = FurrowStatus.OCCUPIED
        p.target = Point(self.field.furrow_x(nxt), 0.0)
        p.furrow_done = False
        self._update_station()
        return True

    def _leave_furrow(self, p: PickerState, from_mode_event: str = "furrow_end") -> None:
        """Picker finished its furrow: move on or stop."""
        if self._assign_next_furrow(p):
            self._tp(p, from_mode_event)
        else:
            self._tp(p, "field_done")
            self.harvest_end = max(self.harvest_end, self.now)
            self._update_station()

    def _cancel_request(self, p: PickerState) -> None:
        rid = p.request_id
        if rid is None or rid not in self.requests:
            p.request_id = None
            return
        req = self.requests.pop(rid)
        p.request_id = None
        if req.robot is not None:
            r = self.robots[req.robot]
            self._tr(r, "picker_left_furrow")
            r.request_id = None
            r.picker_id = None
            r.path = robot_path(r.position, self.station)
        self.dispatcher.on_removed(self, req)

    def _advance_picker(self, p: PickerState) -> str | None:
        """Move or pick for one step; returns a pending coupled event."""
        cfg = self.cfg
        mode = p.mode
        if mode in PICKER_PICKING:
            ev = _pick(p, cfg)
            if ev is None and p.history is not None:
                k = round(self.now / cfg.history_period_s, 9)
                if abs(k - round(k)) < 1e-9:
                    p.history.append((self.now, p.y))
                    while p.history and p.history[0][0] < self.now - cfg.history_window_s - _EPS:
                        p.history.popleft()
            return ev
        if mode in PICKER_MOVING:
            budget = cfg.timestep
            while budget > _EPS and p.mode in PICKER_MOVING:
                used, reached = _move_toward(p, p.target, p.draw.v_walk, budget)
                budget -= used
                if not reached:
                    break
                self._picker_arrived(p)
            return None
        if mode in PICKER_EXCHANGING:
            if p.elapsed >= cfg.load_time - _EPS:
                return "exchange_done"
            return None
        if mode is P.IDLE_IN_QUEUE:
            if p.elapsed >= cfg.unload_time - _EPS:
                return "delivered"
        return None

    def _picker_arrived(self, p: PickerState) -> None:
        fx = self.field.furrow_x(p.furrow)
        m = p.mode
        if m in (P.WALK_TO_FURROW_ENTRANCE, P.WALK_EMPTY_TRAY_HEADLAND, P.WALK_PARTLY_FULL_TRAY_HEADLAND):
            self._tp(p, "reached_furrow")
            p.target = Point(fx, self.field.split_line_y)
        elif m in (P.WALK_TO_FURROW_SPLITLINE, P.WALK_EMPTY_TRAY_FURROW, P.WALK_PARTLY_FULL_TRAY_FURROW):
            self._tp(p, "reached_splitline")
            p.target = None
            p.history = deque()
        elif m is P.TRANSPORT_FULL_TRAY_FURROW:
            self._tp(p, "reached_headland")
            p.target = Point(self.station.x, 0.0)
        elif m is P.TRANSPORT_FULL_TRAY_HEADLAND:
            self._tp(p, "reached_station")
            p.target = None
        elif m is P.EMPTY_TRAY_BACK_HEADLAND:
            self._tp(p, "reached_furrow")
            p.target = p.full_loc
        elif m is P.EMPTY_TRAY_BACK_FURROW:
            self._tp(p, "resumed")
            p.target = None
            self._close_tray(p, "self")
            self._new_tray(p, self.now)
        else:  # pragma: no cover - guarded by PICKER_MOVING
            raise SimulationFault(f"arrival in non-moving mode {m}")

    def _on_tray_full(self, p: PickerState) -> None:
        p.full_at = self.now
        p.full_loc = Point(p.x, p.y)
        req = self.requests.get(p.request_id) if p.request_id is not None else None
        if self.variant == "simple":
            self._tp(p, "tray_full")
            if req is not None and req.robot is not None:
                r = self.robots[req.robot]
                if r.mode is R.WAIT_UNTIL_TRAY_FILLS:
                    self._start_exchange(p, r)
            return
        if req is not None and req.robot is not None:
            self._tp(p, "tray_full")
            r = self.robots[req.robot]
            self._tr(r, "tray_full")
            r.path = self._standoff_path(r, p.full_loc)
            if not r.path:
                self._robot_arrived(r)
            return
        # no robot on the way: the picker carries the tray
        p.reject_flag = True
        self.trace.rejections += 1
        if req is not None:
            self.requests.pop(req.request_id)
            self.dispatcher.on_removed(self, req)
        p.request_id = None
        self._tp(p, "rejected")
        p.target = Point(p.x, 0.0)

    def _standoff_path(self, r: RobotState, loc: Point) -> list[Point]:
        same_row = abs(r.x - loc.x) <= _EPS and r.y > _EPS
        if same_row and abs(r.y - loc.y) <= self.cfg.robot_standoff + _EPS:
            return []
        goal = Point(loc.x, max(loc.y - self.cfg.robot_standoff, 0.0))
        return robot_path(r.position, goal)

    def _start_exchange(self, p: PickerState, r: RobotState) -> None:
        self._tp(p, "robot_arrived")
        if r.mode is R.WAIT_UNTIL_TRAY_FILLS:
            self._tr(r, "tray_full")
        p.exchange_start = self.now

    def _finish_exchange(self, p: PickerState) -> None:
        req = self.requests.pop(p.request_id)
        r = self.robots[req.robot]
        self._tr(r, "exchange_done")
        r.carried_tray = "full"
        r.request_id = None
        r.picker_id = None
        r.path = robot_path(r.position, self.station)
        r.station_index = self.field.active_station_index
        p.request_id = None
        self._close_tray(p, f"robot:{r.robot_id}")
        self._new_tray(p, self.now)
        if p.furrow_done:
            self._leave_furrow(p)
        else:
            self._tp(p, "exchange_done")

    def _finish_delivery(self, p: PickerState) -> None:
        if p.furrow_done:
            self._close_tray(p, "self")
            self._new_tray(p, self.now)
            self._leave_furrow(p)
        else:
            self._tp(p, "delivered")
            p.target = Point(p.full_loc.x, 0.0)

    def _picker_furrow_end(self, p: PickerState) -> None:
        self._cancel_request(p)
        if self._assign_next_furrow(p):
            self._tp(p, "furrow_end")
        else:
            self._tp(p, "field_done")
            self.harvest_end = max(self.harvest_end, self.now)
            self._record_partial(p)
            self._update_station()

    def _record_partial(self, p: PickerState) -> None:
        if p.mass <= 0:
            return
        self.trace.trays.append(
            TrayRecord(p.tray_id, p.picker_id, p.tray_start, self.now, self.now,
                       p.x, p.y, "none", None, 0.0, p.mass, partial=True)
        )

    # -- robot side

    def _advance_robot(self, r: RobotState) -> None:
        if r.mode not in ROBOT_MOVING:
            return
        budget = self.cfg.timestep
        prof = self.cfg.speed_profile
        while budget > _EPS and r.path:
            tgt = r.path[0]
            used, reached = _move_toward(r, tgt, _leg_speed(r, tgt, prof), budget)
            budget -= used
            if not reached:
                return
            r.path.pop(0)
        if not r.path:
            self._robot_arrived(r)

    def _robot_arrived(self, r: RobotState) -> None:
        m = r.mode
        if m in (R.TRAVEL_TO_PICKER, R.TRANSP_EMPTY_TRAY):
            self._tr(r, "arrived")
            p = self.pickers[r.picker_id]
            if m is R.TRAVEL_TO_PICKER and p.mode is P.WAIT_FOR_ROBOT_ARRIVAL:
                self._start_exchange(p, r)
        elif m is R.DRIVE_TO_FULL_TRAY:
            self._tr(r, "arrived")
            self._start_exchange(self.pickers[r.picker_id], r)
        elif m in (R.TRANSPORT_FULL_TRAY, R.TRANSP_FULL_TRAY_BACK):
            self._tr(r, "reached_station")
            q = self.queues.setdefault(r.station_index, deque())
            q.append(r.robot_id)
            self.queue_timer.setdefault(r.station_index, 0.0)
        elif m is R.EMPTY_TRAY_BACK:
            self._tr(r, "reached_station")
            self._robot_freed(r)

    def _robot_freed(self, r: RobotState) -> None:
        st = self.station
        r.x, r.y = st.x, st.y
        r.station_index = self.field.active_station_index
        r.carried_tray = "empty"
        r.request_id = None
        r.picker_id = None
        r.path = []
        self.dispatcher.on_robot_available(self, r)

    def _advance_queues(self) -> None:
        for idx, q in self.queues.items():
            if not q:
                continue
            self.queue_timer[idx] += self.cfg.timestep
            if self.queue_timer[idx] >= self.cfg.unload_time - _EPS:
                r = self.robots[q.popleft()]
                self.queue_timer[idx] = 0.0
                self._tr(r, "unloaded")
                self._robot_freed(r)

    def _dispatch(self, d: Dispatch) -> None:
        r = self.robots[d.robot_id]
        req = self.requests[d.request_id]
        if r.mode is not R.AVAILABLE or req.robot is not None:
            raise SimulationFault(f"invalid dispatch {d}")
        self._tr(r, "dispatch")
        req.robot = r.robot_id
        req.dispatch_time = self.now
        req.distance = manhattan_distance(self.station, d.target, self.field)
        r.request_id = req.request_id
        r.picker_id = req.picker_id
        r.predicted_free = d.predicted_free
        r.path = robot_path(r.position, d.target)
        self._log("dispatch", r.robot_id, f"request:{req.request_id}", d.target.x, d.target.y, self.now)
        if not r.path:
            self._robot_arrived(r)

    # -- requests

    def _emit_requests(self) -> None:
        disp = self.dispatcher
        if disp.prediction is None:
            return
        cfg = self.cfg
        for p in self.pickers:
            if p.request_id is not None:
                continue
            if p.mode in PICKER_PICKING:
                pass
            elif p.mode is P.WAIT_FOR_ROBOT_ARRIVAL and disp.prediction == "perfect":
                pass
            else:
                continue
            rid = self._next_request
            if disp.prediction == "perfect":
                det = make_perfect_request(p, disp.fr_request, cfg.tray_capacity, cfg.timestep, self.now, rid)
                if det is None:
                    continue
                req = SimRequest(rid, p.picker_id, p.tray_id, self.now, det=det)
            else:
                req = self._stochastic_request(p, rid)
                if req is None:
                    continue
            self._next_request += 1
            self.trace.requests += 1
            p.request_id = rid
            self.requests[rid] = req
            self._log("request", p.picker_id, f"request:{rid}", p.x, p.y, p.mass)
            disp.on_request(self, req)

    def _stochastic_request(self, p: PickerState, rid: int) -> SimRequest | None:
        cfg = self.cfg
        if p.mass / cfg.tray_capacity < self.dispatcher.fr_request - _EPS:
            return None
        rate = p.draw.rate(cfg.tray_capacity)
        pred = predict_fill(p.y, p.mass, cfg.tray_capacity, rate, p.draw.v_pick, cfg.timestep)
        if not pred.fills_in_furrow or pred.steps == 0:
            return None
        u = self.uncertainty
        if u.loc_noise_halfwidth > 0 and len(p.history) < 3:
            return None
        if p.bias is None:
            p.bias = draw_bias(u, self.mean_pick_time, self.noise_rng)
        try:
            sr = make_stochastic_request(
                (pred.fill_s, -p.draw.v_pick, p.position),
                u,
                self.mean_pick_time,
                self.noise_rng,
                request_id=rid,
                picker_id=p.picker_id,
                created_at=self.now,
                furrow=p.furrow,
                bias=p.bias,
                history=list(p.history),
            )
        except InsufficientData:
            return None
        return SimRequest(rid, p.picker_id, p.tray_id, self.now, stoch=sr)

    @property
    def mean_pick_time(self) -> float:
        return self.dists.pick_time.mean

    # -- main loop

    def step(self) -> None:
        cfg = self.cfg
        self.step_index += 1
        self.now = self.step_index * cfg.timestep
        full: list[PickerState] = []
        ends: list[PickerState] = []
        exch: list[PickerState] = []
        deliv: list[PickerState] = []
        for p in self.pickers:
            if p.mode is P.STOP:
                continue
            p.elapsed += cfg.timestep
            ev = self._advance_picker(p)
            if ev == "tray_full":
                full.append(p)
            elif ev == "furrow_end":
                ends.append(p)
            elif ev == "exchange_done":
                exch.append(p)
            elif ev == "delivered":
                deliv.append(p)
        self._advance_queues()
        for r in self.robots:
            if r.mode is R.STOP:
                continue
            r.elapsed += cfg.timestep
            self._advance_robot(r)
        for p in exch:
            self._finish_exchange(p)
        for p in deliv:
            self._finish_delivery(p)
        for p in ends:
            self._picker_furrow_end(p)
        for p in full:
            self._on_tray_full(p)
        self._emit_requests()
        for d in self.dispatcher.decide(self):
            self._dispatch(d)
        if all(p.mode is P.STOP for p in self.pickers):
            for r in self.robots:
                if r.mode is R.AVAILABLE:
                    self._tr(r, "field_done")

    def done(self) -> bool:
        return all(p.mode is P.STOP for p in self.pickers) and all(r.mode is R.STOP for r in self.robots)

    def run(self) -> HarvestTrace:
        while not self.done():
            if self.step_index >= self.cfg.max_steps:
                modes = {p.picker_id: p.mode.value for p in self.pickers}
                rmodes = {r.robot_id: r.mode.value for r in self.robots}
                raise SimulationFault(
                    f"seed {self.cfg.rng_seed}: no termination after {self.step_index} steps; "
                    f"pickers={modes} robots={rmodes}"
                )
            self.step()
        self.trace.duration = self.harvest_end
        self.trace.end_time = self.now
        self.trace.trays.sort(key=lambda t: (t.picker_id, t.t_start, t.tray_id))
        return self.trace


def run_harvest(
    cfg: SimConfig,
    fm: FieldMap,
    dists: ParamDistributions,
    scheduler: Dispatcher | None = None,
    uncertainty: UncertaintyParams | None = None,
    record_events: bool = True,
) -> HarvestTrace:
    """Simulate until every picker has stopped and every robot is parked."""
    return Harvest(cfg, fm, dists, scheduler, uncertainty, record_events).run()
