"""Dispatch policies that connect the solvers to the simulator."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from . import det_sched, stoch_sched
from .field import Point, travel_time
from .request_gen import StochasticRequest
from .sim_core import Dispatch, Dispatcher, Harvest, RobotState, SimRequest

_EPS = 1e-9

SCHEDULER_KINDS = (
    "manual",
    "reactive",
    "deterministic-bab",
    "deterministic-srpt-convert",
    "msa-exact",
    "msa-srlpt",
)


class DeterministicDispatcher(Dispatcher):
    """Plans all undispatched requests whenever a new one arrives and a robot is free.

    The plan is kept as per-robot queues of (request, dispatch instant); an
    available robot executes the head of its queue once the instant arrives.
    Issued dispatches are never revoked.
    """

    prediction = "perfect"

    def __init__(self, solver: str = "bab", fr_request: float = 1.0, cap: int = det_sched.DEFAULT_BAB_CAP):
        if solver not in ("bab", "srpt-convert"):
            raise ValueError(f"unknown deterministic solver {solver!r}")
        self.solver = solver
        self.fr_request = fr_request
        self.cap = cap
        self.dirty = False
        self.plan: dict[int, deque] = {}
        self.solver_calls = 0
        self.fallbacks = 0

    def on_request(self, sim: Harvest, req: SimRequest) -> None:
        self.dirty = True

    def _replan(self, sim: Harvest) -> None:
        cfg = sim.cfg
        pending = sim.pending_requests()
        timelines = [
            det_sched.derive_timeline(q.det, sim.station, cfg.speed_profile, cfg.load_time,
                                      cfg.unload_time, sim.now, sim.field)
            for q in pending
        ]
        avail = [r.availability_delay(sim.now, cfg.timestep) for r in sim.robots]
        if self.solver == "bab" and len(timelines) <= self.cap:
            sched = det_sched.schedule_bab(timelines, avail, sim.now, cap=self.cap)
        else:
            if self.solver == "bab":
                self.fallbacks += 1
            sched = det_sched.schedule_srpt_convert(timelines, avail, sim.now)
        self.solver_calls += 1
        self.plan = {}
        for k, tuples in enumerate(sched.dispatch_tuples):
            self.plan[k] = deque(
                (d.request_id, d.dispatch_time, sched.timelines[d.request_id]) for d in tuples
            )

    def decide(self, sim: Harvest) -> list[Dispatch]:
        free = sim.available_robots()
        if not free:
            return []
        if self.dirty:
            self._replan(sim)
            self.dirty = False
        out = []
        for r in free:
            q = self.plan.get(r.robot_id)
            while q and (q[0][0] not in sim.requests or sim.requests[q[0][0]].robot is not None):
                q.popleft()
            if q and q[0][1] <= sim.now + _EPS:
                rid, _, tl = q.popleft()
                target = sim.requests[rid].det.full_location
                out.append(Dispatch(r.robot_id, rid, target, sim.now + tl.process))
        return out


class ReactiveDispatcher(DeterministicDispatcher):
    """Requests only at the tray-full instant, planned with SRPT conversion."""

    def __init__(self) -> None:
        super().__init__("srpt-convert", fr_request=1.0)


class MSADispatcher(Dispatcher):
    """Multiple-scenario planning with rejection over stochastic requests."""

    prediction = "stochastic"

    def __init__(
        self,
        solver: str = "srlpt",
        fr_request: float = 0.7,
        scenarios: int = 50,
        exact_cap: int = stoch_sched.DEFAULT_EXACT_CAP,
        grid: float = stoch_sched.DEFAULT_GRID_S,
    ) -> None:
        if solver not in ("exact", "srlpt"):
            raise ValueError(f"unknown scenario solver {solver!r}")
        self.solver = solver
        self.fr_request = fr_request
        self.scenarios = scenarios
        self.exact_cap = exact_cap
        self.grid = grid
        self.dirty = False
        self.plan: stoch_sched.ConsensusPlan | None = None
        self.solver_calls = 0
        self.fallbacks = 0

    def on_request(self, sim: Harvest, req: SimRequest) -> None:
        self.dirty = True

    def on_robot_available(self, sim: Harvest, robot: RobotState) -> None:
        self.dirty = True

    def _one_way(self, sim: Harvest, q: StochasticRequest) -> float:
        return travel_time(sim.station, q.expected_location(), sim.field, sim.cfg.speed_profile)

    def _replan(self, sim: Harvest, live: list[SimRequest]) -> None:
        cfg = sim.cfg
        reqs = [q.stoch for q in live]
        walk = {q.picker_id: sim.dists.v_walk.mean for q in reqs}
        scns = stoch_sched.get_samples(
            reqs, self.scenarios, sim.sched_rng, now=sim.now, station=sim.station, fm=sim.field,
            profile=cfg.speed_profile, walk_speeds=walk, load_time=cfg.load_time,
            unload_time=cfg.unload_time,
        )
        avail = [r.availability_delay(sim.now, cfg.timestep) for r in sim.robots]
        use_exact = self.solver == "exact" and len(reqs) <= self.exact_cap
        if self.solver == "exact" and not use_exact:
            self.fallbacks += 1
        sols = []
        for s in scns:
            if use_exact:
                sols.append(stoch_sched.solve_scenario_exact(s, avail, grid=self.grid, cap=self.exact_cap))
            else:
                sols.append(stoch_sched.solve_scenario_srlpt(s, avail, grid=self.grid))
        ids = [q.request_id for q in reqs]
        ef = {q.request_id: q.expected_full_time for q in reqs}
        self.plan = stoch_sched.consensus(sols, ids, ef)
        self.solver_calls += 1

    def decide(self, sim: Harvest) -> list[Dispatch]:
        free = sim.available_robots()
        if not free:
            return []
        live = sim.pending_requests()
        if not live:
            return []
        if self.dirty or self.plan is None:
            self._replan(sim, live)
            self.dirty = False
        by_id = {q.request_id: q for q in live}
        plan = self.plan
        order = [r for r in plan.order if r in by_id]
        view = stoch_sched.ConsensusPlan(plan.scores, order, plan.rejected)
        one_way = {rid: self._one_way(sim, by_id[rid].stoch) for rid in order}
        releases = {rid: stoch_sched.expected_release(by_id[rid].stoch, one_way[rid]) for rid in order}
        cmds, _ = stoch_sched.dispatch_decision(view, [r.robot_id for r in free], releases, sim.now)
        cfg = sim.cfg
        out = []
        for robot_id, rid in cmds:
            loc = by_id[rid].stoch.expected_location()
            target = Point(loc.x, max(loc.y - cfg.robot_standoff, 0.0))
            process = 2.0 * one_way[rid] + cfg.load_time + cfg.unload_time
            start = max(sim.now, releases[rid])
            out.append(Dispatch(robot_id, rid, target, start + process))
        return out


def make_dispatcher(kind: str, fr_request: float = 1.0, *, scenarios: int = 50,
                    bab_cap: int = det_sched.DEFAULT_BAB_CAP,
                    msa_cap: int = stoch_sched.DEFAULT_EXACT_CAP) -> Dispatcher:
    if kind == "manual":
        return Dispatcher()
    if kind == "reactive":
        return ReactiveDispatcher()
    if kind == "deterministic-bab":
        return DeterministicDispatcher("bab", fr_request, cap=bab_cap)
    if kind == "deterministic-srpt-convert":
        return DeterministicDispatcher("srpt-convert", fr_request)
    if kind == "msa-exact":
        return MSADispatcher("exact", fr_request, scenarios, exact_cap=msa_cap)
    if kind == "msa-srlpt":
        return MSADispatcher("srlpt", fr_request, scenarios)
    raise ValueError(f"unknown scheduler kind {kind!r}; expected one of {SCHEDULER_KINDS}")


def required_variant(kind: str) -> str:
    """FSM variant a scheduler needs: rejection and self-transport need ``extended``."""
    return "extended" if kind in ("manual", "msa-exact", "msa-srlpt") else "simple"


@dataclass(frozen=True)
class SchedulerSpec:
    """Picklable recipe for a dispatcher; each run builds a fresh one."""

    kind: str = "reactive"
    fr_request: float = 1.0
    scenarios: int = 50
    bab_cap: int = det_sched.DEFAULT_BAB_CAP
    msa_cap: int = stoch_sched.DEFAULT_EXACT_CAP

    def __post_init__(self) -> None:
        if self.kind not in SCHEDULER_KINDS:
            raise ValueError(f"unknown scheduler kind {self.kind!r}; expected one of {SCHEDULER_KINDS}")
        if not 0.0 <= self.fr_request <= 1.0:
            raise ValueError("fr_request must lie in [0, 1]")
        if self.scenarios < 1:
            raise ValueError("scenarios must be >= 1")

    @property
    def variant(self) -> str:
        return required_variant(self.kind)

    def build(self) -> Dispatcher:
        return make_dispatcher(self.kind, self.fr_request, scenarios=self.scenarios,
                               bab_cap=self.bab_cap, msa_cap=self.msa_cap)
