"""Per-tray metrics, Monte-Carlo pooling and cart-log tray extraction."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .distributions import ParamDistributions
from .field import FieldMap
from .request_gen import UncertaintyParams
from .sim_core import HarvestTrace, SimConfig, SimulationFault, TrayRecord, run_harvest

Z95 = 1.96


class MetricsError(ValueError):
    """Metric undefined for the given input."""


class LogParseError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class MonteCarloFault(RuntimeError):
    def __init__(self, seed: int, cause: Exception):
        super().__init__(f"run with seed {seed} failed: {cause}")
        self.seed = seed


# -- scalar metrics ------------------------------------------------------------


def mean_efficiency(trays: Iterable) -> float:
    """Mean over trays of productive / (productive + non-productive)."""
    ratios = []
    for t in trays:
        ef, fe = t.productive, t.non_productive
        if ef <= 0 or fe is None or fe < 0:
            raise MetricsError(f"invalid tray interval ({ef}, {fe})")
        ratios.append(ef / (ef + fe))
    if not ratios:
        raise MetricsError("no trays")
    return float(np.mean(ratios))


def trays_per_hour(tray_count: int, duration_s: float) -> float:
    if duration_s <= 0:
        raise MetricsError("harvest duration must be positive")
    return tray_count / (duration_s / 3600.0)


def relative_precision(run_means: Sequence[float]) -> float:
    """Standard error of the pooled mean divided by the pooled mean."""
    x = np.asarray(run_means, dtype=float)
    if x.size < 2:
        raise MetricsError("relative precision needs at least two runs")
    mean = float(x.mean())
    if mean == 0:
        raise MetricsError("relative precision undefined for zero mean")
    return float(x.std(ddof=1) / math.sqrt(x.size) / abs(mean))


def plateau_estimate(mean_distance: float, robot_speed: float, load_time: float) -> float:
    """Non-productive time per tray when a robot is always free: one trip plus loading."""
    if robot_speed <= 0:
        raise MetricsError("robot speed must be positive")
    return mean_distance / robot_speed + load_time


# -- per-run and pooled statistics -------------------------------------------------


@dataclass
class RunMetrics:
    seed: int
    trays: int
    mean_wait: float
    mean_non_productive: float
    efficiency: float
    trays_per_hour: float
    mean_distance: float
    duration: float
    requests: int
    rejections: int
    self_transported: int


def run_metrics(trace: HarvestTrace) -> RunMetrics:
    trays = trace.complete_trays()
    if not trays:
        raise MetricsError(f"run {trace.seed} produced no complete trays")
    waits = [t.wait for t in trays if t.wait is not None]
    return RunMetrics(
        seed=trace.seed,
        trays=len(trays),
        mean_wait=float(np.mean(waits)) if waits else 0.0,
        mean_non_productive=float(np.mean([t.non_productive for t in trays])),
        efficiency=mean_efficiency(trays),
        trays_per_hour=trays_per_hour(len(trays), trace.duration),
        mean_distance=float(np.mean([t.distance for t in trays])),
        duration=trace.duration,
        requests=trace.requests,
        rejections=trace.rejections,
        self_transported=sum(1 for t in trays if t.served_by == "self"),
    )


@dataclass
class Pooled:
    """Pooled statistic over run means; ``sd`` and derived values are None for one run."""

    mean: float
    sd: float | None
    se: float | None
    ci95: float | None
    relative_precision: float | None
    n: int

    @classmethod
    def of(cls, values: Sequence[float]) -> Pooled:
        x = np.asarray(values, dtype=float)
        if x.size == 0:
            raise MetricsError("no values to pool")
        mean = float(x.mean())
        if x.size < 2:
            return cls(mean, None, None, None, None, 1)
        sd = 0.0 if np.all(x == x[0]) else float(x.std(ddof=1))
        se = sd / math.sqrt(x.size)
        rp = se / abs(mean) if mean != 0 else None
        return cls(mean, sd, se, Z95 * se, rp, int(x.size))

    @property
    def degenerate(self) -> bool:
        return self.sd is None


POOLED_FIELDS = ("mean_wait", "mean_non_productive", "efficiency", "trays_per_hour", "mean_distance")


@dataclass
class PooledStats:
    runs: int
    stats: dict[str, Pooled] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Pooled:
        return self.stats[key]

    @property
    def degenerate(self) -> bool:
        return self.runs < 2

    @classmethod
    def of(cls, runs: Sequence[RunMetrics]) -> PooledStats:
        return cls(len(runs), {k: Pooled.of([getattr(r, k) for r in runs]) for k in POOLED_FIELDS})


def gap_outside_ci(a: Pooled, b: Pooled) -> bool:
    """True if the difference of two pooled means exceeds its 95% CI half-width."""
    if a.se is None or b.se is None:
        return False
    return abs(a.mean - b.mean) > Z95 * math.hypot(a.se, b.se)


# -- Monte Carlo -------------------------------------------------------------------


@dataclass
class MonteCarloResult:
    runs: list[RunMetrics]
    pooled: PooledStats
    traces: list[HarvestTrace] = field(default_factory=list)


def _one_run(args) -> tuple[RunMetrics, HarvestTrace | None]:
    cfg, fm, dists, spec, uncertainty, keep, events = args
    try:
        tr = run_harvest(cfg, fm, dists, spec.build(), uncertainty, record_events=events)
    except (SimulationFault, MetricsError) as exc:
        raise MonteCarloFault(cfg.rng_seed, exc) from exc
    rm = run_metrics(tr)
    return rm, (tr if keep else None)


def monte_carlo(
    cfg: SimConfig,
    fm: FieldMap,
    dists: ParamDistributions,
    scheduler,
    run_count: int,
    base_seed: int = 0,
    *,
    uncertainty: UncertaintyParams | None = None,
    jobs: int = 1,
    keep_traces: bool = False,
    record_events: bool = False,
) -> MonteCarloResult:
    """Run seeds ``base_seed .. base_seed + run_count - 1`` and pool the results.

    ``scheduler`` is a :class:`~harvestbot.dispatch.SchedulerSpec` (a fresh
    dispatcher is built per run). Results are ordered by seed regardless of
    ``jobs``.
    """
    if run_count < 1:
        raise MetricsError("run_count must be >= 1")
    from dataclasses import replace

    tasks = [
        (replace(cfg, rng_seed=base_seed + i), fm, dists, scheduler, uncertainty, keep_traces, record_events)
        for i in range(run_count)
    ]
    if jobs > 1 and run_count > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_one_run, tasks))
    else:
        results = [_one_run(t) for t in tasks]
    runs = [r for r, _ in results]
    traces = [t for _, t in results if t is not None]
    return MonteCarloResult(runs, PooledStats.of(runs), traces)


# -- output --------------------------------------------------------------------------


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _clean(v):
    if isinstance(v, float):
        if math.isnan(v) or math.isinf(v):
            return None
        return round(v, 9)
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def metrics_document(result: MonteCarloResult, config: dict) -> dict:
    return _clean(
        {
            "config_digest": config_digest(config),
            "runs": [asdict(r) for r in result.runs],
            "pooled": {"runs": result.pooled.runs, "degenerate": result.pooled.degenerate,
                       **{k: asdict(v) for k, v in result.pooled.stats.items()}},
        }
    )


def write_metrics_json(path, result: MonteCarloResult, config: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(metrics_document(result, config), fh, sort_keys=True, indent=2)
        fh.write("\n")


TRAY_METRIC_COLUMNS = ("seed", "tray_id", "picker_id", "productive_s", "non_productive_s", "wait_s", "served_by")


def write_tray_metrics_csv(path, traces: Sequence[HarvestTrace]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRAY_METRIC_COLUMNS)
        for tr in traces:
            for t in tr.complete_trays():
                w.writerow([tr.seed, t.tray_id, t.picker_id, f"{t.productive:.6f}",
                            f"{t.non_productive:.6f}", "" if t.wait is None else f"{t.wait:.6f}",
                            t.served_by])


# -- cart logs -------------------------------------------------------------------------


@dataclass(frozen=True)
class CartSample:
    t: float
    x: float
    y: float
    mass: float
    button: int


@dataclass(frozen=True)
class LogTray:
    """Tray interval recovered from a cart log; ``non_productive`` is None if truncated."""

    index: int
    t_start: float
    t_end: float
    t_resume: float | None
    partial: bool = False

    @property
    def productive(self) -> float:
        return self.t_end - self.t_start

    @property
    def non_productive(self) -> float | None:
        return None if self.t_resume is None else self.t_resume - self.t_end

    @property
    def efficiency(self) -> float | None:
        fe = self.non_productive
        return None if fe is None else self.productive / (self.productive + fe)


CART_COLUMNS = ("timestamp_s", "x_m", "y_m", "mass_g", "button")


def read_cart_log(path) -> list[CartSample]:
    """Parse a cart-log CSV; errors carry the offending line number."""
    out: list[CartSample] = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise LogParseError(1, "empty log")
    header = [h.strip() for h in rows[0]]
    if tuple(header) != CART_COLUMNS:
        raise LogParseError(1, f"expected header {','.join(CART_COLUMNS)}")
    prev = None
    for i, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CART_COLUMNS):
            raise LogParseError(i, f"expected {len(CART_COLUMNS)} fields, got {len(row)}")
        try:
            t, x, y, m = (float(c) for c in row[:4])
            b = int(row[4])
        except ValueError as exc:
            raise LogParseError(i, str(exc)) from None
        if prev is not None and t <= prev:
            raise LogParseError(i, f"timestamp {t} not after {prev}")
        prev = t
        out.append(CartSample(t, x, y, m, b))
    if not out:
        raise LogParseError(2, "log has no samples")
    return out


def write_cart_log(path, samples: Sequence[CartSample]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CART_COLUMNS)
        for s in samples:
            w.writerow([f"{s.t:.3f}", f"{s.x:.3f}", f"{s.y:.3f}", f"{s.mass:.1f}", s.button])


def extract_tray_intervals(
    samples: Sequence[CartSample],
    *,
    full_threshold: float = 4000.0,
    drop: float = 3000.0,
    start_band: tuple[float, float] = (400.0, 600.0),
) -> list[LogTray]:
    """Recover tray intervals from the cart's gross-mass signal.

    A tray ends at the first sample whose mass has fallen by at least ``drop``
    from the previous sample, once the mass has exceeded ``full_threshold``.
    The next tray starts at the first later sample inside ``start_band`` (an
    empty tray on the scale); that instant also closes the previous tray's
    non-productive interval.
    """
    lo, hi = start_band
    trays: list[LogTray] = []
    t_start: float | None = None
    pending: tuple[float, float] | None = None
    armed = False
    prev: CartSample | None = None
    for s in samples:
        if prev is not None and s.t <= prev.t:
            raise LogParseError(0, f"timestamps not increasing at t={s.t}")
        if t_start is None:
            if lo <= s.mass <= hi:
                t_start = s.t
                if pending is not None:
                    trays.append(LogTray(len(trays), pending[0], pending[1], s.t))
                    pending = None
        else:
            if s.mass > full_threshold:
                armed = True
            elif armed and prev is not None and prev.mass - s.mass >= drop:
                pending = (t_start, s.t)
                t_start = None
                armed = False
        prev = s
    if pending is not None:
        trays.append(LogTray(len(trays), pending[0], pending[1], None, partial=True))
    return trays


def trace_to_cart_log(
    trace: HarvestTrace,
    picker_id: int,
    *,
    period: float = 0.5,
    capacity: float = 4500.0,
    tare: float = 500.0,
) -> list[CartSample]:
    """Synthesize the cart log one picker would have produced.

    The scale shows the tare plus a linear fill while a tray is on the cart
    and zero from the tray-full instant until picking resumes. The request
    button is held from tray full until the exchange completes.
    """
    trays = sorted((t for t in trace.trays if t.picker_id == picker_id), key=lambda t: t.t_start)
    if not trays:
        return []
    end = max(t.t_resume for t in trays)
    n = int(round(end / period)) + 1
    out: list[CartSample] = []
    j = 0
    for k in range(n):
        t = k * period
        while j + 1 < len(trays) and t >= trays[j + 1].t_start - 1e-9:
            j += 1
        tr = trays[j]
        if t < tr.t_end - 1e-9 or tr.partial:
            frac = (t - tr.t_start) / max(tr.t_end - tr.t_start, 1e-9)
            full = tr.mass if tr.partial else capacity
            mass, button = tare + full * min(max(frac, 0.0), 1.0), 0
        elif t < tr.t_resume - 1e-9:
            mass, button = 0.0, 1
        else:
            mass, button = tare, 0
        out.append(CartSample(round(t, 6), tr.x_full, tr.y_full, mass, button))
    return out
