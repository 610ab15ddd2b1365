"""Run configuration: JSON document with field, sim, distributions, uncertainty,
scheduler and experiment sections."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from .dispatch import SCHEDULER_KINDS, SchedulerSpec, required_variant
from .distributions import DistributionError, Histogram, ParamDistributions, synthetic_distributions
from .field import FieldError, FieldMap, Point, SpeedProfile, evenly_spaced_stations
from .request_gen import UncertaintyParams
from .sim_core import SimConfig

BUNDLED = ("full-block", "full-block-msa", "desk")


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclass
class RunConfig:
    field: FieldMap
    sim: SimConfig
    distributions: ParamDistributions
    uncertainty: UncertaintyParams
    scheduler: SchedulerSpec
    run_count: int
    base_seed: int
    output_dir: str
    raw: dict


def _section(doc: dict, name: str) -> dict:
    if name not in doc:
        raise ConfigError(name, "missing section")
    sec = doc[name]
    if not isinstance(sec, (dict, str)):
        raise ConfigError(name, "section must be an object")
    return sec


def _get(sec: dict, path: str, key: str, kind=float, default: Any = ...):
    if key not in sec:
        if default is ...:
            raise ConfigError(f"{path}.{key}", "required field missing")
        return default
    v = sec[key]
    try:
        if kind is int:
            if isinstance(v, bool) or int(v) != v:
                raise ValueError
            return int(v)
        if kind is float:
            if isinstance(v, bool):
                raise ValueError
            return float(v)
        if kind is str:
            if not isinstance(v, str):
                raise ValueError
            return v
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.{key}", f"expected {kind.__name__}, got {v!r}") from None
    return v


def _field(sec: dict) -> FieldMap:
    n = _get(sec, "field", "furrow_count", int)
    spacing = _get(sec, "field", "bed_spacing")
    st = sec.get("stations")
    if st is None:
        raise ConfigError("field.stations", "required field missing")
    if isinstance(st, dict) and "evenly_spaced" in st:
        stations = evenly_spaced_stations(n, spacing, _get(st, "field.stations", "evenly_spaced", int))
    elif isinstance(st, list) and st:
        try:
            stations = tuple(Point(float(x), 0.0) for x in st)
        except (TypeError, ValueError):
            raise ConfigError("field.stations", "expected a list of x positions") from None
    else:
        raise ConfigError("field.stations", "expected a list of x positions or {evenly_spaced: n}")
    try:
        return FieldMap(
            furrow_count=n,
            furrow_length=_get(sec, "field", "furrow_length"),
            bed_spacing=spacing,
            split_line_y=_get(sec, "field", "split_line_y"),
            station_positions=stations,
            active_station_index=_get(sec, "field", "active_station_index", int, 0),
        )
    except FieldError as exc:
        raise ConfigError("field", str(exc)) from None


def _hist(v, path: str) -> Histogram:
    try:
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return Histogram.point(float(v))
        if isinstance(v, dict):
            return Histogram(tuple(v["edges"]), tuple(v["weights"]))
    except KeyError as exc:
        raise ConfigError(path, f"missing {exc.args[0]}") from None
    except (DistributionError, TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None
    raise ConfigError(path, "expected a number or {edges, weights}")


def _distributions(sec) -> ParamDistributions:
    if sec == "synthetic":
        return synthetic_distributions()
    if not isinstance(sec, dict):
        raise ConfigError("distributions", "expected \"synthetic\" or an object of histograms")
    hs = {}
    for k in ("v_pick", "v_walk", "pick_time"):
        if k not in sec:
            raise ConfigError(f"distributions.{k}", "required field missing")
        hs[k] = _hist(sec[k], f"distributions.{k}")
    try:
        return ParamDistributions(**hs)
    except DistributionError as exc:
        raise ConfigError("distributions", str(exc)) from None


def parse_config(doc: dict, *, seed: int | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    fm = _field(_section(doc, "field"))
    sim = _section(doc, "sim")
    dists = _distributions(_section(doc, "distributions"))
    sch = _section(doc, "scheduler")
    exp = _section(doc, "experiment")

    kind = _get(sch, "scheduler", "kind", str)
    if kind not in SCHEDULER_KINDS:
        raise ConfigError("scheduler.kind", f"unknown kind {kind!r}; expected one of {', '.join(SCHEDULER_KINDS)}")
    need = required_variant(kind)
    variant = _get(sim, "sim", "fsm_variant", str, need)
    if variant != need:
        raise ConfigError("sim.fsm_variant", f"scheduler {kind!r} requires the {need!r} variant, got {variant!r}")
    fr = _get(sch, "scheduler", "fr_request", float, 1.0)
    try:
        spec = SchedulerSpec(
            kind=kind,
            fr_request=fr,
            scenarios=_get(sch, "scheduler", "scenario_count", int, 50),
            bab_cap=_get(sch, "scheduler", "bab_cap", int, 12),
            msa_cap=_get(sch, "scheduler", "msa_cap", int, 6),
        )
    except ValueError as exc:
        raise ConfigError("scheduler", str(exc)) from None

    if "robot_speed" in sim:
        v = _get(sim, "sim", "robot_speed")
        hv, fv = v, v
    else:
        hv = _get(sim, "sim", "headland_speed")
        fv = _get(sim, "sim", "furrow_speed")
    try:
        profile = SpeedProfile(hv, fv)
    except FieldError as exc:
        raise ConfigError("sim.robot_speed", str(exc)) from None

    base_seed = _get(exp, "experiment", "base_seed", int, 0)
    if seed is not None:
        base_seed = seed
    try:
        cfg = SimConfig(
            timestep=_get(sim, "sim", "timestep", float, 0.5),
            tray_capacity=_get(sim, "sim", "tray_capacity", float, 4500.0),
            load_time=_get(sim, "sim", "load_time", float, 5.0),
            unload_time=_get(sim, "sim", "unload_time", float, 5.0),
            robot_standoff=_get(sim, "sim", "robot_standoff", float, 5.0),
            crew_size=_get(sim, "sim", "crew_size", int),
            robot_count=_get(sim, "sim", "robot_count", int),
            speed_profile=profile,
            fr_request=fr,
            fsm_variant=variant,
            rng_seed=base_seed,
            max_steps=_get(sim, "sim", "max_steps", int, 2_000_000),
        )
    except ValueError as exc:
        raise ConfigError("sim", str(exc)) from None
    if cfg.crew_size > fm.furrow_count:
        raise ConfigError("sim.crew_size", "cannot exceed field.furrow_count")

    if kind.startswith("msa"):
        unc_sec = _section(doc, "uncertainty")
    else:
        unc_sec = doc.get("uncertainty", {})
    if not isinstance(unc_sec, dict):
        raise ConfigError("uncertainty", "section must be an object")
    try:
        unc = UncertaintyParams(
            bias_fraction=_get(unc_sec, "uncertainty", "bias_fraction", float, 0.0),
            pred_sd=_get(unc_sec, "uncertainty", "pred_sd", float, 0.0),
            loc_noise_halfwidth=_get(unc_sec, "uncertainty", "loc_noise_halfwidth", float, 0.0),
            window_s=_get(unc_sec, "uncertainty", "window_s", float, 60.0),
            sample_period_s=_get(unc_sec, "uncertainty", "sample_period_s", float, 1.0),
        )
    except ValueError as exc:
        raise ConfigError("uncertainty", str(exc)) from None

    run_count = _get(exp, "experiment", "run_count", int, 1)
    if run_count < 1:
        raise ConfigError("experiment.run_count", "must be >= 1")
    return RunConfig(fm, cfg, dists, unc, spec, run_count, base_seed,
                     _get(exp, "experiment", "output_dir", str, "out"), doc)


def read_config_document(source: str) -> dict:
    """Load JSON from a path, or a bundled config by name (full-block, full-block-msa, desk)."""
    p = Path(source)
    try:
        if p.exists():
            text = p.read_text(encoding="utf-8")
        elif source in BUNDLED:
            text = resources.files("harvestbot.configs").joinpath(f"{source}.json").read_text(encoding="utf-8")
        else:
            raise ConfigError("--config", f"no such file or bundled config: {source}")
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None


def load_config(source: str, *, seed: int | None = None) -> RunConfig:
    return parse_config(read_config_document(source), seed=seed)
