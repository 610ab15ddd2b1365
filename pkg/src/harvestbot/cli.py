"""Command-line entry point.

Exit codes: 0 success, 2 invalid input, 3 simulation fault, 4 instance too
large for an exact solver.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import det_sched, stoch_sched
from .config import ConfigError, load_config
from .field import max_service_distance, max_service_travel_time
from .metrics import (
    LogParseError,
    MonteCarloFault,
    extract_tray_intervals,
    mean_efficiency,
    monte_carlo,
    read_cart_log,
    write_metrics_json,
    write_tray_metrics_csv,
)
from .request_gen import Gaussian, fr_threshold

EXIT_OK, EXIT_INPUT, EXIT_FAULT, EXIT_CAP = 0, 2, 3, 4


class InputError(ValueError):
    pass


_HEADER_ALIASES = {"M": "robots", "L": "load_s", "UL": "unload_s"}


# -- instance files ----------------------------------------------------------------


def read_instance(path: str) -> tuple[dict, list[dict]]:
    """Parse ``# key: value`` header lines followed by a CSV table."""
    header: dict[str, str] = {}
    body: list[tuple[int, str]] = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    for i, line in enumerate(lines, start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            key, sep, val = s[1:].partition(":")
            if not sep:
                raise InputError(f"line {i}: header lines must look like '# key: value'")
            header[_HEADER_ALIASES.get(key.strip(), key.strip())] = val.strip()
        else:
            body.append((i, line))
    if not body:
        raise InputError(f"{path}: no table rows")
    cols = [c.strip() for c in next(csv.reader([body[0][1]]))]
    rows = []
    for i, line in body[1:]:
        vals = [c.strip() for c in next(csv.reader([line]))]
        if len(vals) != len(cols):
            raise InputError(f"line {i}: expected {len(cols)} fields, got {len(vals)}")
        row = dict(zip(cols, vals))
        row["_line"] = i
        rows.append(row)
    return header, rows


def _num(row: dict, key: str, default: float | None = None) -> float:
    v = row.get(key, "")
    if v == "":
        if default is None:
            raise InputError(f"line {row['_line']}: missing {key}")
        return default
    try:
        return float(v)
    except ValueError:
        raise InputError(f"line {row['_line']}: {key}={v!r} is not a number") from None


def _hnum(header: dict, key: str, default: float) -> float:
    if key not in header:
        return default
    try:
        return float(header[key])
    except ValueError:
        raise InputError(f"header {key}: {header[key]!r} is not a number") from None


def _availability(header: dict) -> list[float]:
    m = int(_hnum(header, "robots", 1))
    if "availability" in header:
        try:
            a = [float(x) for x in header["availability"].split(",") if x.strip()]
        except ValueError:
            raise InputError("header availability: expected comma-separated numbers") from None
        if len(a) != m:
            raise InputError(f"header availability: expected {m} values, got {len(a)}")
        return a
    return [0.0] * m


def _timelines(header: dict, rows: list[dict]) -> list[det_sched.RequestTimeline]:
    load = _hnum(header, "load_s", 5.0)
    unload = _hnum(header, "unload_s", 5.0)
    out = []
    for r in rows:
        u = _num(r, "one_way_s")
        if "release_s" in r and r["release_s"] != "":
            rel = _num(r, "release_s")
        else:
            rel = max(_num(r, "fill_s") - u, 0.0)
        proc = _num(r, "process_s", 2 * u + load + unload)
        if min(u, rel, proc) < 0:
            raise InputError(f"line {r['_line']}: times must be non-negative")
        out.append(det_sched.RequestTimeline(r.get("id") or str(r["_line"]), u, rel, proc,
                                             fill=_num(r, "fill_s", rel + u)))
    return out


def _scenario_requests(header: dict, rows: list[dict], fills: Sequence[float]) -> stoch_sched.Scenario:
    load = _hnum(header, "load_s", 5.0)
    unload = _hnum(header, "unload_s", 5.0)
    reqs = []
    for r, f in zip(rows, fills):
        u = _num(r, "one_way_s")
        reqs.append(
            stoch_sched.ScenarioRequest(
                r.get("id") or str(r["_line"]), max(f, 0.0), u,
                _num(r, "process_s", 2 * u + load + unload),
                _num(r, "self_transport_s"), _num(r, "y_full_m", float("inf")),
            )
        )
    return stoch_sched.Scenario(tuple(reqs), load)


def _print_schedule(s: det_sched.Schedule) -> None:
    print(f"objective: {s.objective:.3f}")
    print(f"total_wait: {s.total_wait:.3f}")
    for k, tuples in enumerate(s.dispatch_tuples):
        seq = " ".join(f"{d.request_id}@{d.dispatch_time:.3f}" for d in tuples)
        print(f"robot {k}: {seq}")
    print("id,robot,dispatch_s,arrival_s,completion_s,wait_s")
    for rid in sorted(s.timelines, key=lambda r: (s.timelines[r].dispatch, str(r))):
        t = s.timelines[rid]
        print(f"{rid},{t.robot},{t.dispatch:.3f},{t.arrival:.3f},{t.completion:.3f},{t.wait:.3f}")


def _print_solution(sol: stoch_sched.ScenarioSolution) -> None:
    print(f"objective: {sol.objective:.3f}")
    for rid in sol.serving_order():
        sv = sol.served[rid]
        print(f"serve {rid}: order={sv.order} robot={sv.robot} start={sv.start:.3f}")
    for rid in sorted(sol.rejected, key=str):
        print(f"reject {rid}")


# -- commands ----------------------------------------------------------------------


def cmd_solve(args) -> int:
    header, rows = read_instance(args.instance)
    avail = _availability(header)
    now = _hnum(header, "now", 0.0)
    algo = args.algo
    if algo in ("bab", "srpt-convert", "brute"):
        tls = _timelines(header, rows)
        fn = {"bab": det_sched.schedule_bab, "srpt-convert": det_sched.schedule_srpt_convert,
              "brute": det_sched.brute_force_schedule}[algo]
        _print_schedule(fn(tls, avail, now))
        return EXIT_OK
    scn = _scenario_requests(header, rows, [_num(r, "fill_s") for r in rows])
    if algo == "msa-exact":
        sol = stoch_sched.solve_scenario_exact(scn, avail)
    else:
        sol = stoch_sched.solve_scenario_srlpt(scn, avail)
    _print_solution(sol)
    return EXIT_OK


def cmd_schedule_msa(args) -> int:
    header, rows = read_instance(args.instance)
    avail = _availability(header)
    count = int(_hnum(header, "scenarios", 50))
    seed = args.seed if args.seed is not None else int(_hnum(header, "seed", 0))
    solver = header.get("solver", "exact")
    if solver not in ("exact", "srlpt"):
        raise InputError("header solver: expected exact or srlpt")
    rng = np.random.default_rng(seed)
    dists = [Gaussian(_num(r, "fill_s"), _num(r, "fill_sd_s", 0.0)) for r in rows]
    sols = []
    for _ in range(count):
        scn = _scenario_requests(header, rows, [g.sample(rng) for g in dists])
        if solver == "exact":
            sols.append(stoch_sched.solve_scenario_exact(scn, avail))
        else:
            sols.append(stoch_sched.solve_scenario_srlpt(scn, avail))
    ids = [r.get("id") or str(r["_line"]) for r in rows]
    plan = stoch_sched.consensus(sols, ids, {i: g.mean for i, g in zip(ids, dists)})
    print(f"scenarios: {count}")
    print("order: " + " ".join(str(r) for r in plan.order))
    for rid in plan.order:
        print(f"{rid}: score={plan.scores[rid]}" + (" rejected" if rid in plan.rejected else ""))
    return EXIT_OK


def cmd_threshold(args) -> int:
    rc = load_config(_require_config(args))
    prof = rc.sim.speed_profile
    mean_pick = rc.distributions.pick_time.mean
    thr = fr_threshold(prof.headland_speed, prof.furrow_speed, rc.field, mean_pick)
    print(f"{thr:.2f}")
    print(f"fr_threshold: {thr:.6f}")
    print(f"max_distance_m: {max_service_distance(rc.field):.3f}")
    print(f"max_one_way_s: {max_service_travel_time(rc.field, prof):.3f}")
    print(f"mean_pick_time_s: {mean_pick:.3f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    rc = load_config(_require_config(args), seed=args.seed)
    runs = args.runs if args.runs is not None else rc.run_count
    if runs < 1:
        raise ConfigError("--runs", "must be >= 1")
    spec = rc.scheduler
    cfg = rc.sim
    if args.fr is not None:
        if not 0 <= args.fr <= 1:
            raise ConfigError("--fr", "must lie in [0, 1]")
        spec = replace(spec, fr_request=args.fr)
        cfg = replace(cfg, fr_request=args.fr)
    out = Path(args.output_dir or rc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = monte_carlo(cfg, rc.field, rc.distributions, spec, runs, rc.base_seed,
                      uncertainty=rc.uncertainty, jobs=args.jobs, keep_traces=True,
                      record_events=args.trace)
    raw = dict(rc.raw)
    raw["_effective"] = {"runs": runs, "base_seed": rc.base_seed, "fr_request": spec.fr_request}
    write_metrics_json(out / "metrics.json", res, raw)
    write_tray_metrics_csv(out / "trays.csv", res.traces)
    (out / "trays").mkdir(exist_ok=True)
    for tr in res.traces:
        tr.write_trays_csv(out / "trays" / f"seed_{tr.seed}.csv")
        if args.trace:
            (out / "events").mkdir(exist_ok=True)
            tr.write_events_jsonl(out / "events" / f"seed_{tr.seed}.jsonl")
    p = res.pooled
    print(f"runs: {p.runs}")
    for k, v in p.stats.items():
        ci = "n/a" if v.ci95 is None else f"{v.ci95:.4f}"
        print(f"{k}: {v.mean:.4f} (95% CI +/- {ci})")
    print(f"outputs: {out}")
    return EXIT_OK


def cmd_analyze_log(args) -> int:
    samples = read_cart_log(args.log)
    trays = extract_tray_intervals(samples)
    print("tray,t_start_s,t_end_s,t_resume_s,productive_s,non_productive_s,efficiency,partial")
    for t in trays:
        res = "" if t.t_resume is None else f"{t.t_resume:.3f}"
        fe = "" if t.non_productive is None else f"{t.non_productive:.3f}"
        eff = "" if t.efficiency is None else f"{t.efficiency:.4f}"
        print(f"{t.index},{t.t_start:.3f},{t.t_end:.3f},{res},{t.productive:.3f},{fe},{eff},{int(t.partial)}")
    done = [t for t in trays if not t.partial]
    print(f"trays: {len(trays)}")
    print("mean_efficiency: " + (f"{mean_efficiency(done):.4f}" if done else "n/a"))
    return EXIT_OK


def _require_config(args) -> str:
    if not args.config:
        raise ConfigError("--config", "required for this command")
    return args.config


# -- parser -------------------------------------------------------------------------


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="config file path or bundled name (full-block, full-block-msa, desk)")
    p.add_argument("--seed", type=int, default=d(None), help="override the base seed")
    p.add_argument("--jobs", type=int, default=d(1), help="parallel Monte-Carlo workers")
    p.add_argument("--output-dir", default=d(None), help="directory for result files")
    p.add_argument("--trace", action="store_true", default=d(False), help="also write JSON-lines event traces")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="harvestbot", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run Monte-Carlo harvest simulations")
    _global_flags(p, suppress=True)
    p.add_argument("--runs", type=int, default=None, help="override experiment.run_count")
    p.add_argument("--fr", type=float, default=None, help="override scheduler.fr_request")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="solve one scheduling instance")
    _global_flags(p, suppress=True)
    p.add_argument("instance")
    p.add_argument("--algo", choices=("bab", "srpt-convert", "brute", "msa-exact", "srlpt"), default="bab")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("schedule-msa", help="consensus plan for a stochastic instance")
    _global_flags(p, suppress=True)
    p.add_argument("instance")
    p.set_defaults(func=cmd_schedule_msa)

    p = sub.add_parser("threshold", help="print the FR threshold of a configuration")
    _global_flags(p, suppress=True)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("analyze-log", help="extract tray intervals from a cart log")
    _global_flags(p, suppress=True)
    p.add_argument("log")
    p.set_defaults(func=cmd_analyze_log)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, InputError, LogParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (det_sched.ScheduleSizeError, stoch_sched.ScenarioSizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except MonteCarloFault as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAULT


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
