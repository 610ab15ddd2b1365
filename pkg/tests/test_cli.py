from __future__ import annotations

import copy
import json

import pytest

from harvestbot.cli import main
from harvestbot.config import ConfigError, parse_config, read_config_document

INSTANCE_A = """# M: 2
# now: 0
# load_s: 5
# unload_s: 5
id,release_s,one_way_s,process_s
R1,30,30,70
R2,0,40,90
R3,80,20,50
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def desk_doc(**changes):
    doc = copy.deepcopy(read_config_document("desk"))
    for path, value in changes.items():
        sec, key = path.split(".")
        doc[sec][key] = value
    return doc


def objective(out):
    return float(next(l for l in out.splitlines() if l.startswith("objective:")).split()[1])


@pytest.mark.parametrize("algo", ["brute", "bab", "srpt-convert"])
def test_solve_instance_a(tmp_path, capsys, algo):
    assert main(["solve", write(tmp_path, "a.csv", INSTANCE_A), "--algo", algo]) == 0
    assert objective(capsys.readouterr().out) == 330


def test_solve_output_is_deterministic(tmp_path, capsys):
    path = write(tmp_path, "a.csv", INSTANCE_A)
    main(["solve", path])
    first = capsys.readouterr().out
    main(["solve", path])
    assert capsys.readouterr().out == first


def test_solve_size_cap(tmp_path, capsys):
    rows = "".join(f"Q{i},{5 * i},20,50\n" for i in range(15))
    path = write(tmp_path, "big.csv", "# M: 2\nid,release_s,one_way_s,process_s\n" + rows)
    assert main(["solve", path, "--algo", "bab"]) == 4


def test_solve_malformed_names_line(tmp_path, capsys):
    path = write(tmp_path, "bad.csv", "# M: 1\nid,release_s,one_way_s,process_s\nR1,abc,3,4\n")
    assert main(["solve", path]) == 2
    assert "line 3" in capsys.readouterr().err


def test_solve_scenario_instance(tmp_path, capsys):
    text = "# robots: 1\nid,fill_s,one_way_s,self_transport_s\nR1,0,30,185\nR2,10,35,145\n"
    path = write(tmp_path, "b.csv", text)
    assert main(["solve", path, "--algo", "msa-exact"]) == 0
    assert objective(capsys.readouterr().out) == 135
    assert main(["solve", path, "--algo", "srlpt"]) == 0
    assert objective(capsys.readouterr().out) == 215


def test_schedule_msa_prints_plan(tmp_path, capsys):
    text = "# robots: 1\n# scenarios: 5\nid,fill_s,fill_sd_s,one_way_s,self_transport_s\nR1,0,0,30,185\nR2,10,0,35,145\n"
    assert main(["schedule-msa", write(tmp_path, "b.csv", text)]) == 0
    assert "order: R1 R2" in capsys.readouterr().out


@pytest.mark.parametrize("name, expected", [("full-block", "0.83"), ("full-block-msa", "0.66")])
def test_threshold_bundled(capsys, name, expected):
    assert main(["threshold", "--config", name]) == 0
    assert capsys.readouterr().out.splitlines()[0] == expected


def test_threshold_at_two_metres_per_second(tmp_path, capsys):
    doc = read_config_document("full-block")
    doc["sim"]["robot_speed"] = 2.0
    path = write(tmp_path, "fast.json", json.dumps(doc))
    assert main(["threshold", "--config", path]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "0.87"


def test_simulate_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["simulate", "--config", "desk", "--runs", "1", "--output-dir", str(out), "--trace"])
    assert code == 0
    assert (out / "metrics.json").exists() and (out / "trays.csv").exists()
    assert (out / "trays" / "seed_0.csv").exists()
    events = (out / "events" / "seed_0.jsonl").read_text().splitlines()
    assert {"t", "agent_kind", "transition"} <= set(json.loads(events[0]))


def test_simulate_is_byte_reproducible(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--config", "desk", "--runs", "2", "--seed", "5", "--output-dir", str(tmp_path / d)]) == 0
    for f in ("metrics.json", "trays.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_missing_section_is_named(tmp_path, capsys):
    doc = desk_doc()
    del doc["distributions"]
    assert main(["simulate", "--config", write(tmp_path, "c.json", json.dumps(doc))]) == 2
    assert "distributions" in capsys.readouterr().err


def test_variant_mismatch_is_rejected(tmp_path, capsys):
    doc = desk_doc(**{"sim.fsm_variant": "simple"})
    assert main(["simulate", "--config", write(tmp_path, "c.json", json.dumps(doc))]) == 2
    assert "sim.fsm_variant" in capsys.readouterr().err


def test_config_errors_name_field():
    with pytest.raises(ConfigError, match="scheduler.kind"):
        parse_config(desk_doc(**{"scheduler.kind": "magic"}))
    with pytest.raises(ConfigError, match="sim.crew_size"):
        parse_config(desk_doc(**{"sim.crew_size": "six"}))
    with pytest.raises(ConfigError, match="distributions.pick_time"):
        doc = desk_doc()
        doc["distributions"] = {"v_pick": 0.1, "v_walk": 1.0, "pick_time": {"edges": [1, 2], "weights": [0.5]}}
        parse_config(doc)


def test_unknown_config_and_bad_json(tmp_path, capsys):
    assert main(["threshold", "--config", "nowhere"]) == 2
    assert main(["threshold", "--config", write(tmp_path, "x.json", "{oops")]) == 2


def test_analyze_log(tmp_path, capsys):
    rows = ["timestamp_s,x_m,y_m,mass_g,button"]
    for t in range(0, 700):
        if t < 300:
            m = 15.0 * t
        elif t < 380:
            m = 0.0
        elif t < 640:
            m = min(500.0 + 15.0 * (t - 380), 4600.0)
        else:
            m = 0.0
        rows.append(f"{t},0,0,{m},0")
    rows += [f"{t},0,0,{500.0 + 15 * (t - 700)},0" for t in range(700, 720)]
    assert main(["analyze-log", write(tmp_path, "log.csv", "\n".join(rows) + "\n")]) == 0
    out = capsys.readouterr().out
    assert "trays: 2" in out
    assert "0,27.000,300.000,380.000,273.000,80.000" in out


def test_analyze_empty_log(tmp_path, capsys):
    assert main(["analyze-log", write(tmp_path, "empty.csv", "")]) == 2
    assert "line" in capsys.readouterr().err


def test_usage_error_exit_code(capsys):
    assert main(["solve"]) == 2
