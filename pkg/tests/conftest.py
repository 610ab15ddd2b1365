from __future__ import annotations

import pytest

from harvestbot.det_sched import make_timeline
from harvestbot.field import FieldMap, Point
from harvestbot.stoch_sched import Scenario, make_scenario_request


@pytest.fixture
def instance_a():
    """Three requests (fill, one-way) served from an idle fleet, L = UL = 5 s."""
    return [
        make_timeline("R1", 60, 30, 5, 5),
        make_timeline("R2", 20, 40, 5, 5),
        make_timeline("R3", 100, 20, 5, 5),
    ]


@pytest.fixture
def instance_b():
    """One robot; self-transport is competitive with queueing behind another tray."""
    return Scenario(
        (
            make_scenario_request("R1", 0, 30, 185, 5, 5),
            make_scenario_request("R2", 10, 35, 145, 5, 5),
        ),
        load_time=5,
    )


@pytest.fixture
def small_field():
    return FieldMap(10, 100.0, 1.65, 50.0, (Point(8.25, 0.0),))


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line; the list is printed in the terminal summary."""

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"{label}: {'PASS' if ok else 'FAIL'} | {detail}"
        request.config.stash[_VERDICTS].append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
