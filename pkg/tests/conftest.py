import copy
import json
import pathlib
import sys

import pytest

SCENARIOS = pathlib.Path(__file__).resolve().parent.parent / "scenarios"


def load_doc(name):
    return json.loads((SCENARIOS / name).read_text())


@pytest.fixture
def two_queues_doc():
    return load_doc("two_queues.json")


@pytest.fixture
def loopback_doc():
    return load_doc("loopback_latency.json")


@pytest.fixture
def dut_doc():
    return load_doc("dut_latency.json")


def small_doc():
    """One generator feeding one counter over a 2 m cable."""
    return copy.deepcopy({
        "version": 1,
        "seed": 5,
        "devices": [{"id": "a", "queues": 2}, {"id": "b", "queues": 2}],
        "links": [{"a": "a", "b": "b", "length_m": 2.0}],
        "tasks": [
            {"id": "gen", "kind": "generator", "queue": {"device": "a", "queue": 0},
             "pattern": {"type": "cbr", "rate_pps": 1000000}, "options": {"packets": 200}},
            {"id": "cnt", "kind": "counter", "queue": {"device": "b", "queue": 0}},
        ],
    })


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
