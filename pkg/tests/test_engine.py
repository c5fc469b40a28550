import copy

import numpy as np
import pytest

from mgsim.errors import ConfigInvalid
from mgsim.runtime import Master, launch, parse
from mgsim.runtime.engine import latency_histogram, udp_dst_port
from mgsim.wireclock import LinkModel, propagation_ticks, serialization_ticks

from conftest import small_doc
from oracles import naive_checksum


def test_master_runs_inline_and_threaded():
    for workers in (1, 4):
        m = Master(workers)
        hs = [m.launch(f"t{i}", "generator", lambda x: x * x, i) for i in range(8)]
        assert [h.result() for h in hs] == [i * i for i in range(8)]
        m.wait_for_slaves()


def test_result_collected_once_and_errors_propagate():
    m = Master(1)
    h = m.launch("t", "counter", lambda: 1)
    assert h.result() == 1
    with pytest.raises(RuntimeError):
        h.result()

    def boom():
        raise ValueError("bad")
    with pytest.raises(ValueError):
        Master(2).launch("x", "counter", boom).result()


def test_small_run_counts():
    r = launch(parse(small_doc()))
    gen, cnt = r.data["tasks"]["gen"], r.data["tasks"]["cnt"]
    assert gen["packets"] == 200 and cnt["rx"]["packets"] == 200
    assert r.data["devices"]["a"]["tx_frames"] == 200
    assert r.data["devices"]["b"]["rx_packets"] == 200
    assert r.data["devices"]["b"]["rx_errors"] == 0


def test_two_queues_independent_rates(two_queues_doc):
    r = launch(parse(two_queues_doc))
    t = r.data["tasks"]
    assert t["flow1"]["packets"] == 1000 and t["flow2"]["packets"] == 2000
    assert t["rx1"]["rx"]["packets"] == 1000 and t["rx2"]["rx"]["packets"] == 2000
    assert t["rx1"]["rx"]["mpps_mean"] == pytest.approx(0.5, rel=0.01)
    assert t["rx2"]["rx"]["mpps_mean"] == pytest.approx(1.0, rel=0.01)
    # flow1's own stream does not depend on flow2 being present
    alone = copy.deepcopy(two_queues_doc)
    alone["tasks"] = [x for x in alone["tasks"] if x["id"] not in ("flow2", "rx2")]
    assert launch(parse(alone)).data["tasks"]["flow1"] == t["flow1"]


def test_modifier_and_filter_in_capture(two_queues_doc):
    r = launch(parse(two_queues_doc))
    cap = r.captures["rx1"]
    assert len(cap) == 1000
    assert {udp_dst_port(f) for _, f in cap} == {42}
    srcs = {bytes(f[26:30]) for _, f in cap}
    assert len(srcs) > 100
    assert all(s[:3] == bytes([10, 0, 0]) and 1 <= s[3] <= 255 for s in srcs)
    assert all(naive_checksum(f[14:34]) == 0 for _, f in cap[:50])


def test_deterministic_and_worker_independent(two_queues_doc, dut_doc):
    for doc in (two_queues_doc, dut_doc):
        a = launch(parse(doc)).to_json()
        assert launch(parse(doc)).to_json() == a
        assert launch(parse(doc), workers=4).to_json() == a


def test_seed_override_changes_random_streams(two_queues_doc):
    sc = parse(two_queues_doc)
    a = launch(sc)
    b = launch(sc, seed=99)
    assert b.data["seed"] == 99
    assert a.captures["rx1"] != b.captures["rx1"]


def test_dut_scenario_conservation(dut_doc):
    r = launch(parse(dut_doc))
    t = r.data["tasks"]
    gen, dut, rx = t["load"], t["dut"], t["rx"]
    assert dut["offered"] == gen["packets"]
    assert dut["forwarded"] + dut["drops"] == gen["packets"]
    assert rx["rx"]["packets"] == dut["forwarded"]
    # gap fillers fail the FCS check at the DuT's port and are never forwarded
    assert r.data["devices"]["dut_in"]["rx_errors"] == gen["fillers"]
    assert dut["interrupts"] <= dut["polls"]


def _dut_latency_doc(throttle_ns=0.0):
    return {
        "version": 1, "seed": 2,
        "devices": [{"id": "src"}, {"id": "din"}, {"id": "dout"}, {"id": "dst"}],
        "links": [{"a": "src", "b": "din", "length_m": 3.0}, {"a": "dout", "b": "dst", "length_m": 10.0}],
        "tasks": [
            {"id": "lat", "kind": "latency", "queue": {"device": "src"},
             "options": {"rx": {"device": "dst"}, "samples": 50}},
            {"id": "dut", "kind": "dut", "queue": {"device": "din"},
             "options": {"egress": {"device": "dout"}, "service_rate_pps": 2e6,
                         "interrupt_throttle_ns": throttle_ns}},
        ],
    }


def test_latency_through_dut_is_exact_with_ideal_clocks():
    r = launch(parse(_dut_latency_doc()))
    lat = r.data["tasks"]["lat"]
    assert lat["samples"] == 50
    p1 = propagation_ticks(LinkModel(3.0, 0.72, 310.7))
    p2 = propagation_ticks(LinkModel(10.0, 0.72, 310.7))
    expected = (p1 + p2 + serialization_ticks(84 + 20, 10**10) + 5_000_000) / 1e4
    assert np.allclose(lat["latency_ns"], expected)
    assert r.data["tasks"]["dut"]["forwarded"] == 50


def test_latency_loopback(loopback_doc):
    lat = launch(parse(loopback_doc)).data["tasks"]["lat"]
    vals = set(np.round(lat["latency_ns"], 1))
    assert vals <= {345.6, 358.4}
    assert lat["samples"] + lat["lost"] == 2000
    hist = latency_histogram(lat)
    assert hist.total == lat["samples"]


def test_gapfill_needs_port_to_itself():
    doc = small_doc()
    doc["tasks"][0]["options"]["rate_control"] = "gapfill"
    doc["tasks"].append({"id": "lat", "kind": "latency", "queue": {"device": "a", "queue": 1},
                         "options": {"rx": {"device": "b", "queue": 1}, "samples": 3}})
    with pytest.raises(ConfigInvalid) as ei:
        launch(parse(doc))
    assert ei.value.path == "tasks[0].options.rate_control"


def test_latency_rx_must_be_reachable():
    doc = _dut_latency_doc()
    doc["tasks"][0]["options"]["rx"] = {"device": "dout"}
    with pytest.raises(ConfigInvalid) as ei:
        launch(parse(doc))
    assert ei.value.path == "tasks[0].options.rx"


def test_dut_loop_rejected():
    doc = {
        "version": 1,
        "devices": [{"id": "a"}, {"id": "b"}],
        "links": [{"a": "a", "b": "b"}],
        "tasks": [
            {"id": "d1", "kind": "dut", "queue": {"device": "a"}, "options": {"egress": {"device": "a"}}},
            {"id": "d2", "kind": "dut", "queue": {"device": "b"}, "options": {"egress": {"device": "b"}}},
        ],
    }
    with pytest.raises(ConfigInvalid):
        launch(parse(doc))


def test_bad_template_field_path():
    doc = small_doc()
    doc["tasks"][0]["template"] = {"stack": ["eth", "ip4", "udp"], "defaults": {"nope": 1}}
    with pytest.raises(ConfigInvalid) as ei:
        launch(parse(doc))
    assert ei.value.path.startswith("tasks[0].template")
