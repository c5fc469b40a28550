from fractions import Fraction

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from mgsim import packet as pk
from mgsim.dutsim import DutModel, DutQueue
from mgsim.ratectl import GapParams, gapfill_encode
from mgsim.runtime import dumps, loads, parse
from mgsim.wireclock import PortClock, serialization_ticks

from oracles import crc32_bitwise, naive_checksum

RATE = 10**10
PARAMS = GapParams()
quick = settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@quick
@given(st.binary(max_size=150).map(lambda b: b + b"\x00" * (len(b) % 2)))
def test_ones_complement_matches_oracle(data):
    assert pk.ipv4_checksum(data) == naive_checksum(data)


@quick
@given(st.binary(min_size=1, max_size=300))
def test_fcs_matches_oracle_and_validates(data):
    crc = pk.crc32_fcs(data)
    assert crc == crc32_bitwise(data)
    framed = data + crc.to_bytes(4, "little")
    assert pk.fcs_valid(framed)
    assert pk.fcs_residue(framed) == pk.fcs_residue(b"\x00" * 8 + pk.crc32_fcs(b"\x00" * 8).to_bytes(4, "little"))


@quick
@given(st.lists(st.integers(84, 400), min_size=1, max_size=30), st.integers(0, 10**6))
def test_serialization_additive(lens, extra):
    assert sum(serialization_ticks(n, RATE) for n in lens) == serialization_ticks(sum(lens), RATE)


@quick
@given(st.lists(st.floats(67.2, 5000.0), min_size=1, max_size=300))
def test_gapfill_bounded_error(deltas):
    plan = gapfill_encode(deltas, 84, RATE)
    assert plan.payload_count == len(deltas)
    for f in plan.fillers:
        assert PARAMS.min_filler_wire <= f.wire_len <= PARAMS.max_filler_wire
    assert abs(plan.max_abs_error_bytes) <= Fraction(PARAMS.min_filler_wire, 2)
    # payload k never strays more than half a minimum filler from its requested start
    bt = serialization_ticks(1, RATE)
    got = plan.payload_departures()
    want = np.concatenate([[0], np.cumsum(np.round(np.asarray(deltas) * 1e4).astype(np.int64))[:-1]])
    assert np.max(np.abs(got - want)) <= PARAMS.min_filler_wire * bt // 2 + bt


@quick
@given(st.lists(st.integers(0, 20_000_000), min_size=1, max_size=400),
       st.floats(1e5, 5e6), st.integers(1, 64), st.floats(0, 10_000), st.integers(1, 128))
def test_dut_invariants(gaps, mu, buf, throttle, batch):
    q = DutQueue(DutModel(mu, buf, throttle, batch))
    t = 0
    last = -1
    for g in gaps:
        t += g
        d = q.offer(t)
        if d is not None:
            assert d >= t + q.service
            if last >= 0:
                assert d >= last + q.service
            last = d
        assert q._in_system(t) <= buf
    assert q.forwarded + q.drops == len(gaps)
    assert 1 <= q.interrupts <= q.polls <= q.forwarded or q.forwarded == 0


@quick
@given(st.sampled_from(["ideal", "82599", "X540", "82580"]),
       st.lists(st.integers(0, 10**12), min_size=2, max_size=50), st.floats(-5e-5, 5e-5))
def test_clock_event_monotone(preset, times, drift):
    c = PortClock.preset(preset, np.random.default_rng(0), drift=drift)
    stamps = [c.event_ticks(t) for t in sorted(times)]
    assert stamps == sorted(stamps)
    if c.step_ticks:
        assert all((s - c.phase_ticks) % c.step_ticks == 0 for s in stamps)


ids = st.text("abcdefgh", min_size=1, max_size=6)


@st.composite
def scenarios(draw):
    a, b = draw(st.lists(ids, min_size=2, max_size=2, unique=True))
    q = draw(st.integers(1, 4))
    rate = draw(st.sampled_from([10**9, 10**10, 4 * 10**10]))
    devices = [{"id": a, "queues": q, "line_rate_bps": rate, "clock": draw(st.sampled_from(["ideal", "82599", "X540"]))},
               {"id": b, "queues": q, "line_rate_bps": rate}]
    tasks = []
    for i in range(draw(st.integers(0, q))):
        tasks.append({"id": f"g{i}", "kind": "generator", "queue": {"device": a, "queue": i},
                      "pattern": {"type": "cbr", "rate_pps": draw(st.floats(1, 1e6))},
                      "options": {"packets": draw(st.integers(1, 1000))}})
        tasks.append({"id": f"c{i}", "kind": "counter", "queue": {"device": b, "queue": i},
                      "options": {"interval_s": draw(st.floats(1e-6, 1.0))}})
    return {"version": 1, "seed": draw(st.integers(0, 2**64 - 1)), "devices": devices,
            "links": [{"a": a, "b": b, "length_m": draw(st.floats(0, 1000))}], "tasks": tasks}


@quick
@given(scenarios())
def test_scenario_round_trip(doc):
    sc = parse(doc)
    assert loads(dumps(sc)) == sc
