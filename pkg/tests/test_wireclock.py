import numpy as np
import pytest

from mgsim import packet as pk
from mgsim.errors import WireOverlap
from mgsim.wireclock import (
    LinkModel,
    Port,
    PortClock,
    WireEventKind,
    line_rate_pps,
    ns_to_ticks,
    propagation_delay,
    read_clock,
    serialization_time,
    sync_clocks,
    transmit_frames,
    wire_length,
)


def frame(n=60, valid=True):
    buf = pk.make_template(pk.PacketTemplate(["eth", "ip4", "udp"], {}, n))
    buf.crc_valid = valid
    return pk.materialize(buf)


@pytest.mark.parametrize("n,expected", [(64, 84), (56, 76), (13, 33)])
def test_wire_length(n, expected):
    assert wire_length(n) == expected


def test_wire_length_affine():
    assert wire_length(1000) - wire_length(64) == 936


@pytest.mark.parametrize("wire,rate,ns", [(84, 10**10, 67.2), (1, 10**10, 0.8), (84, 10**9, 672.0),
                                          (84, 4 * 10**10, 16.8)])
def test_serialization_time(wire, rate, ns):
    assert serialization_time(wire, rate) == ns


@pytest.mark.parametrize("n,rate,pps", [(64, 10**10, 14_880_952.38), (64, 10**9, 1_488_095.24),
                                        (1518, 10**10, 812_743.82)])
def test_line_rate(n, rate, pps):
    assert line_rate_pps(n, rate) == pytest.approx(pps, abs=0.01)


def test_line_rate_rejects_runts():
    with pytest.raises(ValueError):
        line_rate_pps(63, 10**10)


def test_propagation_fiber_and_copper():
    assert propagation_delay(LinkModel.fiber(2)) == pytest.approx(319.97, abs=0.01)
    assert propagation_delay(LinkModel.copper(50)) == pytest.approx(2388.9, abs=0.05)
    assert propagation_delay(LinkModel(0, 0.5, 123.4)) == 123.4


def test_link_validation():
    with pytest.raises(ValueError):
        LinkModel(1, 0, 10)
    with pytest.raises(ValueError):
        LinkModel(1, 1.2, 10)
    with pytest.raises(ValueError):
        LinkModel(1, 0.7, 10, line_rate_bps=2.5e9)


# -- clocks ----------------------------------------------------------------------------

def test_read_clock_exact_multiple():
    assert read_clock(PortClock(6.4, 6.4), 12.8) == 12.8


def test_read_clock_82580_phase():
    c = PortClock(granularity_ns=64, timer_step_ns=64, phase_k_ns=24)
    assert read_clock(c, 130) == 152


def test_82580_preset_reads_on_8ns_lattice():
    rng = np.random.default_rng(5)
    for _ in range(20):
        c = PortClock.preset("82580", rng)
        for t in rng.uniform(0, 1e6, 50):
            v = ns_to_ticks(read_clock(c, t))
            assert v % ns_to_ticks(8) == 0
            assert (v - c.phase_ticks) % ns_to_ticks(64) == 0


def test_read_clock_drift():
    c = PortClock(granularity_ns=0, timer_step_ns=0, drift=35e-6)
    assert read_clock(c, 1e9) == 1e9 + 35_000


def test_read_clock_monotone():
    c = PortClock(6.4, 12.8, drift=-2e-5, offset_ns=3.3)
    ts = np.sort(np.random.default_rng(1).uniform(0, 1e7, 2000))
    vals = [c.read_ticks(ns_to_ticks(t)) for t in ts]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_sync_removes_offset():
    a, b = PortClock(6.4, 6.4), PortClock(6.4, 6.4, offset_ns=1000)
    res = sync_clocks(a, b, outlier_rate=0.0)
    assert abs(res.adjustment_ns + 1000) <= 6.4
    t = res.finished_ticks + 12345
    assert abs(b.read_ticks(t) - a.read_ticks(t)) <= b.step_ticks


def test_sync_idempotent_on_synchronous_clocks():
    a, b = PortClock(6.4, 12.8), PortClock(6.4, 12.8)
    res = sync_clocks(a, b, outlier_rate=0.0)
    assert abs(res.adjustment_ticks) <= a.step_ticks


def test_sync_absorbs_outliers():
    # the median of seven rounds only fails when four or more rounds are outliers
    rng = np.random.default_rng(3)
    bad = 0
    for i in range(2000):
        a = PortClock(6.4, 6.4)
        b = PortClock(6.4, 6.4, offset_ns=float(rng.uniform(-5000, 5000)))
        res = sync_clocks(a, b, 0.05, rng, at_ticks=i * 10**7)
        t = res.finished_ticks + 777
        if abs(b.read_ticks(t) - a.read_ticks(t)) > b.step_ticks:
            assert res.outliers >= 4
            bad += 1
    assert bad <= 2


# -- wire --------------------------------------------------------------------------------

def test_back_to_back_arrival_spacing():
    link = LinkModel.fiber(2)
    f = frame(60)
    ev = transmit_frames(Port("a"), [(0, f), (ns_to_ticks(67.2), f)], link, Port("b"))
    assert ev[1].true_time_ticks - ev[0].true_time_ticks == ns_to_ticks(67.2)
    assert ev[0].true_time_ticks == ns_to_ticks(67.2) + ns_to_ticks(propagation_delay(link))


def test_bad_fcs_counts_error():
    peer = Port("b")
    ev = transmit_frames(Port("a"), [(0, frame(60, valid=False))], LinkModel.fiber(2), peer)
    assert [e.kind for e in ev] == [WireEventKind.DROPPED_BAD_CRC]
    assert not any(e.delivered for e in ev)
    assert peer.rx_errors == 1 and peer.rx_packets == 0


def test_overlap_rejected():
    f = frame(60)
    with pytest.raises(WireOverlap):
        transmit_frames(Port("a"), [(0, f), (ns_to_ticks(67.1), f)], LinkModel.fiber(2))


def test_fifo_and_conservation():
    rng = np.random.default_rng(9)
    good, bad = frame(60), frame(100, valid=False)
    t, items = 0, []
    for _ in range(500):
        f = good if rng.random() < 0.6 else bad
        items.append((t, f))
        t += ns_to_ticks(0.8) * (len(f) + 20) + ns_to_ticks(0.8) * int(rng.integers(0, 50))
    a, b = Port("a"), Port("b")
    ev = transmit_frames(a, items, LinkModel.fiber(1), b)
    times = [e.true_time_ticks for e in ev]
    assert times == sorted(times)
    assert b.rx_packets + b.rx_errors == a.tx_frames == 500


def test_aggregate_cap_throttles():
    link = LinkModel.fiber(1, line_rate_bps=4 * 10**10, aggregate_cap_bps=2 * 10**10)
    f = frame(60)
    ser = ns_to_ticks(16.8)
    ev = transmit_frames(Port("a"), [(i * ser, f) for i in range(100)], link)
    gaps = np.diff([e.true_time_ticks for e in ev])
    assert np.all(gaps == 2 * ser)
