"""Hardware timestamping: PTP trigger rules, single-slot registers, latency sampling."""
from dataclasses import dataclass, field
from typing import List

import numpy as np

from ..errors import MeasurementTimeout
from ..packet import headers as hdr
from ..wireclock import (
    WIRE_OVERHEAD,
    propagation_ticks,
    serialization_ticks,
    sync_clocks,
    ticks_to_ns,
)

UDP_PTP_MIN_FRAME = 80


def should_timestamp(frame, udp_ptp_port=hdr.PTP_UDP_EVENT_PORT, ptp_version=hdr.PTP_VERSION,
                     message_types=None, frame_len=None):
    """Would the NIC latch a timestamp for *frame*?

    *frame* is the frame as seen on the wire including FCS; *frame_len*
    overrides its length when only headers are passed. PTP over UDP is only
    recognized in frames of at least 80 bytes.
    """
    n = len(frame) if frame_len is None else frame_len
    if len(frame) < hdr.ETH_HLEN + 2:
        return False
    etype = int.from_bytes(frame[12:14], "big")
    if etype == hdr.ETHERTYPE_PTP:
        payload = hdr.ETH_HLEN
    elif etype in (hdr.ETHERTYPE_IP4, hdr.ETHERTYPE_IP6):
        if n < UDP_PTP_MIN_FRAME:
            return False
        if etype == hdr.ETHERTYPE_IP4:
            ihl = (frame[14] & 0x0F) * 4
            if frame[14 + 9] != hdr.IPPROTO_UDP:
                return False
            udp = 14 + ihl
        else:
            if frame[14 + 6] != hdr.IPPROTO_UDP:
                return False
            udp = 14 + 40
        if len(frame) < udp + 8 or int.from_bytes(frame[udp + 2:udp + 4], "big") != udp_ptp_port:
            return False
        payload = udp + 8
    else:
        return False
    if len(frame) < payload + 2 or frame[payload + 1] != ptp_version:
        return False
    if message_types is not None and (frame[payload] & 0x0F) not in message_types:
        return False
    return True


@dataclass
class TimestampRegister:
    """Single-slot latch; a new timestamp needs the previous one read back."""

    occupied: bool = False
    value_ticks: int = 0
    owner_seq: int = -1
    lost: int = 0

    @property
    def value_ns(self):
        return ticks_to_ns(self.value_ticks)

    def read_back(self):
        """Return (value_ticks, owner_seq) and free the register, or None if empty."""
        if not self.occupied:
            return None
        self.occupied = False
        return self.value_ticks, self.owner_seq


def latch_timestamp(reg, clock_read_ticks, seq):
    """Store a timestamp if the register is free; otherwise count a lost sample."""
    if reg.occupied:
        reg.lost += 1
        return False
    reg.occupied = True
    reg.value_ticks = clock_read_ticks
    reg.owner_seq = seq
    return True


@dataclass
class LatencySample:
    seq_id: int
    tx_ts_ticks: int
    rx_ts_ticks: int
    true_ticks: int = 0

    @property
    def latency_ticks(self):
        return self.rx_ts_ticks - self.tx_ts_ticks

    @property
    def latency_ns(self):
        return ticks_to_ns(self.latency_ticks)


@dataclass
class LatencyRun:
    samples: List[LatencySample] = field(default_factory=list)
    lost: int = 0
    timeouts: int = 0
    sync_outliers: int = 0

    def latencies_ns(self):
        return np.array([s.latency_ticks for s in self.samples], dtype=np.int64) / 1e4

    def true_latencies_ns(self):
        return np.array([s.true_ticks for s in self.samples], dtype=np.int64) / 1e4


# 10GBASE-T block code: discrete jitter in 6.4 ns steps, max-min = 64 ns
_BLOCK_JITTER_STEPS = np.arange(-5, 6)
_BLOCK_JITTER_P = np.array([0.0009, 0.0002, 0.0002, 0.0002, 0.0485, 0.90,
                            0.0485, 0.0002, 0.0002, 0.0002, 0.0009])
BLOCK_JITTER_STEP_TICKS = 64_000


def block_code_jitter(rng, size=None):
    """Extra arrival delay in ticks caused by the copper PHY's block code."""
    return rng.choice(_BLOCK_JITTER_STEPS, size=size, p=_BLOCK_JITTER_P) * BLOCK_JITTER_STEP_TICKS


def link_path(link, rng=None):
    """Arrival time of a frame that crosses *link* directly (loopback cable)."""
    prop = propagation_ticks(link)
    rate = link.line_rate_bps

    def path(dep_ticks, wire_len):
        arrival = dep_ticks + serialization_ticks(wire_len, rate) + prop
        if link.block_code_jitter and rng is not None:
            arrival += int(block_code_jitter(rng))
        return arrival
    return path


def measure_latency(tx, rx, n_samples, link=None, rng=None, *, path=None, frame_len=84,
                    resync=True, outlier_rate=0.0, start_ticks=0, readback_ns=1000.0,
                    background=(), on_timeout="raise", seq_start=0, rate_bps=None,
                    tx_reg=None, rx_reg=None, udp_ptp_port=hdr.PTP_UDP_EVENT_PORT, tx_slot=None):
    """Take *n_samples* hardware-timestamped latency samples from port *tx* to *rx*.

    Only one timestamped packet is in flight at a time: before each sample the
    clocks are resynchronized, the packet is sent, and both registers are read
    back once it has arrived. *path* maps (departure_ticks, wire_len) to the
    arrival of the last bit at *rx* (None when the packet is lost); by default
    it is the direct cable *link*.

    *background* is a time-ordered sequence of (arrival_ticks, frame) seen by
    the receive port; frames the NIC would timestamp occupy the receive
    register and make a colliding sample count as lost.

    *tx_slot* maps a desired departure to the earliest one at which the wire
    is free, for ports that also carry other traffic.
    """
    if path is None:
        path = link_path(link, rng)
    rate = rate_bps or (link.line_rate_bps if link is not None else tx.line_rate_bps)
    wire_len = frame_len + WIRE_OVERHEAD
    ser = serialization_ticks(wire_len, rate)
    readback = round(readback_ns * 1e4)
    tx_reg = tx_reg or TimestampRegister()
    rx_reg = rx_reg or TimestampRegister()
    g = tx.clock.granularity_ticks
    phases = max(1, tx.clock.step_ticks // g) if g else 1
    bg = iter(background)
    pending = next(bg, None)
    run = LatencyRun()
    now = start_ticks
    for i in range(n_samples):
        seq = seq_start + i
        if resync:
            res = sync_clocks(tx.clock, rx.clock, outlier_rate, rng, at_ticks=now)
            run.sync_outliers += res.outliers
            now = res.finished_ticks
        # the frame leaves on a PHY clock edge; which timer half-period it hits is random
        extra = int(rng.integers(0, phases)) * g if g and phases > 1 and rng is not None else 0
        dep = now
        while True:
            if tx_slot is not None:
                dep = tx_slot(dep, wire_len)
            t_event = dep + ser
            if g:
                t_event += (-tx.clock.local_ticks(t_event)) % g + extra
            if tx_slot is None or tx_slot(t_event - ser, wire_len) == t_event - ser:
                break
            dep = t_event - ser
        dep = t_event - ser
        latch_timestamp(tx_reg, tx.clock.event_ticks(t_event), seq)
        arrival = path(dep, wire_len)
        if arrival is None:
            tx_reg.read_back()
            run.timeouts += 1
            if on_timeout == "raise":
                raise MeasurementTimeout(f"timestamped packet {seq} never arrived")
            now = dep + ser + readback
            continue
        while pending is not None and pending[0] <= arrival:
            if should_timestamp(pending[1], udp_ptp_port):
                latch_timestamp(rx_reg, rx.clock.event_ticks(pending[0]), -1)
            pending = next(bg, None)
        latch_timestamp(rx_reg, rx.clock.event_ticks(arrival), seq)
        txv = tx_reg.read_back()
        rxv = rx_reg.read_back()
        if txv is None or rxv is None or rxv[1] != seq or txv[1] != seq:
            run.lost += 1
        else:
            run.samples.append(LatencySample(seq, txv[0], rxv[0], arrival - t_event))
        now = arrival + readback
    return run
