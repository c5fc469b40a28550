"""Simulated physical layer: serialization, cables, quantized drifting port clocks.

All simulation time is kept as integer ticks of 0.1 ps, so the quantities that
matter on 1/10/40 GbE links (0.8 ns per byte, 6.4 ns timer steps, 67.2 ns per
minimum frame) are exact. Nanosecond floats appear only at API boundaries.
"""
import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Optional

from .errors import WireOverlap
from .packet.checksum import fcs_valid

TICKS_PER_NS = 10_000
SPEED_OF_LIGHT_M_PER_NS = 0.299792458

PREAMBLE = 7
SFD = 1
IFG = 12
WIRE_OVERHEAD = PREAMBLE + SFD + IFG
MAX_WIRE_LEN = 1518 + WIRE_OVERHEAD

LINE_RATES = (10**9, 10**10, 4 * 10**10)


def ns_to_ticks(ns):
    return round(ns * TICKS_PER_NS)


def ticks_to_ns(ticks):
    return ticks / TICKS_PER_NS


def _rate(rate_bps):
    r = Fraction(rate_bps) if not isinstance(rate_bps, float) else Fraction(str(rate_bps))
    if r <= 0:
        raise ValueError(f"rate must be positive, got {rate_bps}")
    return r


def wire_length(frame_len):
    """Bytes a frame occupies on the wire: frame (incl. FCS) + preamble + SFD + IFG."""
    if frame_len < 0:
        raise ValueError("frame length must be non-negative")
    return frame_len + WIRE_OVERHEAD


def byte_ticks(rate_bps):
    """Ticks needed to serialize one byte at *rate_bps* (8000 at 10 GbE)."""
    return serialization_ticks(1, rate_bps)


def serialization_ticks(wire_bytes, rate_bps):
    exact = Fraction(wire_bytes * 8 * TICKS_PER_NS * 10**9) / _rate(rate_bps)
    return round(exact)


def serialization_time(wire_bytes, rate_bps):
    """Time in ns to put *wire_bytes* on a link of *rate_bps*."""
    return ticks_to_ns(serialization_ticks(wire_bytes, rate_bps))


def line_rate_pps(frame_len, rate_bps):
    """Maximum packet rate for frames of *frame_len* bytes (incl. FCS)."""
    if frame_len < 64:
        raise ValueError(f"frame length {frame_len} below Ethernet minimum of 64")
    return float(rate_bps) / (8 * wire_length(frame_len))


@dataclass
class LinkModel:
    """Cable between two ports; latency follows t = k + l / v_p."""

    length_m: float
    vp_fraction: float
    k_ns: float
    line_rate_bps: int = 10**10
    aggregate_cap_bps: Optional[float] = None
    block_code_jitter: bool = False

    def __post_init__(self):
        if not 0 < self.vp_fraction <= 1:
            raise ValueError(f"vp_fraction must be in (0, 1], got {self.vp_fraction}")
        if self.k_ns < 0:
            raise ValueError("k_ns must be non-negative")
        if self.length_m < 0:
            raise ValueError("length_m must be non-negative")
        if int(self.line_rate_bps) not in LINE_RATES or self.line_rate_bps != int(self.line_rate_bps):
            raise ValueError(f"unsupported line rate {self.line_rate_bps}; use one of {LINE_RATES}")
        self.line_rate_bps = int(self.line_rate_bps)

    @classmethod
    def fiber(cls, length_m, **kw):
        """10GBASE-SR multimode fiber on the 82599 model."""
        return cls(length_m, 0.72, 310.7, **kw)

    @classmethod
    def copper(cls, length_m, **kw):
        """10GBASE-T copper on the X540 model, with block-code jitter."""
        kw.setdefault("block_code_jitter", True)
        return cls(length_m, 0.69, 2147.2, **kw)


def propagation_delay(link):
    """(De)modulation time plus signal travel time over the cable, in ns."""
    return link.k_ns + link.length_m / (link.vp_fraction * SPEED_OF_LIGHT_M_PER_NS)


def propagation_ticks(link):
    return ns_to_ticks(propagation_delay(link))


class PortClock:
    """Quantized, drifting time source of one port.

    ``granularity_ns`` is the resolution at which packet events are captured,
    ``timer_step_ns`` the increment of the timer register that is latched.
    """

    def __init__(self, granularity_ns=6.4, timer_step_ns=6.4, phase_k_ns=0.0,
                 offset_ns=0.0, drift=0.0, epoch_ns=0.0, name="ideal"):
        if granularity_ns < 0 or timer_step_ns < 0:
            raise ValueError("granularity and timer step must be non-negative")
        if abs(drift) >= 1e-3:
            raise ValueError(f"|drift| must be below 1e-3, got {drift}")
        self.name = name
        self.granularity_ticks = ns_to_ticks(granularity_ns)
        self.step_ticks = ns_to_ticks(timer_step_ns)
        self.phase_ticks = ns_to_ticks(phase_k_ns)
        self.offset_ticks = ns_to_ticks(offset_ns)
        self.epoch_ticks = ns_to_ticks(epoch_ns)
        self.drift = drift
        d = Fraction(drift).limit_denominator(10**12)
        self._dnum, self._dden = d.numerator, d.denominator

    granularity_ns = property(lambda self: ticks_to_ns(self.granularity_ticks))
    timer_step_ns = property(lambda self: ticks_to_ns(self.step_ticks))
    phase_k_ns = property(lambda self: ticks_to_ns(self.phase_ticks))
    offset_ns = property(lambda self: ticks_to_ns(self.offset_ticks))
    epoch_ns = property(lambda self: ticks_to_ns(self.epoch_ticks))

    def __repr__(self):
        return (f"PortClock({self.name}, step={self.timer_step_ns}ns, offset={self.offset_ns}ns, "
                f"drift={self.drift})")

    @classmethod
    def preset(cls, name, rng=None, **kw):
        """Clock models: ``ideal``, ``82599``, ``X540``, ``82580`` (1 GbE).

        The 82580 phase is a random multiple of 8 ns drawn from *rng* unless
        given explicitly.
        """
        key = str(name).lower()
        if key == "ideal":
            base = dict(granularity_ns=0.0, timer_step_ns=0.0)
        elif key == "82599":
            base = dict(granularity_ns=6.4, timer_step_ns=12.8)
        elif key == "x540":
            base = dict(granularity_ns=6.4, timer_step_ns=6.4)
        elif key == "82580":
            k = 0 if rng is None else int(rng.integers(0, 8))
            base = dict(granularity_ns=64.0, timer_step_ns=64.0, phase_k_ns=8.0 * k)
        else:
            raise ValueError(f"unknown clock preset {name!r}")
        base.update(kw)
        return cls(name=key, **base)

    def local_ticks(self, true_ticks):
        """Unquantized local time at a true instant."""
        return (true_ticks + self.offset_ticks
                + (self._dnum * (true_ticks - self.epoch_ticks)) // self._dden)

    def effective_offset_ticks(self, true_ticks):
        return self.local_ticks(true_ticks) + self.phase_ticks - true_ticks

    def read_ticks(self, true_ticks):
        local = self.local_ticks(true_ticks)
        if self.step_ticks:
            local -= local % self.step_ticks
        return local + self.phase_ticks

    def event_ticks(self, true_ticks):
        """Timestamp latched for a packet event: snapped to the nearest
        capture edge, then truncated to the timer step."""
        local = self.local_ticks(true_ticks)
        g = self.granularity_ticks
        if g:
            local = (local + g // 2) // g * g
        if self.step_ticks:
            local -= local % self.step_ticks
        return local + self.phase_ticks

    def adjust(self, delta_ticks, at_ticks):
        """Atomic read-modify-write of the clock: shift local time by *delta_ticks*."""
        self.offset_ticks = self.local_ticks(at_ticks) - at_ticks + delta_ticks
        self.epoch_ticks = at_ticks


def read_clock(clock, true_time_ns):
    """Register read of *clock* at a true instant, in ns."""
    return ticks_to_ns(clock.read_ticks(ns_to_ticks(true_time_ns)))


SYNC_ROUNDS = 7
PCIE_READ_NS = 640.0
OUTLIER_BOUND_NS = 10_000.0


@dataclass
class SyncResult:
    adjustment_ticks: int
    estimates_ticks: list
    outliers: int
    finished_ticks: int

    @property
    def adjustment_ns(self):
        return ticks_to_ns(self.adjustment_ticks)


def sync_clocks(a, b, outlier_rate=0.05, rng=None, at_ticks=0,
                read_latency_ns=PCIE_READ_NS, outlier_bound_ns=OUTLIER_BOUND_NS):
    """Align clock *b* to clock *a* and return the applied adjustment.

    Each of the seven rounds reads A then B, then B then A, one PCIe access
    apart; averaging the two differences cancels the access latency. With
    probability *outlier_rate* a round's estimate is disturbed by a uniform
    error of up to *outlier_bound_ns*. The median estimate is subtracted from
    *b* in a single adjustment.
    """
    d = ns_to_ticks(read_latency_ns)
    bound = ns_to_ticks(outlier_bound_ns)
    twice = []
    outliers = 0
    t = at_ticks
    for _ in range(SYNC_ROUNDS):
        a1 = a.read_ticks(t)
        b1 = b.read_ticks(t + d)
        b2 = b.read_ticks(t + 2 * d)
        a2 = a.read_ticks(t + 3 * d)
        est2 = (b1 - a1) + (b2 - a2)
        if outlier_rate and rng is not None and rng.random() < outlier_rate:
            est2 += 2 * int(rng.integers(-bound, bound + 1))
            outliers += 1
        twice.append(est2)
        t += 4 * d
    median2 = sorted(twice)[len(twice) // 2]
    adjustment = -(median2 // 2)
    b.adjust(adjustment, t)
    return SyncResult(adjustment, [e / 2 for e in twice], outliers, t)


class WireEventKind(enum.Enum):
    DELIVERED = "Delivered"
    DROPPED_BAD_CRC = "DroppedBadCrc"


class WireEvent(NamedTuple):
    kind: WireEventKind
    port: str
    true_time_ticks: int
    frame: bytes
    tag: object = None

    @property
    def true_time_ns(self):
        return ticks_to_ns(self.true_time_ticks)

    @property
    def delivered(self):
        return self.kind is WireEventKind.DELIVERED


class Port:
    """One NIC port: its clock plus hardware counters."""

    def __init__(self, name, clock=None, line_rate_bps=10**10):
        self.name = name
        self.clock = clock or PortClock.preset("ideal")
        self.line_rate_bps = line_rate_bps
        self.tx_frames = 0
        self.tx_bytes = 0
        self.rx_packets = 0
        self.rx_bytes = 0
        self.rx_errors = 0

    def __repr__(self):
        return f"Port({self.name!r})"


def transmit_frames(port, frames, link, peer=None):
    """Put (departure_ticks, frame[, tag]) tuples on *link* and deliver them to *peer*.

    Departures are start-of-frame instants; each event is stamped with the
    arrival of the frame's last bit. Frames failing the FCS check are dropped
    by the receiving MAC and only bump its error counter.
    """
    rate = link.line_rate_bps
    prop = propagation_ticks(link)
    bt = byte_ticks(rate)
    cap_bt = byte_ticks(link.aggregate_cap_bps) if link.aggregate_cap_bps and link.aggregate_cap_bps < rate else 0
    peer_name = peer.name if peer is not None else "peer"
    events = []
    busy_until = None
    first = None
    sent_bytes = 0
    for item in frames:
        dep, frame = item[0], item[1]
        tag = item[2] if len(item) > 2 else None
        wl = len(frame) + WIRE_OVERHEAD
        if cap_bt:
            if first is None:
                first = dep
            dep = max(dep, first + sent_bytes * cap_bt)
            sent_bytes += wl
        if busy_until is not None and dep < busy_until:
            raise WireOverlap(f"frame departing at {ticks_to_ns(dep)} ns overlaps previous frame "
                              f"on {port.name} (wire busy until {ticks_to_ns(busy_until)} ns)")
        end = dep + wl * bt
        busy_until = end
        port.tx_frames += 1
        port.tx_bytes += len(frame)
        if fcs_valid(frame):
            events.append(WireEvent(WireEventKind.DELIVERED, peer_name, end + prop, frame, tag))
            if peer is not None:
                peer.rx_packets += 1
                peer.rx_bytes += len(frame)
        else:
            events.append(WireEvent(WireEventKind.DROPPED_BAD_CRC, peer_name, end + prop, frame, tag))
            if peer is not None:
                peer.rx_errors += 1
    return events
