"""Inter-departure patterns and the two ways of realizing them on a port.

``hw_cbr_schedule`` models a NIC's per-queue rate limiter. ``gapfill_encode``
keeps the wire fully busy and realizes every gap with invalid-FCS filler
frames, which the receiving NIC drops before they reach any queue.
"""
import csv
import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, NamedTuple, Sequence

import numpy as np

from .errors import DeltaTooSmall, Exhausted, RateAboveLineRate, ShortFrameRateExceeded
from .wireclock import (
    MAX_WIRE_LEN,
    TICKS_PER_NS,
    WIRE_OVERHEAD,
    byte_ticks,
    line_rate_pps,
    ns_to_ticks,
    serialization_ticks,
)

MIN_FILLER_WIRE = 76
ABS_MIN_WIRE = 33
# X540/82599 stop keeping up with short frames at 15.6 Mpps; 10 GbE figure, scaled with rate
SHORT_FRAME_PPS_10G = 1e10 / (8 * 80)


# -- pattern sources -------------------------------------------------------

class PatternSource:
    """Yields inter-departure times in ns."""

    def next(self, rng=None):
        raise NotImplementedError

    def draw(self, n, rng=None):
        return np.array([self.next(rng) for _ in range(n)], dtype=float)

    @property
    def mean_ns(self):
        raise NotImplementedError


@dataclass
class CBR(PatternSource):
    rate_pps: float

    def __post_init__(self):
        if self.rate_pps <= 0:
            raise ValueError("rate_pps must be positive")

    def next(self, rng=None):
        return 1e9 / self.rate_pps

    def draw(self, n, rng=None):
        return np.full(n, 1e9 / self.rate_pps)

    @property
    def mean_ns(self):
        return 1e9 / self.rate_pps


@dataclass
class Poisson(PatternSource):
    rate_pps: float

    def __post_init__(self):
        if self.rate_pps <= 0:
            raise ValueError("rate_pps must be positive")

    def next(self, rng=None):
        return float(rng.exponential(1e9 / self.rate_pps))

    def draw(self, n, rng=None):
        return rng.exponential(1e9 / self.rate_pps, size=n)

    @property
    def mean_ns(self):
        return 1e9 / self.rate_pps


@dataclass
class Bursts(PatternSource):
    burst_len: int
    intra_gap_ns: float
    inter_burst_ns: float
    _pos: int = field(default=0, repr=False, compare=False)

    def __post_init__(self):
        if self.burst_len < 1:
            raise ValueError("burst_len must be at least 1")

    def next(self, rng=None):
        self._pos += 1
        if self._pos == self.burst_len:
            self._pos = 0
            return float(self.inter_burst_ns)
        return float(self.intra_gap_ns)

    @property
    def mean_ns(self):
        return ((self.burst_len - 1) * self.intra_gap_ns + self.inter_burst_ns) / self.burst_len


@dataclass
class Custom(PatternSource):
    deltas_ns: Sequence[float]
    _pos: int = field(default=0, repr=False, compare=False)

    def next(self, rng=None):
        if self._pos >= len(self.deltas_ns):
            raise Exhausted(f"custom pattern exhausted after {self._pos} entries")
        self._pos += 1
        return float(self.deltas_ns[self._pos - 1])

    def draw(self, n, rng=None):
        if self._pos + n > len(self.deltas_ns):
            raise Exhausted(f"custom pattern has {len(self.deltas_ns) - self._pos} entries left, need {n}")
        out = np.asarray(self.deltas_ns[self._pos:self._pos + n], dtype=float)
        self._pos += n
        return out

    @property
    def mean_ns(self):
        return float(np.mean(self.deltas_ns))

    @classmethod
    def from_csv(cls, path):
        """One column of inter-departure times in ns; a non-numeric header row is skipped."""
        values = []
        with open(path, newline="") as fh:
            for i, row in enumerate(csv.reader(fh)):
                if not row or not row[0].strip():
                    continue
                try:
                    values.append(float(row[0]))
                except ValueError:
                    if i == 0:
                        continue
                    raise
        return cls(values)


def next_interdeparture(source, rng=None):
    return source.next(rng)


# -- hardware CBR ----------------------------------------------------------

@dataclass
class HwCbrModel:
    target_rate_pps: float
    oscillation_amplitude_ns: float = 256.0
    degrade_threshold_pps: float = 9e6


@dataclass
class CbrSchedule:
    departures_ticks: np.ndarray
    nonlinear: bool = False
    clamped: int = 0   # departures pushed back to avoid overlapping the previous frame

    @property
    def warnings(self):
        return ["NonLinearRegime"] if self.nonlinear else []


def hw_cbr_schedule(model, n, frame_wire_len, rate_bps, rng=None, start_ticks=0):
    """Departure instants of a rate-limited hardware queue.

    Every departure oscillates around its ideal CBR slot by a uniform offset of
    up to half the amplitude, so consecutive inter-departure times stay within
    target +- amplitude and the long-run rate has no drift.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    frame_len = frame_wire_len - WIRE_OVERHEAD
    if model.target_rate_pps > line_rate_pps(max(frame_len, 64), rate_bps) * (1 + 1e-12):
        raise RateAboveLineRate(f"{model.target_rate_pps} pps exceeds line rate for {frame_wire_len}-byte wire frames")
    period = Fraction(10**9 * TICKS_PER_NS) / Fraction(model.target_rate_pps)
    idx = np.arange(n, dtype=np.int64)
    # exact rational slot times, floored to ticks
    ideal = (idx * period.numerator) // period.denominator if period.numerator * n < 2**62 else \
        np.floor(idx * float(period)).astype(np.int64)
    half = ns_to_ticks(model.oscillation_amplitude_ns) // 2
    if half and rng is not None:
        jitter = rng.integers(-half, half + 1, size=n, dtype=np.int64)
    else:
        jitter = np.zeros(n, dtype=np.int64)
    dep = start_ticks + half + ideal + jitter
    ser = serialization_ticks(frame_wire_len, rate_bps)
    gaps = np.diff(dep)
    clamped = int(np.count_nonzero(gaps < ser))
    if clamped:
        # the queue cannot start a frame before the previous one left the wire
        dep = dep.copy()
        for i in range(1, n):
            if dep[i] < dep[i - 1] + ser:
                dep[i] = dep[i - 1] + ser
    return CbrSchedule(dep, model.target_rate_pps > model.degrade_threshold_pps, clamped)


# -- gap filling -----------------------------------------------------------

class GapClass(enum.Enum):
    BACK_TO_BACK = "BackToBack"
    APPROXIMATED = "Approximated"
    EXACT = "Exact"


@dataclass(frozen=True)
class GapParams:
    min_filler_wire: int = MIN_FILLER_WIRE
    abs_min_wire: int = ABS_MIN_WIRE
    max_filler_wire: int = MAX_WIRE_LEN

    def __post_init__(self):
        if self.abs_min_wire < ABS_MIN_WIRE:
            raise ValueError(f"NICs refuse frames shorter than {ABS_MIN_WIRE} wire bytes")
        if self.min_filler_wire < self.abs_min_wire:
            raise ValueError("min_filler_wire must not be below abs_min_wire")
        if self.max_filler_wire < 2 * self.min_filler_wire:
            raise ValueError("max_filler_wire must be at least twice min_filler_wire")


def validate_gap(gap_bytes, params=GapParams()):
    """Classify how faithfully a gap of *gap_bytes* can be realized with fillers."""
    if gap_bytes < 0:
        raise ValueError("gap must be non-negative")
    if gap_bytes == 0:
        return GapClass.BACK_TO_BACK
    if gap_bytes < params.min_filler_wire:
        return GapClass.APPROXIMATED
    return GapClass.EXACT


class Payload(NamedTuple):
    index: int


class Filler(NamedTuple):
    wire_len: int


@dataclass
class GapPlan:
    entries: List[object]
    deficit_bytes: Fraction
    params: GapParams
    payload_wire_len: int
    rate_bps: int
    requested_bytes: Fraction = Fraction(0)
    max_abs_error_bytes: Fraction = Fraction(0)

    @property
    def fillers(self):
        return [e for e in self.entries if type(e) is Filler]

    @property
    def filler_count(self):
        return sum(1 for e in self.entries if type(e) is Filler)

    @property
    def payload_count(self):
        return sum(1 for e in self.entries if type(e) is Payload)

    @property
    def emitted_bytes(self):
        return sum(self.payload_wire_len if type(e) is Payload else e.wire_len for e in self.entries)

    def departures(self, start_ticks=0):
        """Yield (start_ticks, entry) for every frame of the plan."""
        bt = byte_ticks(self.rate_bps)
        t = start_ticks
        for e in self.entries:
            yield t, e
            t += (self.payload_wire_len if type(e) is Payload else e.wire_len) * bt

    def payload_departures(self, start_ticks=0):
        bt = byte_ticks(self.rate_bps)
        out = []
        t = start_ticks
        pw = self.payload_wire_len * bt
        for e in self.entries:
            if type(e) is Payload:
                out.append(t)
                t += pw
            else:
                t += e.wire_len * bt
        return np.asarray(out, dtype=np.int64)


def _split_filler(total, params):
    """Fillers summing to *total* wire bytes, each within [min, max]."""
    mx, mn = params.max_filler_wire, params.min_filler_wire
    if total <= mx:
        return [total]
    full, rem = divmod(total, mx)
    out = [mx] * full
    if rem == 0:
        return out
    if rem >= mn:
        return out + [rem]
    # shorten the last full-size filler so the remainder becomes representable
    out[-1] = mx + rem - mn
    return out + [mn]


def gapfill_encode(deltas_ns, payload_wire_len, rate_bps, params=GapParams(), allow_short=False):
    """Encode inter-departure times as payload frames separated by filler frames.

    A signed accumulator tracks requested minus emitted wire bytes. After each
    payload the accumulated gap is emitted as filler when that brings the
    accumulator closer to zero than skipping the filler would; gaps too short
    for a filler are skipped and made up by lengthening a later one, and a
    filler forced up to the minimum length is paid back by shortening later
    ones. The schedule therefore never drifts by more than half the minimum
    filler length.

    Deltas shorter than the payload's serialization time raise DeltaTooSmall
    unless *allow_short* is set, in which case the payload is queued behind
    its predecessor and later gaps shrink until the schedule has caught up.
    """
    rate = int(rate_bps)
    bt = Fraction(8 * 10**9 * TICKS_PER_NS, rate)
    if bt.denominator != 1:
        raise ValueError(f"rate {rate_bps} has no integral byte time in 0.1 ps ticks")
    bt = bt.numerator
    mn = params.min_filler_wire
    mx = params.max_filler_wire
    payload_ticks = payload_wire_len * bt
    half_ticks = mn * bt // 2 if (mn * bt) % 2 == 0 else Fraction(mn * bt, 2)
    entries = []
    append = entries.append
    # accumulator in ticks: requested minus emitted wire time
    debt = 0
    requested = 0
    worst = 0
    for i, d in enumerate(deltas_ns):
        dt = round(float(d) * TICKS_PER_NS)
        if dt < payload_ticks and not allow_short:
            raise DeltaTooSmall(f"delta {d} ns at index {i} is shorter than the "
                                f"{payload_wire_len}-byte payload serialization time")
        requested += dt
        append(Payload(i))
        debt += dt - payload_ticks
        if debt > half_ticks:
            total = debt // bt
            if total < mn:
                total = mn
            if total <= mx:
                append(Filler(total))
            else:
                for w in _split_filler(total, params):
                    append(Filler(w))
            debt -= total * bt
        if debt > worst:
            worst = debt
        elif -debt > worst:
            worst = -debt
    plan = GapPlan(entries, Fraction(debt, bt), params, payload_wire_len, rate,
                   Fraction(requested, bt), Fraction(worst, bt))
    _check_short_frame_rate(plan)
    return plan


def _check_short_frame_rate(plan):
    n = len(plan.entries)
    if n < 2:
        return
    emitted = plan.emitted_bytes
    duration_s = emitted * 8 / plan.rate_bps
    cap = SHORT_FRAME_PPS_10G * plan.rate_bps / 1e10
    if n / duration_s > cap * (1 + 1e-9):
        raise ShortFrameRateExceeded(f"plan needs {n / duration_s / 1e6:.2f} Mpps, above the "
                                     f"{cap / 1e6:.3f} Mpps short-frame limit of the port")


def gap_bytes_for(gap_ns, rate_bps):
    """Length of a gap in wire bytes (may be fractional)."""
    return Fraction(ns_to_ticks(gap_ns), byte_ticks(rate_bps))


def describe_gap(gap_ns, rate_bps, params=GapParams()):
    gb = gap_bytes_for(gap_ns, rate_bps)
    cls = validate_gap(gb, params)
    text = f"{float(gb):g} bytes"
    if cls is GapClass.APPROXIMATED:
        text += f", below {params.min_filler_wire}-byte filler minimum"
    return cls, f"{cls.value} ({text})"
