"""Inter-arrival histograms and packet/byte rate counters."""
import io

import numpy as np

from ..errors import NoTarget
from ..wireclock import TICKS_PER_NS, ns_to_ticks, serialization_ticks, ticks_to_ns


class Histogram:
    """Distribution of time deltas, binned as [k*w, (k+1)*w).

    Raw deltas are kept (in ticks) so window fractions are exact rather than
    bin-rounded.
    """

    def __init__(self, bin_width_ns=64.0, target_ns=None):
        if bin_width_ns <= 0:
            raise ValueError("bin width must be positive")
        self.bin_width_ns = bin_width_ns
        self.target_ns = target_ns
        self._chunks = []
        self._values = None
        self.microbursts = 0

    def add_ticks(self, values):
        self._chunks.append(np.asarray(values, dtype=np.int64))
        self._values = None

    def add_ns(self, values):
        self.add_ticks(np.round(np.asarray(values, dtype=float) * TICKS_PER_NS).astype(np.int64))

    @property
    def values_ticks(self):
        if self._values is None:
            self._values = np.concatenate(self._chunks) if self._chunks else np.zeros(0, np.int64)
            self._chunks = [self._values]
        return self._values

    @property
    def total(self):
        return int(self.values_ticks.size)

    @property
    def counts(self):
        """Mapping bin start (ns) -> count, in ascending bin order."""
        w = ns_to_ticks(self.bin_width_ns)
        bins, n = np.unique(self.values_ticks // w, return_counts=True)
        return {float(b) * self.bin_width_ns: int(c) for b, c in zip(bins, n)}

    @property
    def microburst_fraction(self):
        return self.microbursts / self.total if self.total else 0.0

    def percentile(self, q):
        return ticks_to_ns(float(np.percentile(self.values_ticks, q)))

    def to_csv(self):
        out = io.StringIO()
        out.write("bin_start_ns,count\n")
        for start, c in self.counts.items():
            out.write(f"{start:g},{c}\n")
        return out.getvalue()


def record_interarrival(events, hist, frame_wire_len, rate_bps):
    """Bin the gaps between consecutive delivered events of *events*.

    Gaps equal to one frame's serialization time are back-to-back arrivals
    and are counted as micro-bursts.
    """
    times = np.fromiter((e.true_time_ticks for e in events if e.delivered), dtype=np.int64)
    deltas = np.diff(times)
    if deltas.size and np.any(deltas < 0):
        raise ValueError("events must be ordered by arrival time")
    hist.add_ticks(deltas)
    hist.microbursts += int(np.count_nonzero(deltas == serialization_ticks(frame_wire_len, rate_bps)))
    return hist


def record_interarrival_ticks(times_ticks, hist, frame_wire_len, rate_bps):
    deltas = np.diff(np.asarray(times_ticks, dtype=np.int64))
    hist.add_ticks(deltas)
    hist.microbursts += int(np.count_nonzero(deltas == serialization_ticks(frame_wire_len, rate_bps)))
    return hist


def percent_within(hist, window_ns):
    """Fraction of deltas within +-*window_ns* of the histogram's target."""
    if hist.target_ns is None:
        raise NoTarget("histogram has no target inter-arrival time")
    if not hist.total:
        return 0.0
    dev = np.abs(hist.values_ticks - ns_to_ticks(hist.target_ns))
    return float(np.count_nonzero(dev <= ns_to_ticks(window_ns))) / hist.total


COUNTER_CSV_HEADER = "interval_end_s,packets,bytes,mpps,mbit"


class StatsCounter:
    """Packet and byte totals with per-interval rates.

    ``ManualTx`` counters are fed by the sender through :meth:`update`,
    ``PktRx`` counters by :meth:`count_packet` for each received frame.
    """

    MANUAL_TX = "ManualTx"
    PKT_RX = "PktRx"

    def __init__(self, name, kind=PKT_RX, fmt="csv", interval_s=1.0):
        if kind not in (self.MANUAL_TX, self.PKT_RX):
            raise ValueError(f"unknown counter kind {kind!r}")
        if fmt not in ("csv", "plain"):
            raise ValueError(f"unknown format {fmt!r}")
        self.name = str(name)
        self.kind = kind
        self.fmt = fmt
        self.interval_ticks = round(interval_s * 1e9 * TICKS_PER_NS)
        self.packets = 0
        self.bytes = 0
        self._per_interval = {}   # interval index -> [packets, bytes]
        self.snapshots = []
        self.summary = None

    def update(self, packets, nbytes, at_ticks):
        slot = self._per_interval.setdefault(at_ticks // self.interval_ticks, [0, 0])
        slot[0] += packets
        slot[1] += nbytes
        self.packets += packets
        self.bytes += nbytes

    def update_with_size(self, packets, size, at_ticks):
        self.update(packets, packets * size, at_ticks)

    def count_packet(self, frame_len, at_ticks):
        self.update(1, frame_len, at_ticks)

    def count_many(self, times_ticks, sizes):
        times = np.asarray(times_ticks, dtype=np.int64)
        if not times.size:
            return
        sizes = np.broadcast_to(np.asarray(sizes, dtype=np.int64), times.shape)
        idx = times // self.interval_ticks
        for k in np.unique(idx):
            m = idx == k
            self.update(int(np.count_nonzero(m)), int(sizes[m].sum()), int(k) * self.interval_ticks)

    def finalize(self, end_ticks=None):
        """Close the last interval and compute mean/stddev of the interval rates.

        A final partial interval shorter than half the interval length is
        listed in the snapshots but left out of the mean and stddev.
        """
        if self._per_interval:
            last = max(self._per_interval)
            if end_ticks is None:
                end_ticks = (last + 1) * self.interval_ticks
            last = max(last, (end_ticks - 1) // self.interval_ticks)
        else:
            last = -1 if end_ticks is None else (end_ticks - 1) // self.interval_ticks
        self.snapshots = []
        for k in range(last + 1):
            start = k * self.interval_ticks
            stop = min((k + 1) * self.interval_ticks, end_ticks) if end_ticks else (k + 1) * self.interval_ticks
            dur_s = (stop - start) / (1e9 * TICKS_PER_NS)
            if dur_s <= 0:
                continue
            p, b = self._per_interval.get(k, (0, 0))
            self.snapshots.append((stop / (1e9 * TICKS_PER_NS), p, b, p / dur_s / 1e6, b * 8 / dur_s / 1e6))
        # a trailing stub shorter than half an interval says little about the rate
        rated = self.snapshots
        if len(rated) > 1:
            prev_end = rated[-2][0]
            if (rated[-1][0] - prev_end) * 1e9 * TICKS_PER_NS < self.interval_ticks / 2:
                rated = rated[:-1]
        mpps = np.array([s[3] for s in rated])
        mbit = np.array([s[4] for s in rated])
        ddof = 1 if mpps.size > 1 else 0
        self.summary = {
            "name": self.name,
            "kind": self.kind,
            "packets": self.packets,
            "bytes": self.bytes,
            "mpps_mean": float(mpps.mean()) if mpps.size else 0.0,
            "mpps_std": float(mpps.std(ddof=ddof)) if mpps.size else 0.0,
            "mbit_mean": float(mbit.mean()) if mbit.size else 0.0,
            "mbit_std": float(mbit.std(ddof=ddof)) if mbit.size else 0.0,
        }
        return self.summary

    def to_csv(self):
        lines = [COUNTER_CSV_HEADER]
        for end_s, p, b, mpps, mbit in self.snapshots:
            lines.append(f"{end_s:.9g},{p},{b},{mpps:.6f},{mbit:.6f}")
        return "\n".join(lines) + "\n"

    def format_plain(self):
        direction = "TX" if self.kind == self.MANUAL_TX else "RX"
        lines = [f"[{self.name}] {direction}: {mpps:.2f} Mpps, {mbit:.0f} MBit/s ({p} packets at {end_s:g} s)"
                 for end_s, p, b, mpps, mbit in self.snapshots]
        s = self.summary or self.finalize()
        lines.append(f"[{self.name}] {direction}: {s['mpps_mean']:.2f} (StdDev {s['mpps_std']:.2f}) Mpps, "
                     f"{s['mbit_mean']:.0f} (StdDev {s['mbit_std']:.0f}) MBit/s, total {s['packets']} packets "
                     f"with {s['bytes']} bytes")
        return "\n".join(lines) + "\n"

    def format(self):
        return self.to_csv() if self.fmt == "csv" else self.format_plain()
