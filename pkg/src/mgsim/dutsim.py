"""Parametric device under test: one FIFO forwarding queue with interrupt moderation."""
from dataclasses import dataclass

import numpy as np

from .errors import EmptySample
from .wireclock import TICKS_PER_NS, ns_to_ticks


@dataclass
class DutModel:
    service_rate_pps: float = 1.9e6
    buffer_pkts: int = 4096
    interrupt_throttle_ns: float = 0.0
    batch_per_interrupt: int = 64

    def __post_init__(self):
        if self.service_rate_pps <= 0:
            raise ValueError("service_rate_pps must be positive")
        if self.buffer_pkts < 1:
            raise ValueError("buffer_pkts must be at least 1")

        if self.batch_per_interrupt < 1:
            raise ValueError("batch_per_interrupt must be at least 1")

    @property
    def service_ticks(self):
        return round(1e9 * TICKS_PER_NS / self.service_rate_pps)

    @property
    def overload_latency_ns(self):
        """Residence time of a packet entering a full buffer."""
        return self.buffer_pkts / self.service_rate_pps * 1e9


class DutQueue:
    """Incremental forwarding engine; arrivals must be offered in time order.

    A packet arriving at an idle system raises an interrupt unless one was
    raised less than ``interrupt_throttle_ns`` ago; in that case the interrupt,
    and with it the start of service, is held off until the throttle expires.
    Arrivals while the system is busy or an interrupt is pending coalesce.
    The driver handles at most ``batch_per_interrupt`` packets per poll and
    keeps polling without further interrupts while a backlog remains.
    """

    def __init__(self, model):
        self.model = model
        self.service = model.service_ticks
        self.throttle = ns_to_ticks(model.interrupt_throttle_ns)
        self.capacity = model.buffer_pkts
        self._departures = []      # departure times of packets still in the system (FIFO)
        self._head = 0
        self.last_irq = None
        self.free_at = None         # when the server finishes its current backlog
        self.interrupts = 0
        self.polls = 0
        self.drops = 0
        self.forwarded = 0
        self.last_arrival = None
        self._poll_count = 0

    def _in_system(self, t):
        deps = self._departures
        while self._head < len(deps) and deps[self._head] <= t:
            self._head += 1
        if self._head > 4096:
            del deps[:self._head]
            self._head = 0
        return len(deps) - self._head

    def offer(self, t):
        """Admit a packet arriving at tick *t*; return its departure tick or None if dropped."""
        if self.last_arrival is not None and t < self.last_arrival:
            raise ValueError("arrivals must be offered in time order")
        self.last_arrival = t
        n = self._in_system(t)
        if n >= self.capacity:
            self.drops += 1
            return None
        if n == 0 and (self.free_at is None or self.free_at <= t):
            # idle: the packet needs an interrupt before it is processed
            if self.last_irq is None or t - self.last_irq >= self.throttle:
                irq = t
            else:
                irq = self.last_irq + self.throttle
            self.last_irq = irq
            self.interrupts += 1
            self.polls += 1
            self._poll_count = 1
            start = irq
        else:
            start = max(t, self.free_at)
            self._poll_count += 1
            if self._poll_count > self.model.batch_per_interrupt:
                # poll budget used up: the driver reschedules its poll without a new interrupt
                self.polls += 1
                self._poll_count = 1
        dep = start + self.service
        self.free_at = dep
        self._departures.append(dep)
        self.forwarded += 1
        return dep


@dataclass
class ForwardResult:
    departures_ticks: np.ndarray    # -1 where the packet was dropped
    drops: int
    interrupts: int

    @property
    def delivered_mask(self):
        return self.departures_ticks >= 0


def forward(arrivals_ticks, model):
    """Push time-ordered arrival instants through a DuT described by *model*."""
    q = DutQueue(model)
    arr = np.asarray(arrivals_ticks, dtype=np.int64)
    out = np.empty(arr.size, dtype=np.int64)
    for i, t in enumerate(arr.tolist()):
        d = q.offer(t)
        out[i] = -1 if d is None else d
    return ForwardResult(out, q.drops, q.interrupts)


def forward_events(events, model):
    """Forward delivered wire events; returns (departures, drops, interrupts).

    Frames that failed the FCS check never reach the DuT's queue.
    """
    delivered = [e for e in events if e.delivered]
    res = forward([e.true_time_ticks for e in delivered], model)
    departures = [(int(d), e) for d, e in zip(res.departures_ticks, delivered) if d >= 0]
    return departures, res.drops, res.interrupts


def latency_percentiles(arrivals_ticks, departures_ticks, ps):
    """Percentiles (in ns) of residence time over matched arrival/departure pairs.

    Dropped packets (departure < 0) are excluded.
    """
    arr = np.asarray(arrivals_ticks, dtype=np.int64)
    dep = np.asarray(departures_ticks, dtype=np.int64)
    if arr.shape != dep.shape:
        raise ValueError("arrivals and departures must be paired")
    keep = dep >= 0
    if not np.any(keep):
        raise EmptySample("no forwarded packets to take percentiles of")
    res = (dep[keep] - arr[keep]) / TICKS_PER_NS
    return [float(v) for v in np.percentile(res, ps)]
