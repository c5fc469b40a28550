"""Run a scenario: slave tasks, wire arbitration, DuT forwarding, reporting.

All times are logical (0.1 ps ticks). Slaves only see their own inputs and
return their results through a channel, so running them on parallel workers
or one after another yields the same report.
"""
import bisect
import json
import math
import queue
import threading
from dataclasses import dataclass, field

import numpy as np

from .. import packet as pk
from ..dutsim import DutModel, DutQueue
from ..errors import ConfigInvalid, UnknownField
from ..measure.stats import Histogram, StatsCounter, percent_within, record_interarrival_ticks
from ..measure.timestamps import block_code_jitter, link_path, measure_latency
from ..packet import headers as hdr
from ..ratectl import CBR, Bursts, Custom, HwCbrModel, Payload, Poisson, gapfill_encode, hw_cbr_schedule
from ..wireclock import (
    WIRE_OVERHEAD,
    LinkModel,
    Port,
    PortClock,
    byte_ticks,
    ns_to_ticks,
    propagation_ticks,
    serialization_ticks,
    transmit_frames,
)
from .scenario import derive_seed

WITHIN_WINDOWS_NS = (64, 128, 256, 512)
LATENCY_PERCENTILES = (0, 25, 50, 75, 99, 100)


# -- master / slave plumbing ---------------------------------------------------

class _Failed:
    def __init__(self, exc):
        self.exc = exc


class TaskHandle:
    """A slave task as seen by the master: control in, exactly one result out."""

    def __init__(self, task_id, kind):
        self.id = task_id
        self.kind = kind
        self.control = queue.Queue()
        self.results = queue.Queue(maxsize=1)
        self.done = threading.Event()
        self._collected = False

    def _finish(self, value):
        self.results.put(value)
        self.done.set()

    def result(self):
        """Block until the task has completed, then hand over its result (once)."""
        if self._collected:
            raise RuntimeError(f"result of task {self.id!r} was already collected")
        self.done.wait()
        msg = self.results.get()
        self._collected = True
        if isinstance(msg, _Failed):
            raise msg.exc
        return msg


class Master:
    """Starts slaves on up to *workers* threads; ``workers=1`` runs them inline in launch order."""

    def __init__(self, workers=1):
        self.workers = max(1, int(workers))
        self._threads = []
        self._slots = threading.Semaphore(self.workers)

    def launch(self, task_id, kind, fn, *args):
        handle = TaskHandle(task_id, kind)

        def body():
            try:
                handle._finish(fn(*args))
            except BaseException as e:   # re-raised in the master by result()
                handle._finish(_Failed(e))
            finally:
                if self.workers > 1:
                    self._slots.release()

        if self.workers == 1:
            body()
        else:
            self._slots.acquire()
            t = threading.Thread(target=body, name=f"slave-{task_id}", daemon=True)
            self._threads.append(t)
            t.start()
        return handle

    def wait_for_slaves(self):
        for t in self._threads:
            t.join()
        self._threads = []


# -- generators -----------------------------------------------------------------

def make_pattern(spec):
    kind = spec["type"]
    if kind == "cbr":
        return CBR(spec["rate_pps"])
    if kind == "poisson":
        return Poisson(spec["rate_pps"])
    if kind == "bursts":
        return Bursts(spec["burst_len"], spec["intra_gap_ns"], spec["inter_burst_ns"])
    if "csv" in spec:
        return Custom.from_csv(spec["csv"])
    return Custom(list(spec["deltas_ns"]))


def _draw_for_duration(source, duration_ns, rng):
    """Inter-departure times of every packet that starts before *duration_ns*."""
    if isinstance(source, CBR):
        n = max(1, math.ceil(duration_ns * source.rate_pps / 1e9 - 1e-9))
        return source.draw(n, rng)
    chunk = max(16, int(duration_ns / source.mean_ns * 1.1) + 16)
    parts, total = [], 0.0
    while True:
        d = source.draw(chunk, rng)
        starts = total + np.concatenate(([0.0], np.cumsum(d)[:-1]))
        inside = int(np.searchsorted(starts, duration_ns, side="left"))
        if inside < chunk:
            parts.append(d[:inside])
            break
        parts.append(d)
        total = starts[-1] + d[-1]
    out = np.concatenate(parts)
    return out if out.size else source.draw(1, rng)


def build_template(task, path):
    tpl = task.template or {}
    try:
        proto = pk.make_template(pk.PacketTemplate(tpl.get("stack", ["eth", "ip4", "udp"]),
                                                   tpl.get("defaults", {}), tpl.get("pkt_length")))
    except (UnknownField, ValueError) as e:
        raise ConfigInvalid(path + ".template", str(e)) from None
    proto.crc_valid = tpl.get("crc_valid", True)
    for o in task.options.get("offload", []):
        if o not in proto.stack:
            raise ConfigInvalid(path + ".options.offload", f"cannot offload {o} checksums, stack has no {o} layer")
        proto.offload.add(pk.Offload(o))
    return proto


def build_modifiers(task, proto, path):
    mods = []
    for j, m in enumerate(task.modifiers):
        try:
            f = hdr.resolve(proto.stack, m["field"])
            mod = pk.FieldModifier(m["kind"], m["field"], m["lo"], m["hi"])
            mod._bounds(f)
        except (UnknownField, ValueError) as e:
            raise ConfigInvalid(f"{path}.modifiers[{j}]", str(e)) from None
        mods.append(mod)
    return mods


@dataclass
class GeneratorOutput:
    task_id: str
    frames: list          # (departure_ticks, frame, tag); tag None marks a filler
    summary: dict
    frame_len: int


def run_generator(task, path, line_rate_bps, seed):
    """Slave body: build every frame of one generator and schedule its departures."""
    rng = np.random.default_rng(seed)
    opts = task.options
    proto = build_template(task, path)
    mods = build_modifiers(task, proto, path)
    frame_len = proto.frame_len + hdr.FCS_LEN
    wire = frame_len + WIRE_OVERHEAD
    source = make_pattern(task.pattern)
    if "packets" in opts:
        deltas = source.draw(opts["packets"], rng)
    elif isinstance(source, Custom) and task.duration_s is None:
        deltas = source.draw(len(source.deltas_ns), rng)
    else:
        deltas = _draw_for_duration(source, task.duration_s * 1e9, rng)
    n = len(deltas)
    start = ns_to_ticks(opts.get("start_ns", 0.0))
    mode = opts.get("rate_control", "hw")
    summary = {"kind": "generator", "rate_control": mode, "packets": n, "frame_len": frame_len, "warnings": []}
    if mode == "hw":
        model = HwCbrModel(source.rate_pps, opts.get("amplitude_ns", 256.0))
        sched = hw_cbr_schedule(model, n, wire, line_rate_bps, rng, start)
        slots = [(int(t), i) for i, t in enumerate(sched.departures_ticks.tolist())]
        summary["warnings"] = sched.warnings
        summary["clamped"] = sched.clamped
    else:
        plan = gapfill_encode(deltas, wire, line_rate_bps, allow_short=not isinstance(source, CBR))
        slots = [(t, e.index if type(e) is Payload else e) for t, e in plan.departures(start)]
        summary["fillers"] = plan.filler_count
        summary["max_abs_error_bytes"] = float(plan.max_abs_error_bytes)
        summary["requested_mean_pps"] = n / float(plan.requested_bytes) / 8 * line_rate_bps \
            if plan.requested_bytes else 0.0

    payloads = _payload_frames(proto, mods, n, rng)
    frames = []
    for t, what in slots:
        if type(what) is int:
            frames.append((t, payloads[what], (task.id, what)))
        else:
            frames.append((t, pk.filler_frame(what.wire_len), None))
    tx = StatsCounter(task.id, StatsCounter.MANUAL_TX, "csv", opts.get("interval_s", 1.0))
    pay_times = [t for t, what in slots if type(what) is int]
    tx.count_many(pay_times, proto.frame_len)
    end = pay_times[-1] + serialization_ticks(wire, line_rate_bps)
    if task.duration_s:
        end = max(end, round(task.duration_s * 1e9 * 1e4))
    summary["tx"] = tx.finalize(end)
    return GeneratorOutput(task.id, frames, summary, frame_len)


def _payload_frames(proto, mods, n, rng):
    """Materialized frames in sending order; buffers are consumed once sent."""
    if not mods:
        return [pk.materialize(proto)] * n
    pool = pk.BufferPool()
    out = []
    size = proto.frame_len
    for first in range(0, n, pk.DEFAULT_BATCH_SIZE):
        batch = pool.alloc_batch(proto, min(pk.DEFAULT_BATCH_SIZE, n - first), size)
        for m in mods:
            pk.apply_modifier(batch, m, rng)
        for buf in batch:
            out.append(pk.materialize(buf))
            buf.consumed = True
    return out


# -- wire and DuT stages --------------------------------------------------------------

def merge_streams(streams, rate_bps):
    """Interleave several queues' departures on one port, FIFO by requested time.

    A frame whose slot is still occupied waits for the wire to free up.
    """
    if len(streams) == 1:
        return list(streams[0])
    tagged = [(f[0], k, j, f) for k, s in enumerate(streams) for j, f in enumerate(s)]
    tagged.sort(key=lambda x: (x[0], x[1], x[2]))
    bt = byte_ticks(rate_bps)
    out = []
    free = None
    for dep, _, _, f in tagged:
        if free is not None and dep < free:
            dep = free
        free = dep + (len(f[1]) + WIRE_OVERHEAD) * bt
        out.append((dep,) + tuple(f[1:]))
    return out


class WireSlots:
    """Occupancy of a port's wire, used to slot latency probes between frames."""

    def __init__(self, frames, rate_bps):
        bt = byte_ticks(rate_bps)
        self.rate = rate_bps
        self.starts = [f[0] for f in frames]
        self.ends = [f[0] + (len(f[1]) + WIRE_OVERHEAD) * bt for f in frames]

    def __call__(self, dep, wire_len):
        ser = serialization_ticks(wire_len, self.rate)
        i = bisect.bisect_right(self.starts, dep) - 1
        if i >= 0 and self.ends[i] > dep:
            dep = self.ends[i]
        i += 1
        while i < len(self.starts) and self.starts[i] < dep + ser:
            dep = max(dep, self.ends[i])
            i += 1
        return dep


class DutStage:
    """A DuT fed by the arrivals at its ingress port, sending out of its egress port."""

    def __init__(self, task, arrivals, egress_rate_bps):
        o = task.options
        self.task = task
        self.model = DutModel(o.get("service_rate_pps", 1.9e6), o.get("buffer_pkts", 4096),
                              o.get("interrupt_throttle_ns", 0.0), o.get("batch_per_interrupt", 64))
        self.queue = DutQueue(self.model)
        self.arrivals = [e for e in arrivals if e.delivered]
        self.pos = 0
        self.rate = egress_rate_bps
        self.egress_free = 0
        self.out = []
        self.residence = []

    def _send(self, dep, wire_len):
        start = max(dep, self.egress_free)
        self.egress_free = start + serialization_ticks(wire_len, self.rate)
        return start

    def advance(self, t):
        arr = self.arrivals
        while self.pos < len(arr) and arr[self.pos].true_time_ticks <= t:
            e = arr[self.pos]
            self.pos += 1
            d = self.queue.offer(e.true_time_ticks)
            if d is not None:
                start = self._send(d, len(e.frame) + WIRE_OVERHEAD)
                self.out.append((start, e.frame, e.tag))
                self.residence.append(d - e.true_time_ticks)

    def probe(self, t, wire_len):
        """Offer a latency probe arriving at *t*; returns its egress start or None if dropped."""
        self.advance(t)
        d = self.queue.offer(t)
        return None if d is None else self._send(d, wire_len)

    def flush(self):
        self.advance(float("inf"))
        res = np.asarray(self.residence, dtype=np.int64)
        summary = {"kind": "dut", "offered": self.queue.forwarded + self.queue.drops,
                   "forwarded": self.queue.forwarded, "drops": self.queue.drops,
                   "interrupts": self.queue.interrupts, "polls": self.queue.polls}
        if res.size:
            summary["residence_ns"] = {str(p): float(v) / 1e4
                                       for p, v in zip(LATENCY_PERCENTILES, np.percentile(res, LATENCY_PERCENTILES))}
        return summary


def _jittered(link, rng):
    if link.block_code_jitter:
        return lambda: int(block_code_jitter(rng))
    return lambda: 0


# -- counters --------------------------------------------------------------------

def udp_dst_port(frame):
    etype = int.from_bytes(frame[12:14], "big")
    if etype == hdr.ETHERTYPE_IP4:
        if frame[23] != hdr.IPPROTO_UDP:
            return None
        o = 14 + (frame[14] & 0x0F) * 4
    elif etype == hdr.ETHERTYPE_IP6:
        if frame[20] != hdr.IPPROTO_UDP:
            return None
        o = 54
    else:
        return None
    return int.from_bytes(frame[o + 2:o + 4], "big")


@dataclass
class CounterOutput:
    summary: dict
    counter: StatsCounter
    histogram: object = None
    capture: list = field(default_factory=list)


def run_counter(task, events, rate_bps):
    """Slave body: count what a receive queue saw."""
    o = task.options
    want = o.get("udp_dst")
    sel = [e for e in events if e.delivered and (want is None or udp_dst_port(e.frame) == want)]
    times = np.fromiter((e.true_time_ticks for e in sel), dtype=np.int64, count=len(sel))
    sizes = np.fromiter((len(e.frame) - hdr.FCS_LEN for e in sel), dtype=np.int64, count=len(sel))
    ctr = StatsCounter(task.id, StatsCounter.PKT_RX, "csv", o.get("interval_s", 1.0))
    ctr.count_many(times, sizes)
    end = int(times[-1]) + 1 if times.size else 1
    if task.duration_s:
        end = max(end, round(task.duration_s * 1e9 * 1e4))
    summary = {"kind": "counter", "rx": ctr.finalize(end)}
    out = CounterOutput(summary, ctr)
    if "histogram" in o:
        h = o["histogram"]
        hist = Histogram(h.get("bin_width_ns", 64.0), h.get("target_ns"))
        if times.size > 1:
            record_interarrival_ticks(times, hist, int(sizes[0]) + hdr.FCS_LEN + WIRE_OVERHEAD, rate_bps)
        hs = {"bin_width_ns": hist.bin_width_ns, "total": hist.total,
              "microburst_fraction": hist.microburst_fraction,
              "bins": [[k, v] for k, v in hist.counts.items()]}
        if hist.target_ns is not None:
            hs["target_ns"] = hist.target_ns
            hs["within"] = {str(w): percent_within(hist, w) for w in WITHIN_WINDOWS_NS}
        summary["histogram"] = hs
        out.histogram = hist
    if o.get("capture"):
        out.capture = [(e.true_time_ticks, e.frame) for e in sel]
        summary["captured"] = len(out.capture)
    return out


# -- the run --------------------------------------------------------------------------

@dataclass
class RunReport:
    data: dict
    counters: dict = field(default_factory=dict)
    histograms: dict = field(default_factory=dict)
    captures: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"


class _Net:
    def __init__(self, sc, seed):
        self.sc = sc
        self.ports = {}
        for d in sc.devices:
            rng = np.random.default_rng(derive_seed(seed, "device:" + d.id))
            self.ports[d.id] = Port(d.id, PortClock.preset(d.clock, rng), d.line_rate_bps)
        self.links = {}
        for l in sc.links:
            rate = sc.device(l.a).line_rate_bps
            model = LinkModel(l.length_m, l.vp_fraction, l.k_ns, rate, l.aggregate_cap_bps, l.block_code_jitter)
            self.links[l.a] = (model, l.b)
            self.links[l.b] = (model, l.a)

    def peer(self, dev):
        return self.links[dev][1]

    def link(self, dev):
        return self.links[dev][0]


def _task_path(sc, task):
    return f"tasks[{sc.tasks.index(task)}]"


def _check_topology(sc, net):
    tx_users = {}
    for t in sc.tasks:
        if t.kind in ("generator", "latency"):
            tx_users.setdefault(t.queue.device, []).append(t)
        elif t.kind == "dut":
            tx_users.setdefault(t.ref("egress").device, []).append(t)
    for dev, users in tx_users.items():
        gapfill = [t for t in users if t.kind == "generator" and t.options.get("rate_control", "hw") == "gapfill"]
        if gapfill and len(users) > 1:
            raise ConfigInvalid(_task_path(sc, gapfill[0]) + ".options.rate_control",
                                f"a gap-filling generator needs port {dev!r} to itself")
    duts = {t.queue.device: t for t in sc.tasks if t.kind == "dut"}
    egress = {t.ref("egress").device: t for t in sc.tasks if t.kind == "dut"}
    if len(duts) != sum(1 for t in sc.tasks if t.kind == "dut"):
        t = [t for t in sc.tasks if t.kind == "dut"][-1]
        raise ConfigInvalid(_task_path(sc, t) + ".queue", "only one DuT task per ingress device")
    if len(egress) != len(duts):
        t = [t for t in sc.tasks if t.kind == "dut"][-1]
        raise ConfigInvalid(_task_path(sc, t) + ".options.egress", "only one DuT task per egress device")
    # upstream of a DuT is whatever its ingress port's peer sends; that must not loop back
    for start in duts.values():
        seen, cur = set(), start
        while cur is not None:
            if cur.id in seen:
                raise ConfigInvalid(_task_path(sc, start) + ".options.egress", "DuT forwarding loop")
            seen.add(cur.id)
            cur = egress.get(net.peer(cur.queue.device))
    for t in sc.tasks:
        if t.kind != "latency":
            continue
        p = _task_path(sc, t)
        if t.queue.device in egress:
            raise ConfigInvalid(p + ".queue", "latency probes cannot share a port with DuT egress traffic")
        first = net.peer(t.queue.device)
        rx = t.ref("rx").device
        if first == rx:
            continue
        if first in duts and net.peer(duts[first].ref("egress").device) == rx:
            continue
        raise ConfigInvalid(p + ".options.rx", f"{rx!r} is neither linked to {t.queue.device!r} "
                                                "nor behind a single DuT")
    return duts, egress


def launch(sc, seed=None, workers=1):
    """Run scenario *sc* and return its RunReport.

    *seed* overrides the scenario's seed; *workers* > 1 runs slave tasks on
    threads, which does not change any result.
    """
    seed = sc.seed if seed is None else seed
    net = _Net(sc, seed)
    duts, egress = _check_topology(sc, net)
    master = Master(workers)
    report = RunReport({"version": 1, "seed": seed, "tasks": {}, "devices": {}})
    results = report.data["tasks"]

    gens = [t for t in sc.tasks if t.kind == "generator"]
    handles = [master.launch(t.id, t.kind, run_generator, t, _task_path(sc, t),
                             sc.device(t.queue.device).line_rate_bps, derive_seed(seed, t.id)) for t in gens]
    gen_out = [h.result() for h in handles]
    master.wait_for_slaves()

    by_dev = {}
    for t, g in zip(gens, gen_out):
        by_dev.setdefault(t.queue.device, []).append(g.frames)
        results[t.id] = g.summary
    arrivals = {}
    slots = {}
    for d in sc.devices:
        if d.id not in by_dev:
            continue
        frames = merge_streams(by_dev[d.id], d.line_rate_bps)
        slots[d.id] = WireSlots(frames, d.line_rate_bps)
        peer = net.peer(d.id)
        arrivals[peer] = transmit_frames(net.ports[d.id], frames, net.link(d.id), net.ports[peer])

    # DuTs directly behind generator ports can run interleaved with latency probes
    stages = {}
    for dev, t in duts.items():
        if net.peer(dev) not in egress:
            stages[dev] = DutStage(t, arrivals.get(dev, []), sc.device(t.ref("egress").device).line_rate_bps)

    for t in sc.tasks:
        if t.kind == "latency":
            results[t.id] = _run_latency(sc, net, t, seed, stages, duts, arrivals, slots)

    pending = dict(duts)
    while pending:
        for dev, t in list(pending.items()):
            if dev not in stages:
                if net.peer(dev) in egress and egress[net.peer(dev)].queue.device in pending:
                    continue
                stages[dev] = DutStage(t, arrivals.get(dev, []), sc.device(t.ref("egress").device).line_rate_bps)
            st = stages[dev]
            results[t.id] = st.flush()
            out_dev = t.ref("egress").device
            peer = net.peer(out_dev)
            arrivals[peer] = transmit_frames(net.ports[out_dev], st.out, net.link(out_dev), net.ports[peer])
            del pending[dev]

    counters = [t for t in sc.tasks if t.kind == "counter"]
    handles = [master.launch(t.id, t.kind, run_counter, t, arrivals.get(t.queue.device, []),
                             sc.device(t.queue.device).line_rate_bps) for t in counters]
    for t, h in zip(counters, handles):
        out = h.result()
        results[t.id] = out.summary
        report.counters[t.id] = out.counter
        if out.histogram is not None:
            report.histograms[t.id] = out.histogram
        if t.options.get("capture"):
            report.captures[t.id] = out.capture
    master.wait_for_slaves()

    for d in sc.devices:
        p = net.ports[d.id]
        report.data["devices"][d.id] = {"tx_frames": p.tx_frames, "tx_bytes": p.tx_bytes,
                                        "rx_packets": p.rx_packets, "rx_bytes": p.rx_bytes,
                                        "rx_errors": p.rx_errors}
    return report


def _run_latency(sc, net, t, seed, stages, duts, arrivals, slots):
    o = t.options
    rng = np.random.default_rng(derive_seed(seed, t.id))
    path_name = _task_path(sc, t)
    tx_dev, rx_dev = t.queue.device, t.ref("rx").device
    tpl = dict(t.template or {})
    tpl.setdefault("stack", ["eth", "ip4", "udp", "ptp"])
    tpl.setdefault("pkt_length", 80)
    probe = build_template(type(t)(t.id, t.kind, t.queue, template=tpl), path_name)
    frame = pk.materialize(probe)
    first = net.peer(tx_dev)
    link1 = net.link(tx_dev)
    if first == rx_dev:
        path = link_path(link1, rng)
        background = [(e.true_time_ticks, e.frame) for e in arrivals.get(rx_dev, []) if e.delivered]
    else:
        stage = stages[first]
        out_dev = duts[first].ref("egress").device
        link2 = net.link(out_dev)
        p1, p2 = propagation_ticks(link1), propagation_ticks(link2)
        j1, j2 = _jittered(link1, rng), _jittered(link2, rng)
        r1, r2 = link1.line_rate_bps, link2.line_rate_bps

        def path(dep, wire_len):
            at_dut = dep + serialization_ticks(wire_len, r1) + p1 + j1()
            start = stage.probe(at_dut, wire_len)
            if start is None:
                return None
            return start + serialization_ticks(wire_len, r2) + p2 + j2()
        background = ()
    run = measure_latency(net.ports[tx_dev], net.ports[rx_dev], o.get("samples", 1000), link1, rng,
                          path=path, frame_len=len(frame), resync=o.get("resync", True),
                          outlier_rate=o.get("outlier_rate", 0.0),
                          start_ticks=ns_to_ticks(o.get("start_ns", 0.0)), background=background,
                          on_timeout="count", tx_slot=slots.get(tx_dev))
    lat = run.latencies_ns()
    summary = {"kind": "latency", "samples": len(run.samples), "lost": run.lost, "timeouts": run.timeouts,
               "sync_outliers": run.sync_outliers, "latency_ns": [float(v) for v in lat]}
    if lat.size:
        summary["percentiles_ns"] = {str(p): float(v) for p, v in zip(LATENCY_PERCENTILES,
                                                                     np.percentile(lat, LATENCY_PERCENTILES))}
        summary["mean_ns"] = float(lat.mean())
    return summary


def latency_histogram(summary, bin_width_ns=6.4):
    hist = Histogram(bin_width_ns)
    hist.add_ns(summary["latency_ns"])
    return hist

