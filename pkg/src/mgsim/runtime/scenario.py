"""Declarative scenario documents: parsing, validation, serialization."""
import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import List, Optional

import jsonschema

from ..errors import ConfigInvalid, IoFailure, QueueConflict

SCHEMA_VERSION = 1
SEED_ENV = "MGSIM_SEED"
_SEED_MASK = (1 << 64) - 1

CLOCK_PRESETS = ("ideal", "82599", "X540", "82580")
TASK_KINDS = ("generator", "counter", "latency", "dut")


@lru_cache(maxsize=None)
def schema():
    """The scenario JSON schema shipped with the package."""
    return json.loads(resources.files(__package__).joinpath("scenario.schema.json").read_text())


@dataclass
class Device:
    id: str
    line_rate_bps: int = 10**10
    clock: str = "ideal"
    queues: int = 1


@dataclass
class Link:
    a: str
    b: str
    length_m: float = 2.0
    vp_fraction: float = 0.72
    k_ns: float = 310.7
    aggregate_cap_bps: Optional[float] = None
    block_code_jitter: bool = False


@dataclass(frozen=True)
class QueueRef:
    device: str
    queue: int = 0


@dataclass
class Task:
    id: str
    kind: str
    queue: QueueRef
    pattern: Optional[dict] = None
    template: Optional[dict] = None
    modifiers: List[dict] = field(default_factory=list)
    duration_s: Optional[float] = None
    options: dict = field(default_factory=dict)

    def ref(self, name):
        """A QueueRef stored in the task's options (latency ``rx``, dut ``egress``)."""
        raw = self.options[name]
        return QueueRef(raw["device"], raw.get("queue", 0))


@dataclass
class Scenario:
    devices: List[Device]
    links: List[Link]
    tasks: List[Task]
    seed: int = 0
    version: int = SCHEMA_VERSION

    def device(self, dev_id):
        for d in self.devices:
            if d.id == dev_id:
                return d
        raise KeyError(dev_id)


def _path(parts):
    return "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in parts).lstrip(".")


def _check_schema(doc, sub=None, prefix=()):
    s = schema()
    if sub is not None:
        s = dict(s["definitions"]["options"][sub], definitions=s["definitions"])
    errors = sorted(jsonschema.Draft7Validator(s).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigInvalid(_path(list(prefix) + list(e.absolute_path)) or "$", e.message)


def parse(doc):
    """Build a Scenario from a decoded JSON document, validating it fully."""
    _check_schema(doc)
    devices = [Device(d["id"], d.get("line_rate_bps", 10**10), _clock_name(d.get("clock", "ideal")),
                      d.get("queues", 1)) for d in doc["devices"]]
    links = [Link(l["a"], l["b"], l.get("length_m", 2.0), l.get("vp_fraction", 0.72), l.get("k_ns", 310.7),
                  l.get("aggregate_cap_bps"), l.get("block_code_jitter", False)) for l in doc["links"]]
    tasks = []
    for i, t in enumerate(doc["tasks"]):
        opts = copy.deepcopy(t.get("options", {}))
        _check_schema(opts, t["kind"], ("tasks", i, "options"))
        q = t["queue"]
        tasks.append(Task(t["id"], t["kind"], QueueRef(q["device"], q.get("queue", 0)),
                          copy.deepcopy(t.get("pattern")), copy.deepcopy(t.get("template")),
                          copy.deepcopy(t.get("modifiers", [])), t.get("duration_s"), opts))
    sc = Scenario(devices, links, tasks, doc.get("seed", 0), doc["version"])
    validate(sc)
    return sc


def _clock_name(name):
    return "X540" if name.lower() == "x540" else name


def validate(sc):
    """Cross-reference checks the schema cannot express."""
    ids = {}
    for i, d in enumerate(sc.devices):
        if d.id in ids:
            raise ConfigInvalid(f"devices[{i}].id", f"duplicate device id {d.id!r}")
        ids[d.id] = d
    linked = {}
    for i, l in enumerate(sc.links):
        for end in ("a", "b"):
            dev = getattr(l, end)
            if dev not in ids:
                raise ConfigInvalid(f"links[{i}].{end}", f"unknown device {dev!r}")
            if dev in linked:
                raise ConfigInvalid(f"links[{i}].{end}", f"device {dev!r} already has a link (one port per device)")
            linked[dev] = i
        if l.a == l.b:
            raise ConfigInvalid(f"links[{i}].b", "a link needs two distinct devices")
        if ids[l.a].line_rate_bps != ids[l.b].line_rate_bps:
            raise ConfigInvalid(f"links[{i}]", "both ends of a link must run at the same line rate")
    bound = {}
    task_ids = set()
    for i, t in enumerate(sc.tasks):
        if t.id in task_ids:
            raise ConfigInvalid(f"tasks[{i}].id", f"duplicate task id {t.id!r}")
        task_ids.add(t.id)
        for where, ref, direction in _bindings(t):
            path = f"tasks[{i}].{where}"
            if ref.device not in ids:
                raise ConfigInvalid(path + ".device", f"unknown device {ref.device!r}")
            if ref.queue >= ids[ref.device].queues:
                raise ConfigInvalid(path + ".queue", f"device {ref.device!r} has only {ids[ref.device].queues} queues")
            key = (ref.device, direction, ref.queue)
            if key in bound:
                raise QueueConflict(path, f"{direction} queue {ref.queue} of {ref.device!r} already bound to task {bound[key]!r}")
            bound[key] = t.id
        _validate_task(sc, i, t, linked)
    return sc


def _bindings(t):
    if t.kind == "generator":
        return [("queue", t.queue, "tx")]
    if t.kind == "counter":
        return [("queue", t.queue, "rx")]
    if t.kind == "latency":
        return [("queue", t.queue, "tx"), ("options.rx", t.ref("rx"), "rx")]
    return [("queue", t.queue, "rx"), ("options.egress", t.ref("egress"), "tx")]


def _validate_task(sc, i, t, linked):
    path = f"tasks[{i}]"
    if t.kind == "generator":
        if t.pattern is None:
            raise ConfigInvalid(path + ".pattern", "generator needs a traffic pattern")
        p = t.pattern
        need = {"cbr": ("rate_pps",), "poisson": ("rate_pps",),
                "bursts": ("burst_len", "intra_gap_ns", "inter_burst_ns"), "custom": ()}[p["type"]]
        for k in need:
            if k not in p:
                raise ConfigInvalid(f"{path}.pattern.{k}", f"required for {p['type']} patterns")
        if p["type"] == "custom" and ("deltas_ns" in p) == ("csv" in p):
            raise ConfigInvalid(path + ".pattern", "custom patterns need exactly one of deltas_ns or csv")
        if p["type"] != "custom" and t.duration_s is None and "packets" not in t.options:
            raise ConfigInvalid(path + ".duration_s", "generator needs duration_s or options.packets")
        if t.options.get("rate_control", "hw") == "hw" and p["type"] != "cbr":
            raise ConfigInvalid(path + ".options.rate_control",
                                f"hardware rate control only produces cbr traffic, use gapfill for {p['type']}")
    for where, ref, _ in _bindings(t):
        if ref.device not in linked:
            raise ConfigInvalid(f"{path}.{where}.device", f"device {ref.device!r} is not connected to any link")


def serialize(sc):
    """Inverse of :func:`parse`: a plain JSON-compatible document."""
    return {
        "version": sc.version,
        "seed": sc.seed,
        "devices": [{"id": d.id, "line_rate_bps": d.line_rate_bps, "clock": d.clock, "queues": d.queues}
                    for d in sc.devices],
        "links": [{"a": l.a, "b": l.b, "length_m": l.length_m, "vp_fraction": l.vp_fraction, "k_ns": l.k_ns,
                   "aggregate_cap_bps": l.aggregate_cap_bps, "block_code_jitter": l.block_code_jitter}
                  for l in sc.links],
        "tasks": [_task_doc(t) for t in sc.tasks],
    }


def _task_doc(t):
    doc = {"id": t.id, "kind": t.kind, "queue": {"device": t.queue.device, "queue": t.queue.queue},
           "modifiers": copy.deepcopy(t.modifiers), "duration_s": t.duration_s,
           "options": copy.deepcopy(t.options)}
    if t.pattern is not None:
        doc["pattern"] = copy.deepcopy(t.pattern)
    if t.template is not None:
        doc["template"] = copy.deepcopy(t.template)
    return doc


def dumps(sc):
    return json.dumps(serialize(sc), indent=2, sort_keys=True) + "\n"


def loads(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigInvalid("$", f"not valid JSON: {e}") from None
    return parse(doc)


def load(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise IoFailure(f"cannot read scenario {path}: {e}") from e
    return loads(text)


def derive_seed(seed, name):
    """Per-task seed: scenario seed XOR a stable 64-bit hash of the task id."""
    h = int.from_bytes(hashlib.blake2b(str(name).encode(), digest_size=8).digest(), "little")
    return (int(seed) ^ h) & _SEED_MASK


def effective_seed(scenario_seed, cli_seed=None, environ=None):
    """--seed beats MGSIM_SEED, which beats the scenario's own seed."""
    if cli_seed is not None:
        return int(cli_seed) & _SEED_MASK
    env = (os.environ if environ is None else environ).get(SEED_ENV)
    if env:
        try:
            return int(env, 0) & _SEED_MASK
        except ValueError:
            raise ConfigInvalid(SEED_ENV, f"not an integer: {env!r}") from None
    return int(scenario_seed) & _SEED_MASK
