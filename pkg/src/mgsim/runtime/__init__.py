"""Scenario files, the master/slave run loop, exports and the command line."""
from .engine import DutStage, Master, RunReport, TaskHandle, WireSlots, launch, merge_streams
from .pcap import export_pcap, read_pcap
from .scenario import (
    Device,
    Link,
    QueueRef,
    Scenario,
    Task,
    derive_seed,
    dumps,
    effective_seed,
    load,
    loads,
    parse,
    schema,
    serialize,
    validate,
)
