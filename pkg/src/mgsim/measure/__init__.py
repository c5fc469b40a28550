from .costs import CostModel, Cycles, Throughput, estimate_cycles, predict_throughput
from .stats import (
    Histogram,
    StatsCounter,
    percent_within,
    record_interarrival,
    record_interarrival_ticks,
)
from .timestamps import (
    LatencyRun,
    LatencySample,
    TimestampRegister,
    latch_timestamp,
    link_path,
    measure_latency,
    should_timestamp,
)
