"""Deterministic trace-driven simulator for resource-sensitive GPU cluster scheduling.

The library models multi-tenant GPU clusters where GPU demand is rigid but CPU
and memory are fungible. It ships:

- an analytical throughput oracle and cluster/job domain model (``core``),
- optimistic profiling that builds per-job sensitivity matrices from a handful
  of samples (``profiler``),
- queue ordering policies: FIFO, SRTF, LAS, FTF (``policy``),
- per-round placement mechanisms: proportional, greedy, tune (``mechanism``),
- an exact per-round upper bound: grid ILP + placement LP (``optimizer``),
- a discrete-event simulator with rounds, leases, and restart penalties
  (``simulator``),
- workload generation and trace ingestion (``workload``),
- a CLI for batch experiments (``synsim ...``).
"""

from synsim.core import (
    Allocation,
    ClusterSpec,
    ClusterState,
    Job,
    JobClass,
    JobState,
    ServerSpec,
    oracle_throughput,
    proportional_share,
)
from synsim.presets import JOB_CLASSES, TASK_PRESETS, make_cluster, reference_server
from synsim.profiler import DemandVector, SensitivityMatrix, profile_job
from synsim.policy import PolicyKind, order_queue
from synsim.mechanism import place_greedy, place_proportional, place_tune
from synsim.optimizer import build_opt_instance, solve_ideal_ilp, solve_placement_lp
from synsim.simulator import MetricsReport, SimConfig, compare, run
from synsim.workload import TraceSpec, gen_trace, load_trace, save_trace

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "ClusterSpec",
    "ClusterState",
    "Job",
    "JobClass",
    "JobState",
    "ServerSpec",
    "oracle_throughput",
    "proportional_share",
    "JOB_CLASSES",
    "TASK_PRESETS",
    "make_cluster",
    "reference_server",
    "DemandVector",
    "SensitivityMatrix",
    "profile_job",
    "PolicyKind",
    "order_queue",
    "place_greedy",
    "place_proportional",
    "place_tune",
    "build_opt_instance",
    "solve_ideal_ilp",
    "solve_placement_lp",
    "MetricsReport",
    "SimConfig",
    "compare",
    "run",
    "TraceSpec",
    "gen_trace",
    "load_trace",
    "save_trace",
    "__version__",
]
