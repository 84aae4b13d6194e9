"""Domain model: servers, clusters, job classes, jobs, allocations, cluster state.

Responsibilities:
- value types for cluster hardware and workload units
- the analytical throughput oracle that stands in for real training throughput
- GPU-proportional share computation
- allocation apply/release with exact resource conservation
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple


class DemandError(ValueError):
    """A job's demand cannot be satisfied by the cluster (e.g. g out of range)."""


class PlacementError(RuntimeError):
    """An allocation would violate a server's free capacity."""


@dataclass(frozen=True)
class ServerSpec:
    """One physical server SKU."""

    gpus: int
    cpus: int
    mem_gb: float
    storage_bw: float  # local storage read bandwidth, GB/s
    machine_type: int = 0  # tag for heterogeneous clusters; 0 when homogeneous

    def __post_init__(self):
        if self.gpus < 1:
            raise ValueError(f"gpus must be >= 1, got {self.gpus}")
        # proportional share of one GPU must be at least one core
        if self.cpus < self.gpus:
            raise ValueError(f"cpus ({self.cpus}) must be >= gpus ({self.gpus})")
        if self.mem_gb <= 0:
            raise ValueError(f"mem_gb must be > 0, got {self.mem_gb}")
        if self.storage_bw <= 0:
            raise ValueError(f"storage_bw must be > 0, got {self.storage_bw}")


@dataclass(frozen=True)
class ClusterSpec:
    """An ordered list of servers plus the scheduling round length."""

    servers: Tuple[ServerSpec, ...]
    round_minutes: float = 5.0

    def __post_init__(self):
        if not self.servers:
            raise ValueError("cluster needs at least one server")
        if self.round_minutes <= 0:
            raise ValueError(f"round_minutes must be > 0, got {self.round_minutes}")
        object.__setattr__(self, "servers", tuple(self.servers))

    @property
    def total_gpus(self) -> int:
        return sum(s.gpus for s in self.servers)

    @property
    def total_cpus(self) -> int:
        return sum(s.cpus for s in self.servers)

    @property
    def total_mem_gb(self) -> float:
        return sum(s.mem_gb for s in self.servers)

    @property
    def is_homogeneous(self) -> bool:
        return all(s == self.servers[0] for s in self.servers)


@dataclass(frozen=True)
class JobClass:
    """Synthetic model archetype: the constants the throughput oracle runs on."""

    name: str
    task: str  # one of {"image", "language", "speech"}
    gpu_rate: float  # samples/second per GPU
    cpu_rate: float  # samples/second per CPU core (pre-processing speed)
    dataset_samples: int
    bytes_per_sample: float  # megabytes per sample
    min_cpu: int = 1

    def __post_init__(self):
        if self.task not in ("image", "language", "speech"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.gpu_rate <= 0 or self.cpu_rate <= 0:
            raise ValueError("rates must be > 0")
        if self.dataset_samples <= 0:
            raise ValueError("dataset_samples must be > 0")
        if self.bytes_per_sample <= 0:
            raise ValueError("bytes_per_sample must be > 0")

    @property
    def dataset_gb(self) -> float:
        # decimal units: 1 GB = 1000 MB
        return self.dataset_samples * self.bytes_per_sample / 1000.0


class JobState(Enum):
    QUEUED = "queued"
    RUNNING = "running"
    FINISHED = "finished"


@dataclass
class Job:
    """A single training job instance from a trace."""

    id: int
    class_ref: JobClass
    gpu_demand: int  # rigid GPU demand, fixed for the job's lifetime
    arrival: float  # minutes
    total_samples: float  # work to complete
    prop_rate: float  # samples/s at GPU-proportional share on the reference server

    # progress tracking
    attained_service: float = 0.0  # GPU-minutes
    samples_done: float = 0.0
    state: JobState = JobState.QUEUED

    # lifecycle timestamps filled in by the simulator (minutes)
    queue_entry: Optional[float] = None  # arrival + profiling delay
    first_start: Optional[float] = None
    finish: Optional[float] = None

    def __post_init__(self):
        if self.gpu_demand < 1 or self.gpu_demand > 16:
            raise DemandError(f"job {self.id}: gpu_demand {self.gpu_demand} outside 1..16")
        if self.total_samples <= 0:
            raise ValueError(f"job {self.id}: total_samples must be > 0")
        if self.prop_rate <= 0:
            raise ValueError(f"job {self.id}: prop_rate must be > 0")

    @property
    def remaining_samples(self) -> float:
        return max(0.0, self.total_samples - self.samples_done)

    @property
    def finished(self) -> bool:
        return self.state == JobState.FINISHED


@dataclass(frozen=True)
class Allocation:
    """Per-server resource assignment for one job.

    per_server holds (server_index, gpus, cpus, mem_gb) tuples sorted by server
    index. For multi-server allocations CPU/memory must be proportional to each
    server's GPU share (CPU up to the integer split rule in the mechanism module).
    """

    job_id: int
    per_server: Tuple[Tuple[int, int, int, float], ...]

    def __post_init__(self):
        entries = tuple(sorted(self.per_server))
        object.__setattr__(self, "per_server", entries)
        seen = set()
        for idx, g, c, m in entries:
            if idx in seen:
                raise ValueError(f"allocation for job {self.job_id} repeats server {idx}")
            seen.add(idx)
            if g < 1 or c < 0 or m < 0:
                raise ValueError(f"allocation for job {self.job_id} has negative resources")

    @property
    def gpus(self) -> int:
        return sum(g for _, g, _, _ in self.per_server)

    @property
    def cpus(self) -> int:
        return sum(c for _, _, c, _ in self.per_server)

    @property
    def mem_gb(self) -> float:
        return sum(m for _, _, _, m in self.per_server)

    @property
    def server_indices(self) -> Tuple[int, ...]:
        return tuple(idx for idx, _, _, _ in self.per_server)

    @property
    def consolidated(self) -> bool:
        return len(self.per_server) == 1


class ClusterState:
    """Mutable free-capacity tracker over a ClusterSpec.

    Free capacity is always recomputed from the set of running allocations so
    that apply followed by release restores the state exactly (incremental
    float updates would not cancel bit-for-bit).
    """

    def __init__(self, cluster: ClusterSpec):
        self.cluster = cluster
        self.running: Dict[int, Allocation] = {}
        self.leases: Dict[int, bool] = {}
        # per-server map: job_id -> (gpus, cpus, mem_gb)
        self._on_server: List[Dict[int, Tuple[int, int, float]]] = [
            {} for _ in cluster.servers
        ]

    def copy(self) -> "ClusterState":
        dup = ClusterState(self.cluster)
        dup.running = dict(self.running)
        dup.leases = dict(self.leases)
        dup._on_server = [dict(d) for d in self._on_server]
        return dup

    def free(self, server_idx: int) -> Tuple[int, int, float]:
        """Free (gpus, cpus, mem_gb) on one server, recomputed exactly."""
        spec = self.cluster.servers[server_idx]
        used_g = 0
        used_c = 0
        used_m = 0.0
        for job_id in sorted(self._on_server[server_idx]):
            g, c, m = self._on_server[server_idx][job_id]
            used_g += g
            used_c += c
            used_m += m
        return spec.gpus - used_g, spec.cpus - used_c, spec.mem_gb - used_m

    def free_gpus_total(self) -> int:
        return sum(self.free(i)[0] for i in range(len(self.cluster.servers)))

    def jobs_on_server(self, server_idx: int) -> Dict[int, Tuple[int, int, float]]:
        return dict(self._on_server[server_idx])

    def apply(self, alloc: Allocation) -> None:
        if alloc.job_id in self.running:
            raise PlacementError(f"job {alloc.job_id} is already placed")
        for idx, g, c, m in alloc.per_server:
            free_g, free_c, free_m = self.free(idx)
            # small epsilon absorbs float-sum noise in memory only
            if g > free_g or c > free_c or m > free_m + 1e-9:
                raise PlacementError(
                    f"job {alloc.job_id} needs ({g},{c},{m:.3f}) on server {idx}, "
                    f"free ({free_g},{free_c},{free_m:.3f})"
                )
        self.running[alloc.job_id] = alloc
        for idx, g, c, m in alloc.per_server:
            self._on_server[idx][alloc.job_id] = (g, c, m)

    def release(self, job_id: int) -> Allocation:
        if job_id not in self.running:
            raise PlacementError(f"job {job_id} is not placed")
        alloc = self.running.pop(job_id)
        for idx, _, _, _ in alloc.per_server:
            del self._on_server[idx][job_id]
        self.leases.pop(job_id, None)
        return alloc


def oracle_throughput(jc: JobClass, g: int, c: int, m: float, bw: float) -> float:
    """Ground-truth training throughput in samples/second.

    T = min(GPU compute bound, CPU pre-processing bound, storage fetch bound).
    The storage bound follows the cache model with a fixed hit fraction
    h = m / dataset size: misses stream from local storage at bw GB/s, so the
    fetch rate is bw*1000 / (bytes_per_sample * (1-h)) samples/s, and a fully
    cached dataset (h = 1) removes the bound entirely.
    """
    if g < 1:
        raise ValueError(f"g must be >= 1, got {g}")
    if c < 1:
        raise ValueError(f"c must be >= 1, got {c}")
    if m < 0:
        raise ValueError(f"m must be >= 0, got {m}")
    gpu_bound = g * jc.gpu_rate
    cpu_bound = c * jc.cpu_rate
    h = min(1.0, m / jc.dataset_gb)
    if h >= 1.0:
        disk_bound = math.inf
    else:
        disk_bound = bw * 1000.0 / (jc.bytes_per_sample * (1.0 - h))
    return min(gpu_bound, cpu_bound, disk_bound)


def proportional_share(server: ServerSpec, g: int) -> Tuple[int, float]:
    """GPU-proportional CPU/memory share for g GPUs on one server.

    CPU is floored to an integer core count; memory stays fractional GB.
    """
    if g < 1 or g > server.gpus:
        raise DemandError(f"g={g} outside 1..{server.gpus}")
    cpus = math.floor(server.cpus / server.gpus * g)
    mem = server.mem_gb / server.gpus * g
    return cpus, mem


def proportional_rate(jc: JobClass, g: int, server: ServerSpec) -> float:
    """Throughput at GPU-proportional share, spanning servers when g exceeds one.

    Jobs wider than one server take whole servers plus a proportional slice of
    the last one; the share is additive in g, so the pooled (cpus, mem) equal
    the per-server proportional pieces summed.
    """
    if g <= server.gpus:
        c, m = proportional_share(server, g)
    else:
        whole, rest = divmod(g, server.gpus)
        c = whole * server.cpus
        m = whole * server.mem_gb
        if rest:
            rc, rm = proportional_share(server, rest)
            c += rc
            m += rm
    return oracle_throughput(jc, g, max(1, c), m, server.storage_bw)
