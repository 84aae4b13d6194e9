"""Optimistic profiling: few empirical CPU samples plus analytical fill.

A job is profiled once, at arrival:
1. bisection over CPU counts at full memory measures a handful of points
   (1 simulated minute each),
2. the remaining CPU rows are interpolated, and every (cpu, memory) cell is
   completed analytically with the cache-model storage bound, which costs no
   profiling time,
3. the demand vector (g, c*, m*) is the cheapest cell that still saturates
   estimated throughput.

The CPU-vs-cores curve of the oracle is concave piecewise-linear, so chord
interpolation between exact samples never overestimates: the filled matrix is a
pointwise lower bound on ground truth. Downstream guarantees rely on that.
"""

import csv
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from synsim.core import JobClass, ServerSpec, oracle_throughput, proportional_share

# memory grid step in GB
MEM_GRID_GB = 50.0
# relative throughput loss tolerated by "saturated"
EPS_SAT = 0.01
# simulated wall-clock cost of one empirical sample
MINUTES_PER_SAMPLE = 1.0


@dataclass(frozen=True)
class DemandVector:
    """Rigid GPU demand plus the minimal fungible demands that saturate throughput."""

    gpus: int
    cpus: int
    mem_gb: float
    peak_throughput: float  # samples/s at (cpus, mem_gb)


@dataclass
class SensitivityMatrix:
    """Estimated throughput over the discrete (cpu, memory) allocation grid."""

    job_class: JobClass
    gpus: int
    cpu_axis: np.ndarray  # contiguous ints 1..max
    mem_axis: np.ndarray  # ascending GB values
    values: np.ndarray  # shape (len(cpu_axis), len(mem_axis)), samples/s
    sampled_cpus: Tuple[int, ...]

    def __post_init__(self):
        # placement scans call value_at millions of times per simulated week;
        # per-call numpy indexing dominates wall time, so look up through
        # plain-Python tables instead
        self._cpu0 = int(self.cpu_axis[0])
        self._cpu_top = int(self.cpu_axis[-1])
        self._rows = self.values.tolist()
        self._mem_vals = tuple(float(v) for v in self.mem_axis)
        self._mem_ids = {v: i for i, v in enumerate(self._mem_vals)}

    @property
    def cpu_top(self) -> int:
        return self._cpu_top

    @property
    def mem_steps(self) -> Tuple[float, ...]:
        """The memory axis as plain floats, cheap to iterate."""
        return self._mem_vals

    def row(self, c: int) -> List[float]:
        """Throughput over the memory axis at c CPUs, as plain floats."""
        return self._rows[self.cpu_index(c)]

    def cpu_index(self, c: int) -> int:
        i = int(c) - self._cpu0
        if i < 0 or i >= len(self._rows):
            raise KeyError(f"cpu={c} outside axis 1..{self.cpu_axis[-1]}")
        return i

    def mem_index(self, m: float) -> int:
        i = self._mem_ids.get(m)
        if i is not None:
            return i
        # tolerate values recomputed by arithmetic rather than read off the axis
        i = int(np.searchsorted(self.mem_axis, m - 1e-9))
        if i >= len(self.mem_axis) or abs(self.mem_axis[i] - m) > 1e-6:
            raise KeyError(f"mem={m} is not a grid value")
        return i

    def value_at(self, c: int, m: float) -> float:
        return self._rows[self.cpu_index(c)][self.mem_index(m)]

    def next_mem_step(self, m: float) -> Optional[float]:
        """The next grid value above m, or None at the top."""
        i = self.mem_index(m)
        if i + 1 >= len(self.mem_axis):
            return None
        return float(self.mem_axis[i + 1])

    @property
    def peak(self) -> float:
        # monotone along both axes, so the top-right cell is the max
        return float(self.values[-1, -1])


def build_axes(jc: JobClass, g: int, server: ServerSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Allocation grid for a g-GPU job of class jc on a cluster of `server`s.

    CPU: every core count from 1 up to one server's worth when the job fits on
    one server, or k servers' worth when it must span k. Memory: the 50 GB
    grid up to the same span, plus the exact dataset size (the fully cached
    point) and the GPU-proportional share (the baseline cell).
    """
    servers_needed = math.ceil(g / server.gpus)
    max_cpus = min(server.cpus * g, server.cpus * servers_needed)
    cpu_axis = np.arange(1, max_cpus + 1, dtype=np.int64)

    mem_cap = server.mem_gb * servers_needed
    values = [MEM_GRID_GB * k for k in range(1, int(mem_cap / MEM_GRID_GB) + 1)]
    g_in_server = min(g, server.gpus)
    values.append(proportional_share(server, g_in_server)[1] * servers_needed)
    if jc.dataset_gb <= mem_cap:
        values.append(jc.dataset_gb)
    values.sort()
    mem_axis: List[float] = []
    for v in values:
        if mem_axis and abs(v - mem_axis[-1]) < 1e-6:
            # collapse near-duplicates, preferring the exact dataset size so
            # the fully cached cell stays on the grid
            if abs(v - jc.dataset_gb) < abs(mem_axis[-1] - jc.dataset_gb):
                mem_axis[-1] = v
            continue
        mem_axis.append(v)
    return cpu_axis, np.array(mem_axis, dtype=np.float64)


def profile_cpu_points(
    jc: JobClass,
    g: int,
    server: ServerSpec,
    threshold: float = 0.10,
) -> Tuple[List[int], Dict[int, float], float]:
    """Bisection sampling of the CPU axis at full memory.

    Measures both endpoints, then walks midpoints: when the relative gain over
    the upper half of the bracket falls below `threshold` the search continues
    in the lower half, otherwise in the upper half. A flat end-to-end curve
    stops immediately; threshold <= 0 degenerates to an exhaustive sweep.

    Returns (sampled cpu counts ascending, {cpu: samples/s}, profiling minutes).
    """
    cpu_axis, mem_axis = build_axes(jc, g, server)
    max_cpus = int(cpu_axis[-1])
    full_mem = float(mem_axis[-1])
    measured: Dict[int, float] = {}

    def measure(c: int) -> float:
        if c not in measured:
            measured[c] = oracle_throughput(jc, g, c, full_mem, server.storage_bw)
        return measured[c]

    if threshold <= 0:
        for c in range(1, max_cpus + 1):
            measure(c)
    else:
        t_lo = measure(1)
        t_hi = measure(max_cpus)
        if max_cpus > 1 and (t_hi - t_lo) / t_lo >= threshold:
            lo, hi = 1, max_cpus
            while hi - lo > 1:
                mid = (lo + hi) // 2
                t_mid = measure(mid)
                if (measure(hi) - t_mid) / t_mid < threshold:
                    hi = mid
                else:
                    lo = mid

    sampled = sorted(measured)
    cost = len(sampled) * MINUTES_PER_SAMPLE
    return sampled, measured, cost


def fill_matrix_optimistic(
    jc: JobClass,
    g: int,
    server: ServerSpec,
    sampled: Dict[int, float],
) -> SensitivityMatrix:
    """Complete the (cpu, memory) grid from sampled full-memory throughputs.

    Unsampled CPU rows come from monotone piecewise-linear interpolation over
    the samples; each cell is then min(cpu bound, storage bound, gpu bound).
    The storage bound is purely analytical, so the memory dimension costs no
    profiling time.
    """
    if not sampled:
        raise ValueError("need at least one sampled point")
    cpu_axis, mem_axis = build_axes(jc, g, server)
    knots_c = np.array(sorted(sampled), dtype=np.float64)
    knots_t = np.array([sampled[int(c)] for c in knots_c], dtype=np.float64)

    cpu_bound = np.interp(cpu_axis.astype(np.float64), knots_c, knots_t)
    gpu_bound = g * jc.gpu_rate

    hit = np.minimum(1.0, mem_axis / jc.dataset_gb)
    disk_bound = np.full_like(mem_axis, np.inf)
    uncached = hit < 1.0
    disk_bound[uncached] = server.storage_bw * 1000.0 / (
        jc.bytes_per_sample * (1.0 - hit[uncached])
    )

    values = np.minimum(
        np.minimum(cpu_bound[:, None], disk_bound[None, :]), gpu_bound
    )
    return SensitivityMatrix(
        job_class=jc,
        gpus=g,
        cpu_axis=cpu_axis,
        mem_axis=mem_axis,
        values=values,
        sampled_cpus=tuple(int(c) for c in knots_c),
    )


def derive_demand_vector(matrix: SensitivityMatrix, eps_sat: float = EPS_SAT) -> DemandVector:
    """Minimal (c*, m*) whose estimated throughput is within eps_sat of peak."""
    peak = matrix.peak
    floor = (1.0 - eps_sat) * peak
    row_max = matrix.values[:, -1]  # monotone in memory
    c_idx = int(np.argmax(row_max >= floor))
    m_idx = int(np.argmax(matrix.values[c_idx, :] >= floor))
    return DemandVector(
        gpus=matrix.gpus,
        cpus=int(matrix.cpu_axis[c_idx]),
        mem_gb=float(matrix.mem_axis[m_idx]),
        peak_throughput=float(matrix.values[c_idx, m_idx]),
    )


def profile_job(
    jc: JobClass,
    g: int,
    server: ServerSpec,
    threshold: float = 0.10,
    eps_sat: float = EPS_SAT,
) -> Tuple[SensitivityMatrix, DemandVector, float]:
    """One-shot profiling: matrix, demand vector, and simulated cost in minutes."""
    _, measured, cost = profile_cpu_points(jc, g, server, threshold)
    matrix = fill_matrix_optimistic(jc, g, server, measured)
    demand = derive_demand_vector(matrix, eps_sat)
    return matrix, demand, cost


def export_matrix_csv(matrix: SensitivityMatrix, path: str) -> None:
    """Rows = CPU count, columns = memory GB, cells = samples/s."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cpus"] + [f"{m:g}" for m in matrix.mem_axis])
        for i, c in enumerate(matrix.cpu_axis):
            writer.writerow([int(c)] + [f"{v:.6f}" for v in matrix.values[i]])
