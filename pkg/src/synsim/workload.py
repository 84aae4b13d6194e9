"""Trace generation and ingestion.

A trace is a list of jobs with arrival time, model class, GPU demand, and a
work budget in samples. Durations follow a log-uniform mixture: the job runs
10^x minutes at its GPU-proportional share, with x drawn uniformly from
[1.5, 3] with probability 0.8 and from [3, 4] otherwise. Dynamic traces use
Poisson arrivals (exponential inter-arrival, mean 60/lambda minutes); static
traces put every arrival at t=0.

Random draws happen in a fixed order (inter-arrival factors first, then
durations, tasks, classes, GPU demands), so traces generated from the same
seed share job bodies across arrival rates: sweeping lambda only rescales
the arrival axis.
"""

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import Job, JobClass, ServerSpec, proportional_rate
from .presets import JOB_CLASSES, reference_server

TASK_NAMES = ("image", "language", "speech")

# grouped once, preserving preset declaration order within each task
TASK_CLASSES: Dict[str, Tuple[JobClass, ...]] = {
    task: tuple(jc for jc in JOB_CLASSES.values() if jc.task == task)
    for task in TASK_NAMES
}

DEFAULT_GPU_DIST: Mapping[int, float] = {1: 0.70, 2: 0.10, 4: 0.10, 8: 0.05, 16: 0.05}

# (weight, x_lo, x_hi) components of the log10-duration mixture
DEFAULT_DURATION_MIXTURE: Tuple[Tuple[float, float, float], ...] = (
    (0.8, 1.5, 3.0),
    (0.2, 3.0, 4.0),
)


class TraceFormatError(ValueError):
    """A trace file failed validation; the message carries the line number."""


@dataclass(frozen=True)
class TraceSpec:
    """Parameters of a synthetic trace."""

    mode: str = "dynamic"  # "dynamic" (Poisson arrivals) or "static" (all at t=0)
    n_jobs: int = 100
    lam: float = 9.0  # jobs/hour, dynamic mode only
    split: Tuple[float, float, float] = (20.0, 70.0, 10.0)  # image/language/speech %
    gpu_demand_dist: Mapping[int, float] = field(
        default_factory=lambda: dict(DEFAULT_GPU_DIST)
    )
    duration_mixture: Tuple[Tuple[float, float, float], ...] = DEFAULT_DURATION_MIXTURE
    seed: int = 0
    server: ServerSpec = field(default_factory=reference_server)

    def __post_init__(self):
        if self.mode not in ("dynamic", "static"):
            raise ValueError(f"mode must be dynamic or static, got {self.mode!r}")
        if self.n_jobs < 0:
            raise ValueError("n_jobs must be >= 0")
        if self.mode == "dynamic" and self.lam <= 0:
            raise ValueError("lambda must be > 0 for dynamic traces")
        if len(self.split) != 3 or any(p < 0 for p in self.split):
            raise ValueError("split needs three non-negative percentages")
        if abs(sum(self.split) - 100.0) > 1e-9:
            raise ValueError(f"split must sum to 100, got {sum(self.split)}")
        for g, p in self.gpu_demand_dist.items():
            if g not in (1, 2, 4, 8, 16) or p < 0:
                raise ValueError(f"bad gpu demand entry {g}: {p}")
        if abs(sum(self.gpu_demand_dist.values()) - 1.0) > 1e-9:
            raise ValueError("gpu demand probabilities must sum to 1")
        if abs(sum(w for w, _, _ in self.duration_mixture) - 1.0) > 1e-9:
            raise ValueError("duration mixture weights must sum to 1")


def _pick(cum: np.ndarray, u: float) -> int:
    return int(np.searchsorted(cum, u, side="right"))


def gen_trace(spec: TraceSpec) -> List[Job]:
    """Generate a seeded trace; same spec gives a bit-identical job list."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_jobs

    # fixed draw order; static mode still burns the arrival draws so that the
    # job bodies match the dynamic trace of the same seed
    gaps = rng.exponential(1.0, n)
    comp_u = rng.random(n)
    comp_x = [rng.uniform(lo, hi, n) for _, lo, hi in spec.duration_mixture]
    task_u = rng.random(n)
    class_u = rng.random(n)
    gpu_u = rng.random(n)

    if spec.mode == "static":
        arrivals = np.zeros(n)
    else:
        arrivals = np.cumsum(gaps) * (60.0 / spec.lam)

    comp_cum = np.cumsum([w for w, _, _ in spec.duration_mixture])
    task_cum = np.cumsum([p / 100.0 for p in spec.split])
    gpu_items = sorted(spec.gpu_demand_dist.items())
    gpu_cum = np.cumsum([p for _, p in gpu_items])

    jobs = []
    for i in range(n):
        x = comp_x[_pick(comp_cum, comp_u[i])][i]
        duration_min = 10.0 ** x
        task = TASK_NAMES[_pick(task_cum, task_u[i])]
        classes = TASK_CLASSES[task]
        jc = classes[int(class_u[i] * len(classes))]
        g = gpu_items[_pick(gpu_cum, gpu_u[i])][0]
        rate = proportional_rate(jc, g, spec.server)
        jobs.append(
            Job(
                id=i,
                class_ref=jc,
                gpu_demand=g,
                arrival=float(arrivals[i]),
                total_samples=float(duration_min * 60.0 * rate),
                prop_rate=rate,
            )
        )
    return jobs


_COLUMNS = (
    "job_id",
    "arrival_minutes",
    "gpu_demand",
    "duration_minutes",
    "task",
    "class_name",
    "total_samples",
)
_REQUIRED = ("job_id", "arrival_minutes", "gpu_demand", "duration_minutes")


def save_trace(trace: Sequence[Job], path: str) -> None:
    """Write a trace as CSV; floats keep full precision for exact round-trips."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_COLUMNS)
        for job in trace:
            duration = job.total_samples / (60.0 * job.prop_rate)
            writer.writerow(
                [
                    job.id,
                    repr(float(job.arrival)),
                    job.gpu_demand,
                    repr(float(duration)),
                    job.class_ref.task,
                    job.class_ref.name,
                    repr(float(job.total_samples)),
                ]
            )


def load_trace(
    path: str,
    split: Tuple[float, float, float] = (20.0, 70.0, 10.0),
    seed: int = 0,
    server: Optional[ServerSpec] = None,
) -> List[Job]:
    """Parse a trace CSV, rejecting malformed rows with their line numbers.

    Rows missing the optional task/class columns get a class assigned from
    `split` with a seeded draw. The duration column is the runtime at the
    GPU-proportional share; a total_samples column, when present, is taken
    verbatim so saved traces reload bit-identically.
    """
    server = server or reference_server()
    rng = np.random.default_rng(seed)
    task_cum = np.cumsum([p / 100.0 for p in split])
    jobs: List[Job] = []
    seen_ids = set()

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in _REQUIRED if c not in header]
        if missing:
            raise TraceFormatError(f"line 1: missing required columns {missing}")

        for row in reader:
            line = reader.line_num
            try:
                job_id = int(row["job_id"])
                arrival = float(row["arrival_minutes"])
                g = int(row["gpu_demand"])
                duration = float(row["duration_minutes"])
            except (TypeError, ValueError) as exc:
                raise TraceFormatError(f"line {line}: unparseable field ({exc})")
            if job_id in seen_ids:
                raise TraceFormatError(f"line {line}: duplicate job_id {job_id}")
            if arrival < 0:
                raise TraceFormatError(f"line {line}: negative arrival {arrival}")
            if g not in (1, 2, 4, 8, 16):
                raise TraceFormatError(f"line {line}: gpu_demand {g} not in 1/2/4/8/16")
            if duration <= 0:
                raise TraceFormatError(f"line {line}: duration must be > 0")

            task = (row.get("task") or "").strip()
            class_name = (row.get("class_name") or "").strip()
            if class_name:
                if class_name not in JOB_CLASSES:
                    raise TraceFormatError(f"line {line}: unknown class {class_name!r}")
                jc = JOB_CLASSES[class_name]
                if task and jc.task != task:
                    raise TraceFormatError(
                        f"line {line}: class {class_name} is a {jc.task} model, not {task}"
                    )
            else:
                if task:
                    if task not in TASK_NAMES:
                        raise TraceFormatError(f"line {line}: unknown task {task!r}")
                else:
                    task = TASK_NAMES[_pick(task_cum, float(rng.random()))]
                classes = TASK_CLASSES[task]
                jc = classes[int(rng.random() * len(classes))]

            rate = proportional_rate(jc, g, server)
            raw_total = (row.get("total_samples") or "").strip()
            total = float(raw_total) if raw_total else duration * 60.0 * rate
            if total <= 0:
                raise TraceFormatError(f"line {line}: total_samples must be > 0")
            seen_ids.add(job_id)
            jobs.append(
                Job(
                    id=job_id,
                    class_ref=jc,
                    gpu_demand=g,
                    arrival=arrival,
                    total_samples=total,
                    prop_rate=rate,
                )
            )
    return jobs
