"""Queue ordering policies: FIFO, SRTF, LAS, FTF.

Priorities are computed at GPU-proportional throughput regardless of the job's
current (possibly boosted) allocation, so placement mechanisms never perturb
policy order. Lower key runs first.
"""

from enum import Enum
from typing import Iterable, List

from synsim.core import Job


class PolicyKind(Enum):
    FIFO = "fifo"
    SRTF = "srtf"
    LAS = "las"
    FTF = "ftf"


def remaining_minutes_proportional(job: Job) -> float:
    """Remaining service time in minutes at the job's proportional-share rate."""
    return job.remaining_samples / (job.prop_rate * 60.0)


def priority(job: Job, now: float, kind: PolicyKind) -> float:
    if kind is PolicyKind.FIFO:
        return job.arrival
    if kind is PolicyKind.SRTF:
        return remaining_minutes_proportional(job)
    if kind is PolicyKind.LAS:
        return job.attained_service  # GPU-minutes
    if kind is PolicyKind.FTF:
        # finish-time fairness: how late the job would land relative to an
        # ideal isolated proportional run; largest ratio runs first
        ideal = job.total_samples / (job.prop_rate * 60.0)
        rho = (now - job.arrival + remaining_minutes_proportional(job)) / ideal
        return -rho
    raise ValueError(f"unknown policy {kind}")


def order_queue(jobs: Iterable[Job], now: float, kind: PolicyKind) -> List[Job]:
    """Deterministic priority order; ties broken by (arrival, id)."""
    return sorted(jobs, key=lambda j: (priority(j, now, kind), j.arrival, j.id))
