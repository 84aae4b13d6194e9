"""Deterministic discrete-event engine.

One heap ordered by (time, seq) carries job arrivals and completion events;
scheduling rounds tick every round_minutes on top of it. Each round the
runnable set is recomputed, the mechanism replans the whole cluster, and
leases stick: a job whose new allocation equals its previous one keeps
running untouched, while a changed allocation costs a restart penalty of
zero progress. Completion events carry a per-job generation stamp, so any
allocation change invalidates outstanding events without heap surgery.

Progress is credited lazily: at round boundaries for running jobs, and
exactly at the completion timestamp for finishing ones (samples_done is set
to total_samples there, so per-job accounting closes exactly). Idle or
fully-leased stretches with no pending event are fast-forwarded round by
round without re-running the mechanism; the emitted rows are identical.
"""

import csv
import heapq
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    Allocation,
    ClusterSpec,
    ClusterState,
    Job,
    JobState,
    oracle_throughput,
)
from .mechanism import (
    RoundJob,
    place_greedy,
    place_proportional,
    place_tune,
    select_runnable,
)
from .optimizer import build_opt_instance, solve_ideal_ilp
from .policy import PolicyKind, order_queue
from .profiler import DemandVector, SensitivityMatrix, profile_job

MECHANISMS = ("proportional", "greedy", "tune", "opt")

_EPS = 1e-9


@dataclass
class SimConfig:
    """Knobs for one simulation run."""

    policy: PolicyKind = PolicyKind.FIFO
    mechanism: str = "tune"
    seed: int = 0  # recorded in outputs; the engine itself is deterministic
    restart_penalty_s: float = 30.0
    profiling_in_jct: bool = True
    monitor_width: int = 1000
    profile_threshold: float = 0.10

    def __post_init__(self):
        if isinstance(self.policy, str):
            self.policy = PolicyKind(self.policy)
        if self.mechanism not in MECHANISMS:
            raise ValueError(
                f"mechanism must be one of {MECHANISMS}, got {self.mechanism!r}"
            )
        if self.restart_penalty_s < 0:
            raise ValueError("restart penalty must be >= 0")
        if self.monitor_width < 1:
            raise ValueError("monitor_width must be >= 1")


@dataclass(frozen=True)
class JobRecord:
    job_id: int
    class_name: str
    task: str
    gpu_demand: int
    arrival: float
    queue_entry: float
    first_start: float
    finish: float
    jct: float
    ideal_minutes: float  # isolated run at proportional share
    restarts: int
    monitored: bool


@dataclass(frozen=True)
class UtilRow:
    round_index: int
    time_minutes: float
    gpu_util: float
    cpu_util: float
    mem_util: float
    running_jobs: int
    waiting_jobs: int
    opt_objective: Optional[float]  # ideal upper bound, opt mechanism only


@dataclass
class MetricsReport:
    policy: str
    mechanism: str
    seed: int
    avg_jct: float
    p99_jct: float
    makespan: float
    jobs: List[JobRecord] = field(default_factory=list)
    utilization: List[UtilRow] = field(default_factory=list)
    total_rounds: int = 0
    total_restarts: int = 0
    profiling_minutes: float = 0.0

    @property
    def monitored_jobs(self) -> List[JobRecord]:
        return [r for r in self.jobs if r.monitored]


# profiling results are pure functions of (class, gpus, server); cache them
# across jobs and runs, while the simulated per-job cost is still charged
_PROFILE_CACHE: Dict[tuple, Tuple[SensitivityMatrix, DemandVector, float]] = {}


def _profiled(job: Job, server, threshold: float):
    key = (
        job.class_ref.name,
        job.gpu_demand,
        server.gpus,
        server.cpus,
        server.mem_gb,
        server.storage_bw,
        threshold,
    )
    if key not in _PROFILE_CACHE:
        _PROFILE_CACHE[key] = profile_job(
            job.class_ref, job.gpu_demand, server, threshold
        )
    return _PROFILE_CACHE[key]


def allocation_rate(job: Job, alloc: Allocation, cluster: ClusterSpec) -> float:
    """Realized samples/s of an allocation: resources pool across servers."""
    bw = cluster.servers[alloc.per_server[0][0]].storage_bw
    return oracle_throughput(
        job.class_ref, job.gpu_demand, max(1, alloc.cpus), alloc.mem_gb, bw
    )


class _Engine:
    def __init__(self, trace: Sequence[Job], cluster: ClusterSpec, config: SimConfig):
        self.cluster = cluster
        self.config = config
        self.state = ClusterState(cluster)
        self.total_gpus = sum(s.gpus for s in cluster.servers)
        self.total_cpus = sum(s.cpus for s in cluster.servers)
        self.total_mem = sum(s.mem_gb for s in cluster.servers)

        # fresh mutable copies so reruns and compare() never share progress
        self.jobs: Dict[int, Job] = {}
        for j in sorted(trace, key=lambda j: (j.arrival, j.id)):
            if j.id in self.jobs:
                raise ValueError(f"trace repeats job id {j.id}")
            self.jobs[j.id] = Job(
                id=j.id,
                class_ref=j.class_ref,
                gpu_demand=j.gpu_demand,
                arrival=j.arrival,
                total_samples=j.total_samples,
                prop_rate=j.prop_rate,
            )

        self.heap: List[tuple] = []
        self.seq = 0
        self.active: List[int] = sorted(self.jobs)  # unfinished, ascending id
        self.seg: Dict[int, Tuple[float, float]] = {}  # job -> (start_min, rate_s)
        self.gen: Dict[int, int] = {jid: 0 for jid in self.jobs}
        self.restarts: Dict[int, int] = {jid: 0 for jid in self.jobs}
        self.demand: Dict[int, Optional[DemandVector]] = {}
        self.matrix: Dict[int, Optional[SensitivityMatrix]] = {}
        self.profiling_minutes = 0.0
        self.util_rows: List[UtilRow] = []
        self.total_restart_events = 0
        self.waiting_after_round = 0

        needs_profile = config.mechanism != "proportional"
        for jid, job in self.jobs.items():
            if needs_profile:
                matrix, demand, cost = _profiled(
                    job, cluster.servers[0], config.profile_threshold
                )
                self.matrix[jid] = matrix
                self.demand[jid] = demand
                self.profiling_minutes += cost
                ready = job.arrival + (cost if config.profiling_in_jct else 0.0)
            else:
                self.matrix[jid] = None
                self.demand[jid] = None
                ready = job.arrival
            job.queue_entry = ready
            self._push(ready, "arrival", jid, 0)

    def _push(self, time: float, kind: str, jid: int, stamp: int) -> None:
        heapq.heappush(self.heap, (time, self.seq, kind, jid, stamp))
        self.seq += 1

    # ------------------------------------------------------------- events --

    def _handle_completion(self, t: float, jid: int, stamp: int) -> bool:
        job = self.jobs[jid]
        if job.state is not JobState.RUNNING or self.gen[jid] != stamp:
            return False  # stale: allocation changed since this was scheduled
        start, _rate = self.seg.pop(jid)
        job.attained_service += job.gpu_demand * max(0.0, t - start)
        job.samples_done = job.total_samples  # exact close-out
        job.state = JobState.FINISHED
        job.finish = t
        self.state.release(jid)
        self.gen[jid] += 1
        return True

    def _credit_running(self, now: float) -> None:
        for jid in sorted(self.seg):
            start, rate = self.seg[jid]
            elapsed = max(0.0, now - start)
            if elapsed > 0.0:
                job = self.jobs[jid]
                job.samples_done += rate * elapsed * 60.0
                job.attained_service += job.gpu_demand * elapsed
            self.seg[jid] = (max(start, now), rate)

    # ------------------------------------------------------------- rounds --

    def _ready_jobs(self, now: float) -> List[Job]:
        out = []
        alive = []
        for jid in self.active:
            job = self.jobs[jid]
            if job.state is JobState.FINISHED:
                continue
            alive.append(jid)
            if job.queue_entry <= now + _EPS:
                out.append(job)
        self.active = alive
        return out

    def _schedule_round(self, now: float, round_idx: int) -> None:
        cfg = self.config
        ready = self._ready_jobs(now)
        ordered = order_queue(ready, now, cfg.policy)
        runnable = select_runnable(ordered, self.total_gpus)
        round_jobs = [
            RoundJob(j.id, j.gpu_demand, self.demand[j.id], self.matrix[j.id])
            for j in runnable
        ]
        prev = dict(self.state.running)

        if cfg.mechanism == "proportional":
            plan = place_proportional(round_jobs, ClusterState(self.cluster), prev)
        elif cfg.mechanism == "greedy":
            plan = place_greedy(round_jobs, ClusterState(self.cluster), prev)
        else:  # tune executes; opt additionally logs the ideal bound
            plan = place_tune(round_jobs, ClusterState(self.cluster), prev)

        opt_objective = None
        if cfg.mechanism == "opt":
            entries = [(rj.job_id, rj.gpus, rj.matrix) for rj in round_jobs]
            if entries:
                inst = build_opt_instance(entries, self.cluster)
                opt_objective = solve_ideal_ilp(inst).objective
            else:
                opt_objective = 0.0

        # tear down changed or dropped placements first
        for jid in sorted(prev):
            new = plan.allocations.get(jid)
            if new == prev[jid]:
                continue
            self.state.release(jid)
            self.gen[jid] += 1
            self.seg.pop(jid, None)
            if new is None:
                self.jobs[jid].state = JobState.QUEUED  # preempted

        pen_min = cfg.restart_penalty_s / 60.0
        for jid in sorted(plan.allocations):
            alloc = plan.allocations[jid]
            if prev.get(jid) == alloc:
                continue  # lease renewed, completion event still valid
            job = self.jobs[jid]
            self.state.apply(alloc)
            # any grant after the first run restores from a checkpoint: an
            # in-place reallocation and a resume after preemption both count
            resumed = job.first_start is not None
            if resumed:
                self.restarts[jid] += 1
                self.total_restart_events += 1
            else:
                job.first_start = now
            job.state = JobState.RUNNING
            rate = allocation_rate(job, alloc, self.cluster)
            start = now + (pen_min if resumed else 0.0)
            self.seg[jid] = (start, rate)
            t_done = start + job.remaining_samples / (rate * 60.0)
            self._push(t_done, "completion", jid, self.gen[jid])

        # feasibility invariant after every deploy
        for i in range(len(self.cluster.servers)):
            fg, fc, fm = self.state.free(i)
            assert fg >= 0 and fc >= 0 and fm >= -1e-6, (
                f"server {i} oversubscribed at round {round_idx}: "
                f"free=({fg},{fc},{fm})"
            )

        self.waiting_after_round = len(ready) - len(plan.allocations)
        self._emit_util(now, round_idx, opt_objective)

    def _emit_util(
        self, now: float, round_idx: int, opt_objective: Optional[float]
    ) -> None:
        used_g = used_c = 0
        used_m = 0.0
        for i in range(len(self.cluster.servers)):
            fg, fc, fm = self.state.free(i)
            spec = self.cluster.servers[i]
            used_g += spec.gpus - fg
            used_c += spec.cpus - fc
            used_m += spec.mem_gb - fm
        self.util_rows.append(
            UtilRow(
                round_index=round_idx,
                time_minutes=now,
                gpu_util=used_g / self.total_gpus,
                cpu_util=used_c / self.total_cpus,
                mem_util=used_m / self.total_mem,
                running_jobs=len(self.state.running),
                waiting_jobs=self.waiting_after_round,
                opt_objective=opt_objective,
            )
        )

    # --------------------------------------------------------------- main --

    def run(self) -> MetricsReport:
        cfg = self.config
        if not self.jobs:
            return MetricsReport(
                policy=cfg.policy.value,
                mechanism=cfg.mechanism,
                seed=cfg.seed,
                avg_jct=0.0,
                p99_jct=0.0,
                makespan=0.0,
            )

        round_min = self.cluster.round_minutes
        unfinished = len(self.jobs)
        ideal_total = sum(
            j.total_samples / (j.prop_rate * 60.0) for j in self.jobs.values()
        )
        last_ready = max(j.queue_entry for j in self.jobs.values())
        max_rounds = int((last_ready + 2.0 * ideal_total) / round_min) + 10_000

        next_round = 0.0
        round_idx = 0
        while unfinished:
            while self.heap and self.heap[0][0] <= next_round + _EPS:
                t, _, kind, jid, stamp = heapq.heappop(self.heap)
                if kind == "completion" and self._handle_completion(t, jid, stamp):
                    unfinished -= 1
            if not unfinished:
                break
            if round_idx > max_rounds:
                raise RuntimeError(
                    f"round cap exceeded: {round_idx} rounds, "
                    f"{unfinished} unfinished, {len(self.seg)} running, "
                    f"heap={len(self.heap)}"
                )

            now = next_round
            self._credit_running(now)
            self._schedule_round(now, round_idx)
            round_idx += 1
            next_round += round_min

            # fast-forward: with no one waiting and no event before the next
            # boundary, the round replans to the same fixed point; skip it
            carried_opt = self.util_rows[-1].opt_objective
            while (
                unfinished
                and self.waiting_after_round == 0
                and self.heap
                and self.heap[0][0] > next_round + _EPS
            ):
                now = next_round
                self._credit_running(now)
                self._emit_util(now, round_idx, carried_opt)
                round_idx += 1
                next_round += round_min

        return self._report(round_idx)

    def _report(self, rounds: int) -> MetricsReport:
        cfg = self.config
        by_rank = sorted(self.jobs.values(), key=lambda j: (j.arrival, j.id))
        n = len(by_rank)
        width = min(cfg.monitor_width, n)
        start = (n - width) // 2
        monitored = {j.id for j in by_rank[start : start + width]}

        records = []
        for job in by_rank:
            records.append(
                JobRecord(
                    job_id=job.id,
                    class_name=job.class_ref.name,
                    task=job.class_ref.task,
                    gpu_demand=job.gpu_demand,
                    arrival=job.arrival,
                    queue_entry=job.queue_entry,
                    first_start=job.first_start,
                    finish=job.finish,
                    jct=job.finish - job.arrival,
                    ideal_minutes=job.total_samples / (job.prop_rate * 60.0),
                    restarts=self.restarts[job.id],
                    monitored=job.id in monitored,
                )
            )
        jcts = [r.jct for r in records if r.monitored]
        return MetricsReport(
            policy=cfg.policy.value,
            mechanism=cfg.mechanism,
            seed=cfg.seed,
            avg_jct=float(np.mean(jcts)),
            p99_jct=float(np.percentile(jcts, 99)),
            makespan=max(r.finish for r in records),
            jobs=records,
            utilization=self.util_rows,
            total_rounds=rounds,
            total_restarts=self.total_restart_events,
            profiling_minutes=self.profiling_minutes,
        )


def run(
    trace: Sequence[Job], cluster: ClusterSpec, config: Optional[SimConfig] = None
) -> MetricsReport:
    """Simulate one trace to completion; bit-identical for identical inputs."""
    return _Engine(trace, cluster, config or SimConfig()).run()


# ----------------------------------------------------------------- compare --


def join_speedups(base: MetricsReport, variant: MetricsReport) -> Dict[int, float]:
    """Per-job speedup = baseline JCT / variant JCT over the monitored set."""
    b = {r.job_id: r for r in base.monitored_jobs}
    v = {r.job_id: r for r in variant.monitored_jobs}
    if set(b) != set(v):
        raise ValueError("reports cover different traces or monitor windows")
    for jid in b:
        if b[jid].arrival != v[jid].arrival:
            raise ValueError(f"job {jid} arrives at different times; traces differ")
    return {jid: b[jid].jct / v[jid].jct for jid in sorted(b)}


@dataclass
class ComparisonReport:
    baseline: Tuple[str, str]  # (policy, mechanism)
    reports: Dict[Tuple[str, str], MetricsReport]
    speedups: Dict[Tuple[str, str], Dict[int, float]]
    avg_jct_ratio: Dict[Tuple[str, str], float]  # baseline avg / variant avg


def compare(
    trace: Sequence[Job],
    cluster: ClusterSpec,
    variants: Sequence[Tuple[PolicyKind, str]],
    config: Optional[SimConfig] = None,
) -> ComparisonReport:
    """Run each (policy, mechanism) on the same trace against the proportional
    baseline; the baseline run is added when missing."""
    base_cfg = config or SimConfig()
    cells: List[Tuple[PolicyKind, str]] = []
    for policy, mech in variants:
        policy = PolicyKind(policy) if isinstance(policy, str) else policy
        if (policy, mech) not in cells:
            cells.append((policy, mech))
    if not cells:
        raise ValueError("no variants given")
    base_policy = cells[0][0]
    baseline_cell = (base_policy, "proportional")
    if baseline_cell not in cells:
        cells.insert(0, baseline_cell)

    reports: Dict[Tuple[str, str], MetricsReport] = {}
    for policy, mech in cells:
        cfg = SimConfig(
            policy=policy,
            mechanism=mech,
            seed=base_cfg.seed,
            restart_penalty_s=base_cfg.restart_penalty_s,
            profiling_in_jct=base_cfg.profiling_in_jct,
            monitor_width=base_cfg.monitor_width,
            profile_threshold=base_cfg.profile_threshold,
        )
        reports[(policy.value, mech)] = run(trace, cluster, cfg)

    base_key = (baseline_cell[0].value, "proportional")
    base_report = reports[base_key]
    speedups = {}
    ratios = {}
    for key, rep in reports.items():
        speedups[key] = join_speedups(base_report, rep)
        ratios[key] = base_report.avg_jct / rep.avg_jct if rep.avg_jct > 0 else math.inf
    return ComparisonReport(
        baseline=base_key, reports=reports, speedups=speedups, avg_jct_ratio=ratios
    )


# -------------------------------------------------------------- CSV output --


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


METRICS_COLUMNS = (
    "job_id",
    "class_name",
    "task",
    "gpu_demand",
    "arrival",
    "queue_entry",
    "first_start",
    "finish",
    "jct",
    "ideal_minutes",
    "restarts",
)

UTILIZATION_COLUMNS = (
    "round_index",
    "time_minutes",
    "gpu_util",
    "cpu_util",
    "mem_util",
    "running_jobs",
    "waiting_jobs",
    "opt_objective",
)

SUMMARY_COLUMNS = (
    "policy",
    "mechanism",
    "seed",
    "n_jobs",
    "monitored_jobs",
    "avg_jct",
    "p99_jct",
    "makespan",
    "total_rounds",
    "total_restarts",
    "profiling_minutes",
    "mean_gpu_util",
)


def write_metrics_csv(report: MetricsReport, path: str) -> None:
    """One row per monitored job."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_COLUMNS)
        for r in report.monitored_jobs:
            w.writerow(
                [
                    _fmt(x)
                    for x in (
                        r.job_id,
                        r.class_name,
                        r.task,
                        r.gpu_demand,
                        r.arrival,
                        r.queue_entry,
                        r.first_start,
                        r.finish,
                        r.jct,
                        r.ideal_minutes,
                        r.restarts,
                    )
                ]
            )


def write_utilization_csv(report: MetricsReport, path: str) -> None:
    """One row per scheduling round."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(UTILIZATION_COLUMNS)
        for u in report.utilization:
            w.writerow(
                [
                    _fmt(x)
                    for x in (
                        u.round_index,
                        u.time_minutes,
                        u.gpu_util,
                        u.cpu_util,
                        u.mem_util,
                        u.running_jobs,
                        u.waiting_jobs,
                        u.opt_objective,
                    )
                ]
            )


def write_summary_csv(report: MetricsReport, path: str) -> None:
    """Single-row aggregate."""
    util = report.utilization
    mean_gpu = float(np.mean([u.gpu_util for u in util])) if util else 0.0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        w.writerow(
            [
                _fmt(x)
                for x in (
                    report.policy,
                    report.mechanism,
                    report.seed,
                    len(report.jobs),
                    len(report.monitored_jobs),
                    report.avg_jct,
                    report.p99_jct,
                    report.makespan,
                    report.total_rounds,
                    report.total_restarts,
                    report.profiling_minutes,
                    mean_gpu,
                )
            ]
        )
