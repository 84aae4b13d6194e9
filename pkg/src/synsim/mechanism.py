"""Per-round placement mechanisms: proportional, greedy, tune.

Every round the caller re-plans all runnable jobs onto a state snapshot. The
mechanisms never mutate the snapshot they are handed; they work on a copy and
return a RoundPlan whose allocations the caller applies.

Placement rules:
- proportional: GPU-proportional CPU/memory everywhere; always succeeds.
- greedy: first-fit (by server index) of the full demand vector; jobs that do
  not fit anywhere are skipped for the round, GPUs idle.
- tune: best-fit decreasing with a two-stage repair (downgrade self to
  proportional, then downgrade resident over-proportional victims), followed by
  marginal-gain redistribution of leftover CPU/memory. Never skips a job and
  never leaves a job below its proportional-share throughput.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from synsim.core import (
    Allocation,
    ClusterState,
    Job,
    PlacementError,
    proportional_share,
)
from synsim.profiler import DemandVector, SensitivityMatrix

_EPS = 1e-9

# A memory trim is only taken when the storage bound at the smaller size still
# clears the estimated value by this margin. The estimate's CPU axis is
# interpolated (worst case off by about the profiling threshold), so the
# margin keeps trims from ever cutting true throughput.
_TRIM_MARGIN = 0.15


@dataclass
class RoundJob:
    """What a mechanism needs to know about one runnable job."""

    job_id: int
    gpus: int
    demand: Optional[DemandVector] = None
    matrix: Optional[SensitivityMatrix] = None


@dataclass
class RoundPlan:
    allocations: Dict[int, Allocation] = field(default_factory=dict)
    skipped: List[int] = field(default_factory=list)
    downgrades: List[int] = field(default_factory=list)


def select_runnable(ordered_jobs: Sequence[Job], free_gpus: int) -> List[Job]:
    """Admit jobs in priority order while their GPU demand still fits.

    CPU and memory are ignored here; they are fungible and the mechanism makes
    them fit. Jobs whose demand exceeds the remaining unclaimed GPUs wait.
    """
    runnable = []
    remaining = free_gpus
    for job in ordered_jobs:
        if remaining <= 0:
            break
        if job.gpu_demand <= remaining:
            runnable.append(job)
            remaining -= job.gpu_demand
    return runnable


# ---------------------------------------------------------------- placement --


def _fits(state: ClusterState, alloc: Allocation) -> bool:
    for idx, g, c, m in alloc.per_server:
        fg, fc, fm = state.free(idx)
        if g > fg or c > fc or m > fm + _EPS:
            return False
    return True


def _best_fit_server(state: ClusterState, g: int, c: int, m: float) -> Optional[int]:
    """Feasible server with the least free resources: ranked by free GPUs, then
    CPUs, then memory; on full ties the lowest index goes last."""
    best = None
    best_key = None
    for idx in range(len(state.cluster.servers)):
        fg, fc, fm = state.free(idx)
        if fg >= g and fc >= c and fm >= m - _EPS:
            key = (fg, fc, fm, -idx)
            if best_key is None or key < best_key:
                best, best_key = idx, key
    return best


def _first_fit_server(state: ClusterState, g: int, c: int, m: float) -> Optional[int]:
    for idx in range(len(state.cluster.servers)):
        fg, fc, fm = state.free(idx)
        if fg >= g and fc >= c and fm >= m - _EPS:
            return idx
    return None


def _gpu_split_set(state: ClusterState, g: int) -> Optional[List[Tuple[int, int]]]:
    """Minimal server set covering g GPUs: largest free-GPU counts first."""
    order = sorted(
        range(len(state.cluster.servers)),
        key=lambda i: (-state.free(i)[0], i),
    )
    assignment = []
    need = g
    for idx in order:
        fg = state.free(idx)[0]
        if fg <= 0:
            continue
        take = min(fg, need)
        assignment.append((idx, take))
        need -= take
        if need == 0:
            return assignment
    return None


def _prop_entries(state: ClusterState, assignment: Iterable[Tuple[int, int]]):
    entries = []
    for idx, gi in assignment:
        pc, pm = proportional_share(state.cluster.servers[idx], gi)
        entries.append((idx, gi, pc, pm))
    return entries


def _demand_entries(assignment: List[Tuple[int, int]], g: int, c_star: int, m_star: float):
    # integer CPU split: floor(c/g) per GPU, remainder cores round-robin over
    # servers in ascending index; memory split exactly proportionally
    assignment = sorted(assignment)
    base = c_star // g
    rem = c_star - base * g
    cpus = {idx: base * gi for idx, gi in assignment}
    while rem > 0:
        for idx, _ in assignment:
            cpus[idx] += 1
            rem -= 1
            if rem == 0:
                break
    return [(idx, gi, cpus[idx], m_star * gi / g) for idx, gi in assignment]


def _try_place(state: ClusterState, plan: RoundPlan, alloc: Allocation) -> bool:
    if not _fits(state, alloc):
        return False
    state.apply(alloc)
    plan.allocations[alloc.job_id] = alloc
    return True


def _sticky_reuse(state, plan, prev, job_id) -> bool:
    if not prev or job_id not in prev:
        return False
    return _try_place(state, plan, prev[job_id])


# ------------------------------------------------------------- proportional --


def place_proportional(
    runnable: Sequence[RoundJob],
    state: ClusterState,
    prev: Optional[Dict[int, Allocation]] = None,
) -> RoundPlan:
    """GPU-proportional shares; consolidate when possible, split proportionally
    across the minimal server set otherwise. Always succeeds for a runnable set.

    Lease renewals run as a first pass so a newcomer can never displace a
    resident whose placement is still valid."""
    state = state.copy()
    plan = RoundPlan()
    fresh = [
        rj for rj in runnable if not _sticky_reuse(state, plan, prev, rj.job_id)
    ]
    for rj in fresh:
        placed = False
        idx = _best_fit_server(state, rj.gpus, 0, 0.0)
        if idx is not None:
            entries = _prop_entries(state, [(idx, rj.gpus)])
            placed = _try_place(state, plan, Allocation(rj.job_id, tuple(entries)))
        if not placed:
            assignment = _gpu_split_set(state, rj.gpus)
            if assignment is not None:
                entries = _prop_entries(state, assignment)
                placed = _try_place(state, plan, Allocation(rj.job_id, tuple(entries)))
        if not placed:
            raise PlacementError(
                f"proportional placement failed for job {rj.job_id} "
                f"(runnable set exceeds cluster GPUs?)"
            )
    return plan


# ------------------------------------------------------------------- greedy --


def place_greedy(
    runnable: Sequence[RoundJob],
    state: ClusterState,
    prev: Optional[Dict[int, Allocation]] = None,
) -> RoundPlan:
    """First-fit of full demand vectors, in policy order; no fit means skipped.
    Lease renewals run first, then fresh placements."""
    state = state.copy()
    plan = RoundPlan()
    for rj in runnable:
        if rj.demand is None:
            raise ValueError(f"job {rj.job_id} has no demand vector")
    fresh = [
        rj for rj in runnable if not _sticky_reuse(state, plan, prev, rj.job_id)
    ]
    for rj in fresh:
        d = rj.demand
        placed = False
        idx = _first_fit_server(state, rj.gpus, d.cpus, d.mem_gb)
        if idx is not None:
            alloc = Allocation(rj.job_id, ((idx, rj.gpus, d.cpus, d.mem_gb),))
            placed = _try_place(state, plan, alloc)
        if not placed:
            assignment = _gpu_split_set(state, rj.gpus)
            if assignment is not None and len(assignment) > 1:
                entries = _demand_entries(assignment, rj.gpus, d.cpus, d.mem_gb)
                placed = _try_place(state, plan, Allocation(rj.job_id, tuple(entries)))
        if not placed:
            plan.skipped.append(rj.job_id)
    return plan


# --------------------------------------------------------------------- tune --


def _storage_bound(matrix: SensitivityMatrix, m: float, bw: float) -> float:
    jc = matrix.job_class
    h = min(1.0, m / jc.dataset_gb)
    if h >= 1.0:
        return math.inf
    return bw * 1000.0 / (jc.bytes_per_sample * (1.0 - h))


def _trimmed_prop_mem(matrix: SensitivityMatrix, c_prop: int, m_prop: float,
                      bw: float) -> float:
    """Smallest grid memory that keeps a proportional placement's throughput.

    Proportional memory is often far beyond what the job can use (the storage
    bound is analytic, so this is exact up to the CPU estimate, covered by
    _TRIM_MARGIN). Returning m_prop means no trim."""
    need = matrix.value_at(c_prop, m_prop) * (1.0 + _TRIM_MARGIN)
    for m in matrix.mem_axis:
        if m >= m_prop:
            break
        if _storage_bound(matrix, float(m), bw) >= need:
            return float(m)
    return m_prop


def _downgrade_to_prop(state: ClusterState, plan: RoundPlan, job_id: int,
                       rj: Optional[RoundJob] = None) -> None:
    """Shrink a placed job to proportional share on its current servers."""
    old = state.release(job_id)
    entries = _prop_entries(state, [(idx, g) for idx, g, _, _ in old.per_server])
    if rj is not None and rj.matrix is not None and len(entries) == 1:
        idx0, g0, c0, m0 = entries[0]
        bw = state.cluster.servers[idx0].storage_bw
        entries[0] = (idx0, g0, c0, _trimmed_prop_mem(rj.matrix, c0, m0, bw))
    new = Allocation(job_id, tuple(entries))
    state.apply(new)
    plan.allocations[job_id] = new
    if job_id not in plan.downgrades:
        plan.downgrades.append(job_id)


def _victims_on_server(state: ClusterState, plan: RoundPlan, idx: int,
                       need_c: int, need_m: float,
                       jobs: Optional[Dict[int, RoundJob]],
                       ) -> Tuple[Optional[List[int]], float]:
    """Resident set whose downgrade to proportional frees enough.

    Picked cheapest first: estimated throughput lost per freed core, so a
    flat-rate job coasting at full demand is drained before one whose boost
    is still paying. Jobs without a matrix price as infinitely expensive and
    go last. Returns (victims, total estimated loss), or (None, 0.0)."""
    spec = state.cluster.servers[idx]
    residents = []
    for job_id, (gi, ci, mi) in state.jobs_on_server(idx).items():
        if job_id not in plan.allocations:
            continue  # only jobs planned this round are downgradable
        pc, pm = proportional_share(spec, gi)
        rj = jobs.get(job_id) if jobs else None
        if rj is not None and rj.matrix is not None and plan.allocations[job_id].consolidated:
            pm = _trimmed_prop_mem(rj.matrix, pc, pm, spec.storage_bw)
            loss = rj.matrix.value_at(ci, mi) - rj.matrix.value_at(pc, pm)
        else:
            loss = math.inf
        sc, sm = ci - pc, mi - pm
        if sc > 0 or sm > _EPS:
            rate = loss / max(1, sc)
            residents.append((rate, -sc, -sm, job_id, sc, sm, loss))
    residents.sort(key=lambda t: t[:4])
    chosen: List[int] = []
    freed_c, freed_m, total_loss = 0, 0.0, 0.0
    for rate, _, _, job_id, sc, sm, loss in residents:
        if freed_c >= need_c and freed_m >= need_m - _EPS:
            break
        chosen.append(job_id)
        freed_c += max(0, sc)
        freed_m += max(0.0, sm)
        total_loss += loss
    if freed_c >= need_c and freed_m >= need_m - _EPS:
        return chosen, total_loss
    return None, 0.0


def _place_with_victims(state: ClusterState, plan: RoundPlan, rj: RoundJob,
                        assignment: List[Tuple[int, int]],
                        entries: List[Tuple[int, int, int, float]],
                        jobs: Optional[Dict[int, RoundJob]] = None,
                        max_loss: Optional[float] = None) -> bool:
    """Free CPU/memory for `entries` by downgrading over-proportional residents.

    With `max_loss` set, the placement is abandoned when the victims'
    estimated throughput loss exceeds it (used when the newcomer has a
    cheaper fallback, so taking more than it adds would be a net waste)."""
    victims_total: List[int] = []
    loss_total = 0.0
    for idx, gi, ci, mi in entries:
        fg, fc, fm = state.free(idx)
        if fg < gi:
            return False
        need_c = max(0, ci - fc)
        need_m = max(0.0, mi - fm)
        if need_c == 0 and need_m <= _EPS:
            continue
        victims, loss = _victims_on_server(state, plan, idx, need_c, need_m, jobs)
        if victims is None:
            return False
        victims_total.extend(victims)
        loss_total += loss
    # strict: a zero-net trade would just rotate the same cores between
    # arrivals, churning restarts for nothing
    if max_loss is not None and loss_total >= max_loss - _EPS:
        return False
    for job_id in victims_total:
        _downgrade_to_prop(state, plan, job_id, jobs.get(job_id) if jobs else None)
    return _try_place(state, plan, Allocation(rj.job_id, tuple(entries)))


def place_tune(
    runnable: Sequence[RoundJob],
    state: ClusterState,
    prev: Optional[Dict[int, Allocation]] = None,
) -> RoundPlan:
    """Best-fit decreasing with proportional-downgrade repair.

    Guarantees: every runnable job is placed, and every placed job's allocation
    is worth at least its proportional-share throughput (either it got >= its
    saturating demand, or it sits exactly at proportional share, or its demand
    was below proportional to begin with because its estimated curve is flat
    there).

    Lease renewals run as a first pass (keeping residents pinned), then the
    remaining jobs are placed best-fit in demand-descending order.
    """
    state = state.copy()
    plan = RoundPlan()
    order = sorted(
        runnable,
        key=lambda rj: (
            -rj.gpus,
            -(rj.demand.cpus if rj.demand else 0),
            -(rj.demand.mem_gb if rj.demand else 0.0),
            rj.job_id,
        ),
    )
    for rj in order:
        if rj.demand is None:
            raise ValueError(f"job {rj.job_id} has no demand vector")
    by_id = {rj.job_id: rj for rj in runnable}
    fresh = [rj for rj in order if not _sticky_reuse(state, plan, prev, rj.job_id)]
    for rj in fresh:
        if _place_fresh_tune(state, plan, rj, by_id):
            continue
        raise AssertionError(
            f"tune could not place job {rj.job_id}; the proportional repair "
            f"path must never fail"
        )
    _promote_downgrades(state, plan, {rj.job_id: rj for rj in fresh})
    _redistribute_surplus(state, plan, by_id)
    return plan


def _place_fresh_tune(state: ClusterState, plan: RoundPlan, rj: RoundJob,
                      jobs: Optional[Dict[int, RoundJob]] = None) -> bool:
    d = rj.demand
    # stage 0: best-fit at full demand
    idx = _best_fit_server(state, rj.gpus, d.cpus, d.mem_gb)
    if idx is not None:
        return _try_place(
            state, plan, Allocation(rj.job_id, ((idx, rj.gpus, d.cpus, d.mem_gb),))
        )
    assignment = None
    if rj.gpus > max(s.gpus for s in state.cluster.servers):
        assignment = _gpu_split_set(state, rj.gpus)
        if assignment is not None:
            entries = _demand_entries(assignment, rj.gpus, d.cpus, d.mem_gb)
            if _try_place(state, plan, Allocation(rj.job_id, tuple(entries))):
                return True

    # stage 0.5: full demand on one server by shrinking over-share residents.
    # Floors stay at the proportional cell so nobody's guarantee moves, and
    # the claim is only taken where the victims' estimated loss is smaller
    # than what the newcomer gains over settling for its own share.
    if rj.matrix is not None:
        for idx in range(len(state.cluster.servers)):
            fg, fc, fm = state.free(idx)
            if fg < rj.gpus:
                continue
            spec = state.cluster.servers[idx]
            pc, pm = proportional_share(spec, rj.gpus)
            pm = _trimmed_prop_mem(rj.matrix, pc, pm, spec.storage_bw)
            gain = rj.matrix.value_at(d.cpus, d.mem_gb) - rj.matrix.value_at(pc, pm)
            if gain <= _EPS:
                break
            if _place_with_victims(state, plan, rj, [(idx, rj.gpus)],
                                   [(idx, rj.gpus, d.cpus, d.mem_gb)], jobs,
                                   max_loss=gain):
                return True

    # stage 1: downgrade self to proportional share and retry
    if assignment is None:
        assignment = _gpu_split_set(state, rj.gpus)
    if assignment is None:
        return False  # not enough free GPUs anywhere; caller asserts
    prop = _prop_entries(state, assignment)
    exceeds_prop = d.cpus > sum(e[2] for e in prop) or d.mem_gb > sum(e[3] for e in prop) + _EPS
    if exceeds_prop:
        if len(assignment) == 1:
            pc, pm = prop[0][2], prop[0][3]
            if rj.matrix is not None:
                bw = state.cluster.servers[assignment[0][0]].storage_bw
                pm = _trimmed_prop_mem(rj.matrix, pc, pm, bw)
            idx = _best_fit_server(state, rj.gpus, pc, pm)
            if idx is not None:
                spec = state.cluster.servers[idx]
                pc, _ = proportional_share(spec, rj.gpus)
                alloc = Allocation(rj.job_id, ((idx, rj.gpus, pc, pm),))
                if _try_place(state, plan, alloc):
                    plan.downgrades.append(rj.job_id)
                    return True
        else:
            if _try_place(state, plan, Allocation(rj.job_id, tuple(prop))):
                plan.downgrades.append(rj.job_id)
                return True

    # stage 2: make room by downgrading over-proportional residents
    entries = (
        list(prop)
        if exceeds_prop
        else _demand_entries(assignment, rj.gpus, d.cpus, d.mem_gb)
    )
    if exceeds_prop and len(entries) == 1 and rj.matrix is not None:
        idx0, g0, c0, m0 = entries[0]
        bw = state.cluster.servers[idx0].storage_bw
        entries[0] = (idx0, g0, c0, _trimmed_prop_mem(rj.matrix, c0, m0, bw))
    if _place_with_victims(state, plan, rj, assignment, entries, jobs):
        if exceeds_prop and rj.job_id not in plan.downgrades:
            plan.downgrades.append(rj.job_id)
        return True
    return False


def _promote_downgrades(state: ClusterState, plan: RoundPlan,
                        fresh_jobs: Dict[int, RoundJob]) -> None:
    """Retry full demand for freshly downgraded jobs.

    Jobs placed later in the round are smaller, so by the end of the pass a
    server (possibly the job's own, once its share is released) can have room
    that did not exist when the downgrade happened. Residents are left alone:
    moving them would cost a restart."""
    for job_id in list(plan.downgrades):
        rj = fresh_jobs.get(job_id)
        if rj is None:
            continue
        d = rj.demand
        old = state.release(job_id)
        idx = _best_fit_server(state, rj.gpus, d.cpus, d.mem_gb)
        placed = False
        if idx is not None:
            alloc = Allocation(job_id, ((idx, rj.gpus, d.cpus, d.mem_gb),))
            placed = _try_place(state, plan, alloc)
        if placed:
            plan.downgrades.remove(job_id)
        else:
            state.apply(old)
            plan.allocations[job_id] = old


def _redistribute_surplus(state: ClusterState, plan: RoundPlan,
                          jobs: Dict[int, RoundJob]) -> None:
    """Rebalance leftover CPU/memory across placed jobs.

    Alternates two moves until neither applies: a grow move that hands free
    resources to the job with the best reachable grid cell, and an exchange
    move that shrinks one over-share job so a neighbor on the same server
    can put the freed cores to better use. A job's grow candidate depends
    only on its own cell and its server's surplus, and a server's exchange
    candidate only on its own residents, so each commit invalidates one
    server and everything else is served from cache."""
    ids: List[int] = []
    jobs_on: Dict[int, List[int]] = {}
    for job_id in sorted(plan.allocations):
        alloc = plan.allocations[job_id]
        if not alloc.consolidated:
            continue
        rj = jobs.get(job_id)
        if rj is None or rj.matrix is None:
            continue
        ids.append(job_id)
        jobs_on.setdefault(alloc.per_server[0][0], []).append(job_id)

    grow_cand: Dict[int, Optional[tuple]] = {}
    exch_cand: Dict[int, Optional[tuple]] = {}
    dirty_jobs: List[int] = ids
    dirty_servers: List[int] = sorted(jobs_on)

    while True:
        # grow to a fixed point
        while True:
            for job_id in dirty_jobs:
                grow_cand[job_id] = _grow_candidate(state, plan, jobs, job_id)
            dirty_jobs = []
            best = None
            for job_id in ids:
                cand = grow_cand[job_id]
                if cand is not None and (best is None or _better(cand, best)):
                    best = cand
            if best is None:
                break
            job_id, idx, g, new_c, new_m = best[4:]
            state.release(job_id)
            new = Allocation(job_id, ((idx, g, new_c, new_m),))
            state.apply(new)
            plan.allocations[job_id] = new
            dirty_jobs = jobs_on[idx]
            if idx not in dirty_servers:
                dirty_servers.append(idx)
        # one exchange, then grow again to mop up any remainder
        for idx in dirty_servers:
            exch_cand[idx] = _exchange_candidate(state, plan, jobs,
                                                 jobs_on[idx], idx)
        dirty_servers = []
        best = None
        for idx in sorted(exch_cand):
            cand = exch_cand[idx]
            if cand is not None and (best is None or _exchange_better(cand, best)):
                best = cand
        if best is None:
            return
        _, _, donor_id, recv_id, (pc, pm), (c3, m3) = best
        d_old = state.release(donor_id)
        idx, g = d_old.per_server[0][0], d_old.per_server[0][1]
        new_d = Allocation(donor_id, ((idx, g, pc, pm),))
        state.apply(new_d)
        plan.allocations[donor_id] = new_d
        r_old = state.release(recv_id)
        g2 = r_old.per_server[0][1]
        new_r = Allocation(recv_id, ((idx, g2, c3, m3),))
        state.apply(new_r)
        plan.allocations[recv_id] = new_r
        dirty_jobs = jobs_on[idx]
        dirty_servers = [idx]


def _grow_candidate(state: ClusterState, plan: RoundPlan,
                    jobs: Dict[int, RoundJob], job_id: int) -> Optional[tuple]:
    """Best whole grid cell this job can reach within its server's surplus.

    Ranked by estimated gain per CPU consumed. Scanning cells instead of
    single steps matters for disk-bound jobs: one more core or one memory
    step alone often pays nothing until both move together, so a flat-rate
    job would otherwise soak up every core the plateaued one needs more.
    Only consolidated jobs grow: feeding a split job would break per-server
    proportionality."""
    idx, g, c, m = plan.allocations[job_id].per_server[0]
    fg, fc, fm = state.free(idx)
    matrix = jobs[job_id].matrix
    mem_vals = matrix.mem_steps
    here = matrix.value_at(c, m)
    best = None  # (rate, gain, dc, dm, job_id, idx, g, c2, m2)
    c_hi = min(matrix.cpu_top, c + fc)
    for c2 in range(c, c_hi + 1):
        vrow = matrix.row(c2)
        for j, m2 in enumerate(mem_vals):
            if m2 < m - _EPS:
                continue
            if m2 - m > fm + _EPS:
                break
            if c2 == c and m2 - m <= _EPS:
                continue
            gain = vrow[j] - here
            if gain <= _EPS:
                continue
            dc = c2 - c
            cand = (gain / max(1, dc), gain, dc, m2 - m,
                    job_id, idx, g, c2, m2)
            if best is None or _better(cand, best):
                best = cand
    return best


def _better(cand, best) -> bool:
    # higher gain per core, then higher gain, then fewer cores, then less
    # memory, then lower job id
    if abs(cand[0] - best[0]) > _EPS:
        return cand[0] > best[0]
    if abs(cand[1] - best[1]) > _EPS:
        return cand[1] > best[1]
    if cand[2] != best[2]:
        return cand[2] < best[2]
    if abs(cand[3] - best[3]) > _EPS:
        return cand[3] < best[3]
    return cand[4] < best[4]


def _exchange_candidate(state: ClusterState, plan: RoundPlan,
                        jobs: Dict[int, RoundJob], ids: List[int],
                        idx: int) -> Optional[tuple]:
    """Best shrink-one-grow-another trade among one server's residents.

    The grow pass cannot move resources between jobs, so a flat-rate job
    that landed at full demand early keeps cores a later CPU- or disk-bound
    arrival on the same server would use far better. The donor drops to its
    trimmed proportional cell or gives up cores one at a time, the receiver
    takes the freed room plus whatever was already loose, and the caller
    re-runs the grow pass afterwards. Donors never fall below the
    proportional floor, so the throughput guarantee is untouched."""
    if len(ids) < 2:
        return None
    spec = state.cluster.servers[idx]
    fg, fc, fm = state.free(idx)
    donors = []
    for job_id in ids:
        _, g, c, m = plan.allocations[job_id].per_server[0]
        matrix = jobs[job_id].matrix
        pc, pm = proportional_share(spec, g)
        pm = _trimmed_prop_mem(matrix, pc, pm, spec.storage_bw)
        if c <= pc or pm - m > fm + _EPS:
            continue
        here = matrix.value_at(c, m)
        # two ways to donate: drop to the floor (frees the most, for a
        # receiver stuck before a plateau jump), or give up a single core
        # at current memory (cheap marginal trade, repeated as long as it
        # keeps paying)
        loss = here - matrix.value_at(pc, pm)
        donors.append((job_id, c - pc, m - pm, loss, pc, pm))
        step_loss = here - matrix.value_at(c - 1, m)
        donors.append((job_id, 1, 0.0, step_loss, c - 1, m))
    best = None  # (net, gain, donor_id, recv_id, donor_cell, recv_cell)
    for donor_id, dc, dm, loss, pc, pm in donors:
        budget_c, budget_m = fc + dc, fm + dm
        for recv_id in ids:
            if recv_id == donor_id:
                continue
            matrix = jobs[recv_id].matrix
            _, g2, c2, m2 = plan.allocations[recv_id].per_server[0]
            here = matrix.value_at(c2, m2)
            mem_vals = matrix.mem_steps
            c_hi = min(matrix.cpu_top, c2 + budget_c)
            for c3 in range(c2, c_hi + 1):
                vrow = matrix.row(c3)
                for j, m3 in enumerate(mem_vals):
                    if m3 < m2 - _EPS:
                        continue
                    if m3 - m2 > budget_m + _EPS:
                        break
                    gain = vrow[j] - here
                    net = gain - loss
                    if net <= _EPS:
                        continue
                    cand = (net, gain, donor_id, recv_id, (pc, pm), (c3, m3))
                    if best is None or _exchange_better(cand, best):
                        best = cand
    return best


def _exchange_better(cand, best) -> bool:
    # higher net first, then higher receiver gain, then lower job ids
    if abs(cand[0] - best[0]) > _EPS:
        return cand[0] > best[0]
    if abs(cand[1] - best[1]) > _EPS:
        return cand[1] > best[1]
    return (cand[2], cand[3]) < (best[2], best[3])
