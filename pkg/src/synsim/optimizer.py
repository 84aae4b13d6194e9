"""Optimal-bound solvers for a scheduling round.

The ideal ILP treats the cluster as one pooled super-machine: each job picks
exactly one (cpu, memory) grid cell from its sensitivity matrix, the chosen
cell must be worth at least the job's GPU-proportional value, and the summed
picks must fit total CPU and memory. Solved exactly by depth-first
branch-and-bound with LP-relaxation bounds from the simplex kernel; a
multiple-choice knapsack relaxation leaves at most one fractional job per
resource row, so the bound is tight and the tree stays small.

The placement LP then maps chosen cells onto physical servers. It is a pure
feasibility program (the prose goal, few fragmented jobs, comes from taking a
vertex): a basic feasible solution has at most 3s + n basic variables across
3s capacity rows and n coverage rows, so at most 3s jobs can be split
fractionally. Fractional placements are reported, never executed.

The heterogeneous variant adds machine types: one (type, cpu, memory) choice
per job, per-type capacity rows, and a floor at fair share on the slowest
type. Jobs that cannot be hosted whole on any single type are left
unassigned; `refill_unassigned` re-runs the solve over leftover capacity.
"""

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from synsim.core import ClusterSpec
from synsim.lp import INFEASIBLE, OPTIMAL, solve_lp
from synsim.profiler import SensitivityMatrix

_EPS = 1e-9


class OptPlacementInfeasible(RuntimeError):
    """The chosen cells cannot be packed onto real servers, even fractionally."""


# -------------------------------------------------------------------- types --


@dataclass(frozen=True)
class OptJob:
    job_id: int
    gpus: int
    cells_c: np.ndarray  # int cpu count per candidate cell
    cells_m: np.ndarray  # memory GB per candidate cell
    cells_w: np.ndarray  # estimated samples/s per candidate cell
    baseline: float  # value at the GPU-proportional cell


@dataclass(frozen=True)
class OptInstance:
    jobs: Tuple[OptJob, ...]
    server_gpus: int
    server_cpus: int
    server_mem: float
    servers: int

    @property
    def total_cpus(self) -> int:
        return self.server_cpus * self.servers

    @property
    def total_mem(self) -> float:
        return self.server_mem * self.servers

    @property
    def total_gpus(self) -> int:
        return self.server_gpus * self.servers


@dataclass(frozen=True)
class OptSolution:
    stars: Dict[int, Tuple[int, float]]  # job_id -> (c*, m*)
    objective: float
    placement: Optional[np.ndarray] = None  # (servers, jobs) fractions
    fragmented: Tuple[int, ...] = ()


@dataclass(frozen=True)
class HeteroType:
    count: int  # servers of this type
    gpus: int
    cpus: int
    mem_gb: float


@dataclass(frozen=True)
class HeteroJob:
    job_id: int
    gpus: int
    # per machine type: (cells_c, cells_m, cells_w) or None when unusable
    cells: Tuple[Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]], ...]
    fair_w: float


@dataclass(frozen=True)
class HeteroInstance:
    jobs: Tuple[HeteroJob, ...]
    types: Tuple[HeteroType, ...]
    caps: Optional[np.ndarray] = None  # 3K override vector used by refill

    def capacity(self) -> np.ndarray:
        if self.caps is not None:
            return self.caps.copy()
        v = np.zeros(3 * len(self.types))
        for t, ht in enumerate(self.types):
            v[3 * t] = ht.gpus * ht.count
            v[3 * t + 1] = ht.cpus * ht.count
            v[3 * t + 2] = ht.mem_gb * ht.count
        return v


@dataclass(frozen=True)
class HeteroSolution:
    assignments: Dict[int, Tuple[int, int, float]]  # job_id -> (type, c*, m*)
    objective: float
    unassigned: Tuple[int, ...] = ()


# ---------------------------------------------------------- instance builders --


def _prop_cell(g: int, server_gpus: int, server_cpus: int, server_mem: float) -> Tuple[int, float]:
    """Pooled GPU-proportional (cpu, mem) for g GPUs, spanning whole servers."""
    if g <= server_gpus:
        return math.floor(server_cpus / server_gpus * g), server_mem / server_gpus * g
    whole, rest = divmod(g, server_gpus)
    c = whole * server_cpus
    m = whole * server_mem
    if rest:
        c += math.floor(server_cpus / server_gpus * rest)
        m += server_mem / server_gpus * rest
    return c, m


def _pareto_keep(w: np.ndarray, res: np.ndarray) -> np.ndarray:
    """Mask of options no other option dominates (>= value, <= every resource).

    Dropping dominated cells never changes the optimum: any solution using one
    can swap to its dominator without losing value or feasibility. Exact
    duplicates keep their first occurrence.
    """
    k = w.size
    keep = np.ones(k, dtype=bool)
    idx = np.arange(k)
    for i in range(k):
        leq = (res <= res[i] + 0.0).all(axis=1)
        strict = (w > w[i]) | (res < res[i]).any(axis=1)
        dominated = (w >= w[i]) & leq & strict & (idx != i)
        duplicate = (w == w[i]) & (res == res[i]).all(axis=1) & (idx < i)
        if dominated.any() or duplicate.any():
            keep[i] = False
    return keep


def _cells_from_matrix(
    matrix: SensitivityMatrix, floor_w: float, max_c: float, max_m: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flatten the grid to candidate cells: at least floor_w, within caps,
    Pareto-pruned, sorted by value descending then (c, m) ascending."""
    n_c, n_m = matrix.values.shape
    c_all = np.repeat(matrix.cpu_axis, n_m).astype(np.float64)
    m_all = np.tile(matrix.mem_axis, n_c)
    w_all = matrix.values.ravel()
    mask = (w_all >= floor_w) & (c_all <= max_c + _EPS) & (m_all <= max_m + _EPS)
    c_all, m_all, w_all = c_all[mask], m_all[mask], w_all[mask]
    keep = _pareto_keep(w_all, np.column_stack([c_all, m_all]))
    c_all, m_all, w_all = c_all[keep], m_all[keep], w_all[keep]
    order = np.lexsort((m_all, c_all, -w_all))
    return c_all[order], m_all[order], w_all[order]


def build_opt_instance(
    entries: Sequence[Tuple[int, int, SensitivityMatrix]], cluster: ClusterSpec
) -> OptInstance:
    """Assemble the super-machine instance for one round.

    entries: (job_id, gpus, sensitivity matrix) per runnable job, in priority
    order. The cluster must be homogeneous; Σ gpus may not exceed the total.
    """
    if not cluster.is_homogeneous:
        raise ValueError("the pooled ILP instance needs a homogeneous cluster")
    spec = cluster.servers[0]
    total_c, total_m = cluster.total_cpus, cluster.total_mem_gb
    if sum(g for _, g, _ in entries) > cluster.total_gpus:
        raise ValueError("entries exceed total GPUs; select_runnable must gate them")
    jobs = []
    for job_id, g, matrix in entries:
        pc, pm = _prop_cell(g, spec.gpus, spec.cpus, spec.mem_gb)
        baseline = matrix.value_at(pc, pm)
        cc, cm, cw = _cells_from_matrix(matrix, baseline, total_c, total_m)
        jobs.append(OptJob(job_id, g, cc.astype(np.int64), cm, cw, baseline))
    return OptInstance(
        tuple(jobs), spec.gpus, spec.cpus, spec.mem_gb, len(cluster.servers)
    )


# --------------------------------------------------------------- B&B engine --


def _choice_value(job_w: List[np.ndarray], choice: Dict[int, int]) -> float:
    total = 0.0
    for j in range(len(job_w)):
        total += float(job_w[j][choice[j]])
    return total


def _solve_choice_ilp(
    job_w: List[np.ndarray], job_r: List[np.ndarray], caps: np.ndarray
) -> Tuple[Optional[Dict[int, int]], float]:
    """Pick exactly one option per job maximizing total value within caps.

    job_w[j]: option values, sorted descending. job_r[j]: matching resource
    vectors, shape (k_j, d). Returns (choice dict, value) or (None, -inf)
    when no feasible assignment exists. Deterministic: the first optimum found
    under the fixed exploration order wins ties.
    """
    n = len(job_w)
    if n == 0:
        return {}, 0.0
    best_choice: Optional[Dict[int, int]] = None
    best_val = -np.inf

    # greedy warm start: first (highest-value) option that still fits
    rem = caps.astype(np.float64).copy()
    greedy: Dict[int, int] = {}
    for j in range(n):
        pick = -1
        for k in range(job_w[j].size):
            if (job_r[j][k] <= rem + 1e-12).all():
                pick = k
                break
        if pick < 0:
            greedy = {}
            break
        greedy[j] = pick
        rem -= job_r[j][pick]
    if greedy:
        best_choice = dict(greedy)
        best_val = _choice_value(job_w, greedy)

    def consider(choice: Dict[int, int]) -> None:
        nonlocal best_choice, best_val
        val = _choice_value(job_w, choice)
        if val > best_val:
            best_val = val
            best_choice = dict(choice)

    def dfs(fixed: Dict[int, int], rem: np.ndarray, fixed_val: float) -> None:
        unfixed = [j for j in range(n) if j not in fixed]
        if not unfixed:
            consider(fixed)
            return
        feas: Dict[int, np.ndarray] = {}
        for j in unfixed:
            mask = (job_r[j] <= rem[None, :] + 1e-12).all(axis=1)
            if not mask.any():
                return  # some job cannot be completed: dead subtree
            feas[j] = np.nonzero(mask)[0]

        # LP relaxation over the unfixed jobs
        sizes = [feas[j].size for j in unfixed]
        nv = int(sum(sizes))
        cw = np.empty(nv)
        A_ub = np.zeros((caps.size, nv))
        A_eq = np.zeros((len(unfixed), nv))
        col = 0
        for row, j in enumerate(unfixed):
            ks = feas[j]
            span = slice(col, col + ks.size)
            cw[span] = job_w[j][ks]
            A_ub[:, span] = job_r[j][ks].T
            A_eq[row, span] = 1.0
            col += ks.size
        r = solve_lp(
            cw, A_ub=A_ub, b_ub=rem, A_eq=A_eq, b_eq=np.ones(len(unfixed)), maximize=True
        )
        if r.status == INFEASIBLE:
            return
        assert r.status == OPTIMAL
        if fixed_val + r.objective <= best_val:
            return  # bound: no strict improvement possible below this node

        # find the first fractionally-assigned job; none means integral
        frac_job = -1
        col = 0
        for j, size in zip(unfixed, sizes):
            xs = r.x[col : col + size]
            if ((xs > 1e-9) & (xs < 1.0 - 1e-9)).any():
                frac_job = j
                break
            col += size
        if frac_job < 0:
            choice = dict(fixed)
            col = 0
            for j, size in zip(unfixed, sizes):
                xs = r.x[col : col + size]
                choice[j] = int(feas[j][int(np.argmax(xs))])
                col += size
            consider(choice)
            return

        for k in feas[frac_job]:
            fixed[frac_job] = int(k)
            dfs(fixed, rem - job_r[frac_job][k], fixed_val + float(job_w[frac_job][k]))
            del fixed[frac_job]

    dfs({}, caps.astype(np.float64), 0.0)
    if best_choice is None:
        return None, -np.inf
    return best_choice, _choice_value(job_w, best_choice)


# ---------------------------------------------------------------- ideal ILP --


def solve_ideal_ilp(instance: OptInstance) -> OptSolution:
    """Exact optimum of the pooled one-cell-per-job program.

    Infeasibility is impossible by construction: every job's proportional cell
    qualifies for the floor, and proportional cells always fit the totals.
    """
    job_w = [j.cells_w for j in instance.jobs]
    job_r = [np.column_stack([j.cells_c, j.cells_m]).astype(np.float64) for j in instance.jobs]
    caps = np.array([float(instance.total_cpus), float(instance.total_mem)])
    choice, value = _solve_choice_ilp(job_w, job_r, caps)
    assert choice is not None, "proportional cells always fit; instance is corrupt"
    stars = {}
    for idx, job in enumerate(instance.jobs):
        k = choice[idx]
        stars[job.job_id] = (int(job.cells_c[k]), float(job.cells_m[k]))
    return OptSolution(stars=stars, objective=value)


def round_objective(entries, cluster: ClusterSpec) -> float:
    """One-call helper: pooled-ILP objective for a round's runnable set."""
    return solve_ideal_ilp(build_opt_instance(entries, cluster)).objective


# ------------------------------------------------------------- placement LP --


def solve_placement_lp(
    instance: OptInstance, stars: Dict[int, Tuple[int, float]]
) -> Tuple[np.ndarray, List[int]]:
    """Fractional placement of starred demands onto servers, as a vertex.

    Variables x[i, j] = fraction of job j on server i. Rows: per server the
    GPU/CPU/memory capacity, per job coverage >= 1. No objective; phase-1
    simplex lands on a basic feasible solution, and a vertex of this system
    fragments at most 3s jobs. Raises OptPlacementInfeasible when even
    fractional packing is impossible (the pooled ILP ignores server walls).
    """
    jobs = instance.jobs
    n = len(jobs)
    s = instance.servers
    nv = s * n
    A_ub = np.zeros((3 * s + n, nv))
    b_ub = np.zeros(3 * s + n)
    for i in range(s):
        for j, job in enumerate(jobs):
            c_star, m_star = stars[job.job_id]
            col = i * n + j
            A_ub[3 * i, col] = float(job.gpus)
            A_ub[3 * i + 1, col] = float(c_star)
            A_ub[3 * i + 2, col] = m_star
        b_ub[3 * i] = float(instance.server_gpus)
        b_ub[3 * i + 1] = float(instance.server_cpus)
        b_ub[3 * i + 2] = instance.server_mem
    for j in range(n):
        for i in range(s):
            A_ub[3 * s + j, i * n + j] = -1.0
        b_ub[3 * s + j] = -1.0

    r = solve_lp(np.zeros(nv), A_ub=A_ub, b_ub=b_ub)
    if r.status == INFEASIBLE:
        raise OptPlacementInfeasible("opt placement infeasible")
    assert r.status == OPTIMAL
    x = r.x.reshape(s, n)
    fragmented = []
    for j, job in enumerate(jobs):
        col = x[:, j]
        if ((col > 1e-9) & (col < 1.0 - 1e-9)).any():
            fragmented.append(job.job_id)
    assert len(fragmented) <= 3 * s, (
        f"vertex fragmented {len(fragmented)} jobs on {s} servers; "
        f"the 3s bound is violated"
    )
    return x, fragmented


def cap_to_single_server(instance: OptInstance) -> OptInstance:
    """Re-filter cells so no chosen demand can exceed one server's capacity.

    The fallback when placement is infeasible: capped stars always admit a
    (possibly fractional) packing whenever GPU counts do."""
    jobs = []
    for job in instance.jobs:
        mask = (job.cells_c <= instance.server_cpus) & (
            job.cells_m <= instance.server_mem + _EPS
        )
        if not mask.any():
            raise OptPlacementInfeasible(
                f"job {job.job_id} cannot fit one server in any configuration"
            )
        jobs.append(
            replace(
                job,
                cells_c=job.cells_c[mask],
                cells_m=job.cells_m[mask],
                cells_w=job.cells_w[mask],
            )
        )
    return replace(instance, jobs=tuple(jobs))


# -------------------------------------------------------------- hetero ILP --


def build_hetero_instance(
    entries: Sequence[Tuple[int, int, Sequence[Optional[SensitivityMatrix]]]],
    types: Sequence[HeteroType],
) -> HeteroInstance:
    """Assemble the machine-type instance.

    entries: (job_id, gpus, one matrix per type or None when the job cannot
    run there). The fair floor is the job's proportional value on the slowest
    type that can host it.
    """
    types = tuple(types)
    jobs = []
    for job_id, g, mats in entries:
        fair = None
        for t, ht in enumerate(types):
            if mats[t] is None or g > ht.gpus * ht.count:
                continue
            pc, pm = _prop_cell(g, ht.gpus, ht.cpus, ht.mem_gb)
            v = mats[t].value_at(pc, pm)
            fair = v if fair is None else min(fair, v)
        if fair is None:
            raise ValueError(f"job {job_id} fits no machine type at all")
        cells = []
        for t, ht in enumerate(types):
            if mats[t] is None or g > ht.gpus * ht.count:
                cells.append(None)
                continue
            cc, cm, cw = _cells_from_matrix(
                mats[t], fair, ht.cpus * ht.count, ht.mem_gb * ht.count
            )
            cells.append((cc.astype(np.int64), cm, cw) if cc.size else None)
        jobs.append(HeteroJob(job_id, g, tuple(cells), fair))
    return HeteroInstance(tuple(jobs), types)


def solve_hetero_ilp(instance: HeteroInstance) -> HeteroSolution:
    """Exact optimum of the typed program: one (type, c, m) choice per job or
    none at all, maximizing assigned-count first and total value second."""
    K = len(instance.types)
    caps = instance.capacity()
    # value inflation: any extra assigned job outweighs any throughput delta,
    # which makes "assign as many as possible" the primary objective
    big = 1.0
    for job in instance.jobs:
        best = 0.0
        for cell in job.cells:
            if cell is not None and cell[2].size:
                best = max(best, float(cell[2][0]))
        big += best
    job_w: List[np.ndarray] = []
    job_r: List[np.ndarray] = []
    meta: List[List[Optional[Tuple[int, int]]]] = []  # per option: (type, cell idx)
    for job in instance.jobs:
        ws, rs, ms = [], [], []
        for t in range(K):
            cell = job.cells[t]
            if cell is None:
                continue
            cc, cm, cw = cell
            for k in range(cw.size):
                vec = np.zeros(3 * K)
                vec[3 * t] = float(job.gpus)
                vec[3 * t + 1] = float(cc[k])
                vec[3 * t + 2] = float(cm[k])
                ws.append(big + float(cw[k]))
                rs.append(vec)
                ms.append((t, k))
        order = sorted(range(len(ws)), key=lambda i: (-ws[i], ms[i]))
        ws = [ws[i] for i in order]
        rs = [rs[i] for i in order]
        ms = [ms[i] for i in order]
        # the opt-out option: consumes nothing, contributes nothing
        ws.append(0.0)
        rs.append(np.zeros(3 * K))
        ms.append(None)
        job_w.append(np.array(ws))
        job_r.append(np.vstack(rs))
        meta.append(ms)

    choice, _ = _solve_choice_ilp(job_w, job_r, caps)
    assert choice is not None, "the opt-out option keeps every job feasible"
    assignments: Dict[int, Tuple[int, int, float]] = {}
    objective = 0.0
    for idx, job in enumerate(instance.jobs):
        m = meta[idx][choice[idx]]
        if m is None:
            continue
        t, k = m
        cc, cm, cw = job.cells[t]
        assignments[job.job_id] = (t, int(cc[k]), float(cm[k]))
        objective += float(cw[k])
    unassigned = tuple(j.job_id for j in instance.jobs if j.job_id not in assignments)
    return HeteroSolution(assignments, objective, unassigned)


def refill_unassigned(
    instance: HeteroInstance,
    solution: HeteroSolution,
    queue: Sequence[HeteroJob] = (),
) -> HeteroSolution:
    """Iteratively re-solve over leftover capacity until nothing changes.

    Each pass can only add assignments; existing ones are never revisited.
    Terminates within total-GPU iterations because every productive pass
    consumes at least one GPU.
    """
    by_id = {j.job_id: j for j in instance.jobs}
    assignments = dict(solution.assignments)
    pool = [j for j in instance.jobs if j.job_id not in assignments]
    for j in queue:
        if j.job_id not in by_id and j.job_id not in assignments:
            by_id[j.job_id] = j
            pool.append(j)

    caps = instance.capacity()
    consumed = np.zeros_like(caps)
    for job_id, (t, c, m) in assignments.items():
        consumed[3 * t] += by_id[job_id].gpus
        consumed[3 * t + 1] += c
        consumed[3 * t + 2] += m

    total_gpus = int(sum(ht.gpus * ht.count for ht in instance.types))
    for _ in range(total_gpus + 1):
        leftover = caps - consumed
        if not pool or all(
            leftover[3 * t] < 1.0 - _EPS for t in range(len(instance.types))
        ):
            break
        sub = HeteroInstance(tuple(pool), instance.types, caps=leftover)
        subsol = solve_hetero_ilp(sub)
        if not subsol.assignments:
            break
        for job_id, (t, c, m) in subsol.assignments.items():
            assignments[job_id] = (t, c, m)
            consumed[3 * t] += by_id[job_id].gpus
            consumed[3 * t + 1] += c
            consumed[3 * t + 2] += m
        pool = [j for j in pool if j.job_id not in assignments]

    objective = 0.0
    for job_id in sorted(assignments):
        t, c, m = assignments[job_id]
        cc, cm, cw = by_id[job_id].cells[t]
        hit = np.nonzero((cc == c) & (np.abs(cm - m) <= 1e-9))[0]
        objective += float(cw[hit[0]])
    unassigned = tuple(sorted(j.job_id for j in pool))
    return HeteroSolution(assignments, objective, unassigned)
