"""Acceptance gate: ten end-to-end checks at their stated tolerances.

Each test covers one shipping criterion, prints a single [PASS]/[FAIL] line
with the headline numbers (visible with -s, or on failure), and asserts.
Wall-clock budgets are measured around each check body after a one-time jit
warmup, so compile cost is not billed to any criterion. Simulation cells
shared between the lambda-sweep and the ratio-trend checks are computed once
and reused.
"""

import filecmp
import time
from itertools import product as iproduct
from pathlib import Path

import numpy as np
import pytest

from synsim.cli import main as cli_main
from synsim.core import ClusterState, oracle_throughput, proportional_rate
from synsim.lp import warmup
from synsim.mechanism import RoundJob, place_tune
from synsim.optimizer import (
    HeteroType,
    OptInstance,
    OptJob,
    build_hetero_instance,
    build_opt_instance,
    round_objective,
    solve_hetero_ilp,
    solve_ideal_ilp,
    solve_placement_lp,
)
from synsim.presets import JOB_CLASSES, TASK_PRESETS, make_cluster, reference_server
from synsim.profiler import (
    MINUTES_PER_SAMPLE,
    fill_matrix_optimistic,
    profile_cpu_points,
    profile_job,
)
from synsim.simulator import SimConfig, run
from synsim.workload import TraceSpec, gen_trace

ALL_CLASSES = sorted(JOB_CLASSES)

_PROFILED = {}
_CELLS = {}


@pytest.fixture(scope="module", autouse=True)
def _warm_jit():
    warmup()


def _verdict(label, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
    print(line)
    assert ok, line


def _profiled(name, g=1, ratio=3):
    key = (name, g, ratio)
    if key not in _PROFILED:
        _PROFILED[key] = profile_job(JOB_CLASSES[name], g, reference_server(ratio))
    return _PROFILED[key]


def _sweep_cell(ratio, lam, mechanism):
    """One (ratio, lambda, mechanism) simulation; cached across criteria."""
    key = (ratio, lam, mechanism)
    if key not in _CELLS:
        trace = gen_trace(
            TraceSpec(
                mode="dynamic",
                n_jobs=4000,
                lam=float(lam),
                split=(20.0, 70.0, 10.0),
                gpu_demand_dist={1: 1.0},
                seed=1234,
                server=reference_server(ratio),
            )
        )
        report = run(
            trace,
            make_cluster(16, ratio),
            SimConfig(policy="fifo", mechanism=mechanism, seed=1234,
                      monitor_width=1000),
        )
        _CELLS[key] = report.avg_jct
    return _CELLS[key]


def test_criterion_01_tune_guarantee():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1001)
    rounds = 0
    violations = 0
    worst = np.inf
    for _ in range(50):
        s = int(rng.integers(2, 9))
        cluster = make_cluster(s)
        server = cluster.servers[0]
        w = rng.dirichlet(np.ones(3))
        jobs = []
        total_g = 0
        jid = 0
        while total_g < cluster.total_gpus:
            task = ("image", "language", "speech")[int(rng.choice(3, p=w))]
            name = TASK_PRESETS[task][int(rng.integers(len(TASK_PRESETS[task])))]
            g = int(rng.choice([1, 1, 1, 2, 2, 4, 8, 16]))
            if g > cluster.total_gpus - total_g:
                break
            jobs.append((jid, name, g))
            total_g += g
            jid += 1
        prev = None
        for _ in range(2):
            rjs = []
            for (j, name, g) in jobs:
                m, d, _ = _profiled(name, g)
                rjs.append(RoundJob(j, g, d, m))
            plan = place_tune(rjs, ClusterState(cluster), prev)
            rounds += 1
            for (j, name, g) in jobs:
                alloc = plan.allocations[j]
                jc = JOB_CLASSES[name]
                rate = oracle_throughput(jc, g, max(1, alloc.cpus),
                                         alloc.mem_gb, server.storage_bw)
                floor = proportional_rate(jc, g, server)
                worst = min(worst, rate / floor)
                if rate < floor * (1 - 1e-9):
                    violations += 1
            # churn for the second round: drop ~30%, refill with newcomers
            prev = {}
            survivors = []
            for (j, name, g) in jobs:
                if rng.random() < 0.7:
                    survivors.append((j, name, g))
                    prev[j] = plan.allocations[j]
            jobs = survivors
            total_g = sum(g for _, _, g in jobs)
            while total_g < cluster.total_gpus:
                task = ("image", "language", "speech")[int(rng.choice(3, p=w))]
                name = TASK_PRESETS[task][int(rng.integers(len(TASK_PRESETS[task])))]
                g = int(rng.choice([1, 1, 2, 4]))
                if g > cluster.total_gpus - total_g:
                    break
                jobs.append((jid, name, g))
                total_g += g
                jid += 1
    dt = time.perf_counter() - t0
    _verdict(
        "criterion 1 throughput guarantee",
        rounds >= 100 and violations == 0 and dt < 10.0,
        f"rounds={rounds} violations={violations} worst_ratio={worst:.6f} t={dt:.2f}s",
    )


def test_criterion_02_tune_near_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2002)
    ratios = []
    for _ in range(50):
        s = int(rng.integers(1, 5))
        cluster = make_cluster(s)
        n_target = int(rng.integers(4, 17))
        entries = []
        rjs = []
        total_g = 0
        for j in range(n_target):
            name = ALL_CLASSES[int(rng.integers(len(ALL_CLASSES)))]
            g = int(rng.choice([1, 1, 1, 2, 2, 4]))
            if total_g + g > cluster.total_gpus:
                continue
            m, d, _ = _profiled(name, g)
            entries.append((j, g, m))
            rjs.append(RoundJob(j, g, d, m))
            total_g += g
        if not entries:
            continue
        plan = place_tune(rjs, ClusterState(cluster), None)
        agg = sum(
            m.value_at(plan.allocations[j].cpus, plan.allocations[j].mem_gb)
            for (j, g, m) in entries
        )
        ilp = round_objective(entries, cluster)
        ratios.append(agg / ilp if ilp > 0 else 1.0)
    dt = time.perf_counter() - t0
    worst = min(ratios)
    _verdict(
        "criterion 2 tune within 10% of pooled ILP",
        len(ratios) == 50 and worst >= 0.90 and dt < 60.0,
        f"instances={len(ratios)} min={worst:.4f} "
        f"mean={np.mean(ratios):.4f} t={dt:.2f}s",
    )


def test_criterion_03_placement_vertex_fragmentation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3003)
    total = 0
    worst_frag = 0.0
    for s in (1, 2, 4, 8):
        made = 0
        attempts = 0
        while made < 50 and attempts < 2000:
            attempts += 1
            cap_g, cap_c, cap_m = 8 * s, 24 * s, 500.0 * s
            jobs = []
            stars = {}
            total_g = total_c = total_m = 0
            jid = 0
            while True:
                g = int(rng.choice([1, 1, 2, 4] + ([8] if s > 1 else [])))
                c = int(rng.integers(1, 19))
                m = float(rng.choice([25.0, 50.0, 100.0, 150.0]))
                if total_g + g > cap_g or total_c + c > cap_c or total_m + m > cap_m:
                    break
                jobs.append(OptJob(jid, g, np.array([c]), np.array([m]),
                                   np.array([1.0]), 1.0))
                stars[jid] = (c, m)
                total_g += g
                total_c += c
                total_m += m
                jid += 1
            if not jobs:
                continue
            inst = OptInstance(tuple(jobs), 8, 24, 500.0, s)
            _, fragmented = solve_placement_lp(inst, stars)
            assert len(fragmented) <= 3 * s
            worst_frag = max(worst_frag, len(fragmented) / (3.0 * s))
            made += 1
            total += 1
    dt = time.perf_counter() - t0
    _verdict(
        "criterion 3 LP vertex fragments at most 3s jobs",
        total == 200,
        f"instances={total} worst_fragmentation={worst_frag:.3f} of bound t={dt:.2f}s",
    )


def _enumerate_best(jobs, caps):
    best = -np.inf
    for pick in iproduct(*[range(j.cells_w.size) for j in jobs]):
        c = sum(float(jobs[j].cells_c[pick[j]]) for j in range(len(jobs)))
        m = sum(float(jobs[j].cells_m[pick[j]]) for j in range(len(jobs)))
        if c <= caps[0] + 1e-9 and m <= caps[1] + 1e-9:
            v = sum(float(jobs[j].cells_w[pick[j]]) for j in range(len(jobs)))
            best = max(best, v)
    return best


def test_criterion_04_branch_and_bound_matches_enumeration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4004)
    exact = 0
    checked = 0
    for _ in range(200):
        n = int(rng.integers(1, 5))
        jobs = []
        for j in range(n):
            k = int(rng.integers(2, 11))
            c = rng.integers(1, 11, size=k)
            m = rng.choice([25.0, 50.0, 75.0, 100.0, 150.0], size=k)
            w = np.round(rng.uniform(100, 5000, size=k), 3)
            order = np.argsort(-w)
            jobs.append(OptJob(j, 1, c[order].astype(np.int64), m[order],
                               w[order], float(w.min())))
        cap_c = float(sum(int(j.cells_c[0]) for j in jobs) + rng.integers(0, 12))
        cap_m = float(sum(float(j.cells_m[0]) for j in jobs) + rng.integers(0, 200))
        instance = OptInstance(tuple(jobs), 8, int(cap_c), cap_m, 1)
        sol = solve_ideal_ilp(instance)
        ref = _enumerate_best(jobs, (cap_c, cap_m))
        checked += 1
        if sol.objective == ref:
            exact += 1
    dt = time.perf_counter() - t0
    _verdict(
        "criterion 4 branch-and-bound equals exhaustive enumeration",
        checked >= 200 and exact == checked and dt < 30.0,
        f"instances={checked} exact={exact} t={dt:.2f}s",
    )


def test_criterion_05_optimistic_profiling_fidelity():
    t0 = time.perf_counter()
    server = reference_server(3)
    worst_err = 0.0
    worst_at = None
    max_samples = 0
    for name in ALL_CLASSES:
        jc = JOB_CLASSES[name]
        sampled, measured, cost = profile_cpu_points(jc, 1, server, 0.10)
        assert cost == len(sampled) * MINUTES_PER_SAMPLE
        max_samples = max(max_samples, len(sampled))
        matrix = fill_matrix_optimistic(jc, 1, server, measured)
        for i, c in enumerate(matrix.cpu_axis):
            for k, m in enumerate(matrix.mem_axis):
                truth = oracle_throughput(jc, 1, int(c), float(m), server.storage_bw)
                err = abs(matrix.values[i, k] - truth) / truth
                if err > worst_err:
                    worst_err, worst_at = err, (name, int(c), float(m))
    dt = time.perf_counter() - t0
    _verdict(
        "criterion 5 filled matrices within 3% everywhere",
        max_samples <= 10 and worst_err < 0.03,
        f"classes={len(ALL_CLASSES)} max_cpu_samples={max_samples} "
        f"worst_err={worst_err:.4f} at {worst_at} t={dt:.2f}s",
    )


def test_criterion_06_jct_sweep_direction():
    t0 = time.perf_counter()
    lambdas = list(range(1, 10))
    ratios = []
    for lam in lambdas:
        prop = _sweep_cell(3, lam, "proportional")
        tune = _sweep_cell(3, lam, "tune")
        assert tune <= prop + 1e-9, f"tune {tune} above prop {prop} at lam={lam}"
        ratios.append(prop / tune)
    # the unsaturated plateau is flat by construction; round quantization
    # wiggles the measured ratio by ~2e-4, so monotonicity is checked against
    # a tolerance far above that noise and far below any real dip
    monotone = all(b >= a - 0.01 for a, b in zip(ratios, ratios[1:]))
    dt = time.perf_counter() - t0
    _verdict(
        "criterion 6 tune vs proportional across load",
        monotone and ratios[-1] >= 2.0 and dt < 300.0,
        f"ratios={['%.3f' % r for r in ratios]} top={ratios[-1]:.3f} t={dt:.1f}s",
    )


def test_criterion_07_greedy_pathology():
    t0 = time.perf_counter()
    trace = gen_trace(
        TraceSpec(
            mode="dynamic",
            n_jobs=240,
            lam=12.0,
            split=(50.0, 0.0, 50.0),
            gpu_demand_dist={1: 1.0},
            seed=1234,
        )
    )
    cluster = make_cluster(4)
    reports = {
        mech: run(trace, cluster,
                  SimConfig(policy="fifo", mechanism=mech, seed=1234,
                            monitor_width=240))
        for mech in ("proportional", "greedy", "tune")
    }
    tu = reports["tune"].utilization
    gu = reports["greedy"].utilization
    # warm-up ends when tune first fills the cluster; the comparison runs
    # while both systems still have jobs waiting, because an empty queue
    # makes low utilization trivial rather than pathological
    warm = next(i for i, u in enumerate(tu) if u.gpu_util >= 1.0 - 1e-9)
    end = min(
        max(i for i, u in enumerate(tu) if u.waiting_jobs > 0),
        max(i for i, u in enumerate(gu) if u.waiting_jobs > 0),
    )
    bad_rounds = sum(
        1 for i in range(warm, end + 1) if gu[i].gpu_util >= tu[i].gpu_util
    )
    pj = reports["proportional"].avg_jct
    gj = reports["greedy"].avg_jct
    tj = reports["tune"].avg_jct
    dt = time.perf_counter() - t0
    _verdict(
        "criterion 7 greedy strands GPUs under contention",
        bad_rounds == 0 and gj >= pj and tj <= pj,
        f"contended_rounds={end - warm + 1} greedy_util_ge_tune={bad_rounds} "
        f"greedy/prop={gj / pj:.3f} tune/prop={tj / pj:.3f} t={dt:.1f}s",
    )


def test_criterion_08_cpu_gpu_ratio_trend():
    t0 = time.perf_counter()
    factors = []
    for ratio in (3, 4, 5, 6):
        prop = _sweep_cell(ratio, 8, "proportional")
        tune = _sweep_cell(ratio, 8, "tune")
        factors.append(prop / tune)
    trend = all(b <= a + 1e-6 for a, b in zip(factors, factors[1:]))
    dt = time.perf_counter() - t0
    _verdict(
        "criterion 8 improvement shrinks as CPUs per GPU grow",
        trend and all(f >= 1.0 for f in factors),
        f"factors={['%.4f' % f for f in factors]} t={dt:.1f}s",
    )


def test_criterion_09_byte_identical_reruns(tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "exp.ini"
    cfg.write_text(
        "[cluster]\nservers = 2\n\n"
        "[trace]\nmode = dynamic\nn_jobs = 60\nsplit = 20, 70, 10\n"
        "gpu_demand_dist = 1: 1.0\n\n"
        "[run]\npolicy = fifo\nseed = 42\nmonitor_width = 30\n\n"
        "[sweep]\nlambdas = 6\nmechanisms = proportional, greedy, tune\n"
    )
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert cli_main(["simulate", "--config", str(cfg), "--out", str(out_a)]) == 0
    assert cli_main(["simulate", "--config", str(cfg), "--out", str(out_b)]) == 0
    files_a = sorted(p.relative_to(out_a) for p in out_a.rglob("*.csv"))
    files_b = sorted(p.relative_to(out_b) for p in out_b.rglob("*.csv"))
    identical = files_a == files_b and all(
        filecmp.cmp(out_a / rel, out_b / rel, shallow=False) for rel in files_a
    )
    dt = time.perf_counter() - t0
    _verdict(
        "criterion 9 same seed reproduces every CSV byte for byte",
        len(files_a) >= 10 and identical,
        f"csv_files={len(files_a)} identical={identical} t={dt:.1f}s",
    )


def test_criterion_10_hetero_ilp_reduces_to_ideal():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1010)
    ok = 0
    total = 0
    for _ in range(50):
        s = int(rng.integers(1, 4))
        cluster = make_cluster(s)
        n = int(rng.integers(1, 11))
        entries = []
        total_g = 0
        for j in range(n):
            name = ALL_CLASSES[int(rng.integers(len(ALL_CLASSES)))]
            g = int(rng.choice([1, 1, 1, 2, 4]))
            if total_g + g > cluster.total_gpus:
                continue
            m, d, _ = _profiled(name, g)
            entries.append((j, g, m))
            total_g += g
        if not entries:
            continue
        total += 1
        ideal = solve_ideal_ilp(build_opt_instance(entries, cluster))
        hetero = solve_hetero_ilp(
            build_hetero_instance(
                [(j, g, [m]) for (j, g, m) in entries],
                [HeteroType(s, 8, 24, 500.0)],
            )
        )
        if hetero.objective == ideal.objective and not hetero.unassigned:
            ok += 1
    dt = time.perf_counter() - t0
    _verdict(
        "criterion 10 single-type hetero ILP equals pooled ILP",
        total == 50 and ok == 50,
        f"instances={total} exact={ok} t={dt:.2f}s",
    )
