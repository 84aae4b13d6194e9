"""Profiler: bisection sampling, analytical fill, demand vectors."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synsim.core import JobClass, ServerSpec, oracle_throughput, proportional_share
from synsim.presets import JOB_CLASSES, reference_server
from synsim.profiler import (
    SensitivityMatrix,
    build_axes,
    derive_demand_vector,
    fill_matrix_optimistic,
    profile_cpu_points,
    profile_job,
)

SERVER = reference_server()


class TestAxes:
    def test_cpu_axis_single_gpu(self):
        cpu_axis, _ = build_axes(JOB_CLASSES["resnet18-style"], 1, SERVER)
        assert list(cpu_axis) == list(range(1, 25))

    def test_cpu_axis_caps_at_one_server_until_split(self):
        jc = JOB_CLASSES["resnet18-style"]
        for g in (2, 4, 8):
            cpu_axis, _ = build_axes(jc, g, SERVER)
            assert cpu_axis[-1] == 24
        cpu_axis, _ = build_axes(jc, 16, SERVER)
        assert cpu_axis[-1] == 48

    def test_mem_axis_contains_grid_share_and_dataset(self):
        jc = JOB_CLASSES["deepspeech-style"]  # dataset 100 GB sits on the grid
        _, mem_axis = build_axes(jc, 1, SERVER)
        for expected in (50.0, 62.5, 100.0, 500.0):
            assert np.isclose(mem_axis, expected).any()
        assert list(mem_axis) == sorted(mem_axis)

    def test_small_dataset_extends_axis_below_grid(self):
        _, mem_axis = build_axes(JOB_CLASSES["gnmt-style"], 1, SERVER)
        assert mem_axis[0] == 16.0

    def test_split_job_axis_spans_two_servers(self):
        _, mem_axis = build_axes(JOB_CLASSES["resnet18-style"], 16, SERVER)
        assert mem_axis[-1] == 1000.0


class TestBisection:
    def test_knee_class_samples_few_points(self):
        # min(700c, 6300) saturates at 9 cores; the walk narrows onto the knee
        sampled, measured, cost = profile_cpu_points(JOB_CLASSES["resnet18-style"], 1, SERVER)
        assert sampled == [1, 6, 7, 8, 9, 12, 24]
        assert len(sampled) <= 10
        assert cost == len(sampled) * 1.0
        for c in sampled:
            assert measured[c] == min(700.0 * c, 6300.0)

    def test_flat_class_stops_at_endpoints(self):
        sampled, measured, _ = profile_cpu_points(JOB_CLASSES["gnmt-style"], 1, SERVER)
        assert sampled == [1, 24]
        assert measured[1] == measured[24] == 1800.0

    def test_zero_threshold_sweeps_everything(self):
        sampled, _, cost = profile_cpu_points(JOB_CLASSES["resnet18-style"], 1, SERVER,
                                              threshold=0.0)
        assert sampled == list(range(1, 25))
        assert cost == 24.0

    def test_sample_budget_for_all_presets(self):
        bound = 2 * math.ceil(math.log2(24)) + 2
        for jc in JOB_CLASSES.values():
            sampled, _, _ = profile_cpu_points(jc, 1, SERVER)
            assert 1 in sampled and 24 in sampled
            assert len(sampled) <= bound

    def test_single_core_axis(self):
        server = ServerSpec(gpus=1, cpus=1, mem_gb=100.0, storage_bw=1.0)
        sampled, _, _ = profile_cpu_points(JOB_CLASSES["lstm-style"], 1, server)
        assert sampled == [1]


class TestFill:
    def test_exact_at_sampled_full_memory(self):
        jc = JOB_CLASSES["resnet18-style"]
        sampled, measured, _ = profile_cpu_points(jc, 1, SERVER)
        matrix = fill_matrix_optimistic(jc, 1, SERVER, measured)
        for c in sampled:
            assert matrix.value_at(c, float(matrix.mem_axis[-1])) == measured[c]

    def test_monotone_both_axes(self):
        for name in ("resnet18-style", "gnmt-style", "m5-style"):
            matrix, _, _ = profile_job(JOB_CLASSES[name], 1, SERVER)
            assert np.all(np.diff(matrix.values, axis=0) >= 0)
            assert np.all(np.diff(matrix.values, axis=1) >= 0)
            assert np.all(np.isfinite(matrix.values))

    def test_never_above_oracle(self):
        # chords under a concave curve: the fill is a pointwise lower bound
        for jc in JOB_CLASSES.values():
            matrix, _, _ = profile_job(jc, 1, SERVER)
            for i, c in enumerate(matrix.cpu_axis):
                for j, m in enumerate(matrix.mem_axis):
                    truth = oracle_throughput(jc, 1, int(c), float(m), SERVER.storage_bw)
                    assert matrix.values[i, j] <= truth + 1e-9

    def test_within_three_percent_of_oracle_all_presets(self):
        for jc in JOB_CLASSES.values():
            matrix, _, _ = profile_job(jc, 1, SERVER)
            worst = 0.0
            for i, c in enumerate(matrix.cpu_axis):
                for j, m in enumerate(matrix.mem_axis):
                    truth = oracle_throughput(jc, 1, int(c), float(m), SERVER.storage_bw)
                    worst = max(worst, abs(matrix.values[i, j] - truth) / truth)
            assert worst <= 0.03, f"{jc.name}: {worst:.4f}"

    @given(
        gpu_rate=st.floats(500.0, 10000.0),
        knee=st.integers(1, 24),
        dataset_gb=st.sampled_from([1.0, 16.0, 100.0, 250.0, 400.0]),
        mb=st.sampled_from([0.05, 0.125, 0.25, 0.5]),
    )
    @settings(max_examples=150, deadline=None)
    def test_error_bounded_by_threshold_everywhere(self, gpu_rate, knee, dataset_gb, mb):
        # abandoned brackets vary by < threshold end to end, so no cell can be
        # off by more than the 10% search threshold
        jc = JobClass("fuzz", "image", gpu_rate=gpu_rate, cpu_rate=gpu_rate / knee,
                      dataset_samples=max(1, int(dataset_gb * 1000 / mb)),
                      bytes_per_sample=mb)
        matrix, _, _ = profile_job(jc, 1, SERVER)
        for i, c in enumerate(matrix.cpu_axis):
            for j, m in enumerate(matrix.mem_axis):
                truth = oracle_throughput(jc, 1, int(c), float(m), SERVER.storage_bw)
                assert abs(matrix.values[i, j] - truth) / truth <= 0.10 + 1e-12


EXPECTED_DEMANDS = {
    # name: (c*, m*) on the reference server, single GPU
    "alexnet-style": (12, 50.0),
    "resnet18-style": (9, 150.0),
    "shufflenet-style": (18, 100.0),
    "mobilenet-style": (10, 50.0),
    "resnet50-style": (6, 150.0),
    "gnmt-style": (1, 16.0),
    "transformer-style": (2, 5.0),
    "lstm-style": (3, 1.0),
    "deepspeech-style": (11, 62.5),
    "m5-style": (8, 300.0),
}


class TestDemandVector:
    @pytest.mark.parametrize("name", sorted(EXPECTED_DEMANDS))
    def test_preset_demand_vectors(self, name):
        matrix, demand, _ = profile_job(JOB_CLASSES[name], 1, SERVER)
        c_star, m_star = EXPECTED_DEMANDS[name]
        assert demand.cpus == c_star
        assert demand.mem_gb == pytest.approx(m_star, abs=1e-6)
        assert demand.gpus == 1
        assert demand.peak_throughput >= 0.99 * matrix.peak

    def test_language_demands_fit_under_proportional(self):
        c_prop, m_prop = proportional_share(SERVER, 1)
        for name in ("gnmt-style", "transformer-style", "lstm-style"):
            _, demand, _ = profile_job(JOB_CLASSES[name], 1, SERVER)
            assert demand.cpus <= c_prop
            assert demand.mem_gb <= m_prop

    def test_full_slack_tolerance_collapses_demand(self):
        matrix, _, _ = profile_job(JOB_CLASSES["resnet18-style"], 1, SERVER)
        demand = derive_demand_vector(matrix, eps_sat=1.0)
        assert demand.cpus == 1
        assert demand.mem_gb == matrix.mem_axis[0]

    @given(data=st.data())
    @settings(max_examples=1000, deadline=None)
    def test_invariants_on_random_monotone_matrices(self, data):
        n_c = data.draw(st.integers(2, 8))
        n_m = data.draw(st.integers(2, 6))
        incr = data.draw(
            st.lists(
                st.lists(st.floats(0.0, 10.0, allow_nan=False), min_size=n_m, max_size=n_m),
                min_size=n_c, max_size=n_c,
            )
        )
        base = data.draw(st.floats(0.1, 100.0))
        values = np.cumsum(np.cumsum(np.array(incr), axis=0), axis=1) + base
        matrix = SensitivityMatrix(
            job_class=JOB_CLASSES["lstm-style"], gpus=1,
            cpu_axis=np.arange(1, n_c + 1),
            mem_axis=50.0 * np.arange(1, n_m + 1),
            values=values, sampled_cpus=(1, n_c),
        )
        demand = derive_demand_vector(matrix, eps_sat=0.01)
        floor = 0.99 * matrix.peak
        got = matrix.value_at(demand.cpus, demand.mem_gb)
        assert got >= floor
        # c* minimal, m* minimal given c*
        ci = matrix.cpu_index(demand.cpus)
        if ci > 0:
            assert matrix.values[ci - 1, -1] < floor
        mi = matrix.mem_index(demand.mem_gb)
        if mi > 0:
            assert matrix.values[ci, mi - 1] < floor
