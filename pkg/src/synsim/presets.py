"""Shipped job-class presets and reference cluster SKUs.

The ten archetypes are calibrated qualitatively, not measured: image and speech
classes saturate pre-processing between 6 and 18 cores and are storage-sensitive,
language classes saturate at 1-3 cores with datasets small enough to cache
anywhere. On the reference 8 GPU / 24 CPU / 500 GB / 1 GB/s server a single-GPU
proportional share is (3 cores, 62.5 GB).
"""

from typing import Dict, List

from synsim.core import ClusterSpec, JobClass, ServerSpec

# name -> JobClass; rates are samples/second, sizes in MB per sample
JOB_CLASSES: Dict[str, JobClass] = {
    jc.name: jc
    for jc in [
        # image: CPU knee at gpu_rate/cpu_rate cores per GPU
        JobClass("alexnet-style", "image", gpu_rate=3000.0, cpu_rate=250.0,
                 dataset_samples=1_000_000, bytes_per_sample=0.15),
        JobClass("resnet18-style", "image", gpu_rate=6300.0, cpu_rate=700.0,
                 dataset_samples=1_600_000, bytes_per_sample=0.25),
        JobClass("shufflenet-style", "image", gpu_rate=6800.0, cpu_rate=400.0,
                 dataset_samples=1_250_000, bytes_per_sample=0.2),
        JobClass("mobilenet-style", "image", gpu_rate=3500.0, cpu_rate=350.0,
                 dataset_samples=1_600_000, bytes_per_sample=0.125),
        JobClass("resnet50-style", "image", gpu_rate=5400.0, cpu_rate=900.0,
                 dataset_samples=1_000_000, bytes_per_sample=0.3),
        # language: pre-processing saturates at 1-3 cores, tiny datasets
        JobClass("gnmt-style", "language", gpu_rate=1800.0, cpu_rate=2000.0,
                 dataset_samples=200_000, bytes_per_sample=0.08),
        JobClass("transformer-style", "language", gpu_rate=3000.0, cpu_rate=1500.0,
                 dataset_samples=100_000, bytes_per_sample=0.05),
        JobClass("lstm-style", "language", gpu_rate=2400.0, cpu_rate=800.0,
                 dataset_samples=100_000, bytes_per_sample=0.01),
        # speech: in between
        JobClass("deepspeech-style", "speech", gpu_rate=5500.0, cpu_rate=500.0,
                 dataset_samples=250_000, bytes_per_sample=0.4),
        JobClass("m5-style", "speech", gpu_rate=4800.0, cpu_rate=600.0,
                 dataset_samples=1_000_000, bytes_per_sample=0.5),
    ]
}

TASK_PRESETS: Dict[str, List[str]] = {
    "image": ["alexnet-style", "resnet18-style", "shufflenet-style",
              "mobilenet-style", "resnet50-style"],
    "language": ["gnmt-style", "transformer-style", "lstm-style"],
    "speech": ["deepspeech-style", "m5-style"],
}


def reference_server(cpu_gpu_ratio: int = 3) -> ServerSpec:
    """The reference SKU: 8 GPUs, ratio*8 CPUs, 500 GB DRAM, 1 GB/s storage."""
    return ServerSpec(gpus=8, cpus=8 * cpu_gpu_ratio, mem_gb=500.0, storage_bw=1.0)


def make_cluster(n_servers: int, cpu_gpu_ratio: int = 3,
                 round_minutes: float = 5.0) -> ClusterSpec:
    server = reference_server(cpu_gpu_ratio)
    return ClusterSpec(servers=tuple([server] * n_servers), round_minutes=round_minutes)
