"""Command-line surface for batch experiments.

Subcommands: simulate (sweep lambda/policy/mechanism cells over one trace
model), gen-trace (write a synthetic trace CSV), profile (print one class's
demand vector and write its sensitivity matrix), compare (run variants
against the proportional baseline on one trace).

Configuration is an INI file; every key is validated and unknown sections or
keys are rejected. Command-line flags override config values. The seed
resolution order is: --seed flag, [run] seed, SYNSIM_SEED environment
variable, then 0.
"""

import argparse
import configparser
import csv
import os
import sys
from dataclasses import dataclass, field
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

from .core import ClusterSpec
from .policy import PolicyKind
from .presets import JOB_CLASSES, make_cluster, reference_server
from .profiler import export_matrix_csv, profile_job
from .simulator import (
    SUMMARY_COLUMNS,
    SimConfig,
    compare,
    run,
    write_metrics_csv,
    write_summary_csv,
    write_utilization_csv,
)
from .workload import TraceSpec, gen_trace, load_trace, save_trace

MECHANISM_CHOICES = ("proportional", "greedy", "tune", "opt")
POLICY_CHOICES = tuple(k.value for k in PolicyKind)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    """Everything one sweep needs; built from INI + flag overrides."""

    servers: int = 2
    cpu_gpu_ratio: int = 3
    round_minutes: float = 5.0

    trace_path: Optional[str] = None
    mode: str = "dynamic"
    n_jobs: int = 100
    split: Tuple[float, float, float] = (20.0, 70.0, 10.0)
    gpu_demand_dist: Optional[Dict[int, float]] = None
    trace_seed: Optional[int] = None  # defaults to the run seed

    policy: str = "fifo"
    mechanism: str = "tune"
    seed: Optional[int] = None  # resolved to an int by _apply_overrides
    profiling_in_jct: bool = True
    restart_penalty_s: float = 30.0
    monitor_width: int = 1000
    threshold: float = 0.10

    lambdas: List[float] = field(default_factory=lambda: [9.0])
    policies: List[str] = field(default_factory=list)
    mechanisms: List[str] = field(default_factory=list)

    def cluster(self) -> ClusterSpec:
        return make_cluster(
            self.servers, self.cpu_gpu_ratio, round_minutes=self.round_minutes
        )

    def cells(self) -> List[Tuple[Optional[float], str, str]]:
        lams: List[Optional[float]] = list(self.lambdas)
        if self.trace_path is not None:
            if len(lams) > 1:
                raise ConfigError("a replayed trace cannot sweep lambda")
            lams = [None]
        pols = self.policies or [self.policy]
        mechs = self.mechanisms or [self.mechanism]
        return [(l, p, m) for l, p, m in product(lams, pols, mechs)]


_SCHEMA = {
    "cluster": {"servers", "cpu_gpu_ratio", "round_minutes"},
    "trace": {"path", "mode", "n_jobs", "split", "gpu_demand_dist", "seed"},
    "run": {
        "policy",
        "mechanism",
        "seed",
        "profiling_in_jct",
        "restart_penalty_s",
        "monitor_width",
        "threshold",
    },
    "sweep": {"lambdas", "policies", "mechanisms"},
}


def _parse_split(text: str) -> Tuple[float, float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"split needs three percentages, got {text!r}")
    return tuple(float(p) for p in parts)  # type: ignore[return-value]


def _parse_gpu_dist(text: str) -> Dict[int, float]:
    out: Dict[int, float] = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            g, p = item.split(":")
            out[int(g)] = float(p)
        except ValueError:
            raise ConfigError(f"bad gpu_demand_dist entry {item!r}")
    if not out:
        raise ConfigError("gpu_demand_dist is empty")
    return out


def _parse_list(text: str, conv) -> list:
    return [conv(p.strip()) for p in text.split(",") if p.strip()]


def parse_config(path: str) -> ExperimentConfig:
    """Strict INI parse: unknown sections or keys are errors."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    cfg = ExperimentConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    try:
        c = parser["cluster"] if parser.has_section("cluster") else {}
        if "servers" in c:
            cfg.servers = int(c["servers"])
        if "cpu_gpu_ratio" in c:
            cfg.cpu_gpu_ratio = int(c["cpu_gpu_ratio"])
        if "round_minutes" in c:
            cfg.round_minutes = float(c["round_minutes"])

        t = parser["trace"] if parser.has_section("trace") else {}
        if "path" in t:
            cfg.trace_path = t["path"]
        if "mode" in t:
            cfg.mode = t["mode"]
        if "n_jobs" in t:
            cfg.n_jobs = int(t["n_jobs"])
        if "split" in t:
            cfg.split = _parse_split(t["split"])
        if "gpu_demand_dist" in t:
            cfg.gpu_demand_dist = _parse_gpu_dist(t["gpu_demand_dist"])
        if "seed" in t:
            cfg.trace_seed = int(t["seed"])

        r = parser["run"] if parser.has_section("run") else {}
        if "policy" in r:
            cfg.policy = r["policy"]
        if "mechanism" in r:
            cfg.mechanism = r["mechanism"]
        if "seed" in r:
            cfg.seed = int(r["seed"])
        if "profiling_in_jct" in r:
            cfg.profiling_in_jct = parser.getboolean("run", "profiling_in_jct")
        if "restart_penalty_s" in r:
            cfg.restart_penalty_s = float(r["restart_penalty_s"])
        if "monitor_width" in r:
            cfg.monitor_width = int(r["monitor_width"])
        if "threshold" in r:
            cfg.threshold = float(r["threshold"])

        s = parser["sweep"] if parser.has_section("sweep") else {}
        if "lambdas" in s:
            cfg.lambdas = _parse_list(s["lambdas"], float)
        if "policies" in s:
            cfg.policies = _parse_list(s["policies"], str)
        if "mechanisms" in s:
            cfg.mechanisms = _parse_list(s["mechanisms"], str)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad value in {path}: {exc}")

    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.servers < 1:
        raise ConfigError("cluster needs at least one server")
    if cfg.mode not in ("dynamic", "static"):
        raise ConfigError(f"trace mode must be dynamic or static, got {cfg.mode!r}")
    for p in [cfg.policy] + cfg.policies:
        if p not in POLICY_CHOICES:
            raise ConfigError(f"unknown policy {p!r} (choices: {POLICY_CHOICES})")
    for m in [cfg.mechanism] + cfg.mechanisms:
        if m not in MECHANISM_CHOICES:
            raise ConfigError(
                f"unknown mechanism {m!r} (choices: {MECHANISM_CHOICES})"
            )
    if any(l <= 0 for l in cfg.lambdas):
        raise ConfigError("lambda values must be > 0")
    if not (0.0 < cfg.threshold < 1.0):
        raise ConfigError("threshold must be in (0, 1)")


def _resolve_seed(flag_seed: Optional[int], cfg_seed: Optional[int]) -> int:
    if flag_seed is not None:
        return flag_seed
    if cfg_seed is not None:
        return cfg_seed
    env = os.environ.get("SYNSIM_SEED", "").strip()
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"SYNSIM_SEED must be an integer, got {env!r}")
    return 0


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "policy", None):
        cfg.policy = args.policy
        cfg.policies = []
    if getattr(args, "mechanism", None):
        cfg.mechanism = args.mechanism
        cfg.mechanisms = []
    if getattr(args, "lam", None) is not None:
        cfg.lambdas = [args.lam]
    if getattr(args, "trace", None):
        cfg.trace_path = args.trace
    if getattr(args, "threshold", None) is not None:
        cfg.threshold = args.threshold
    cfg.seed = _resolve_seed(args.seed, cfg.seed)
    _validate(cfg)
    return cfg


def _trace_for(cfg: ExperimentConfig, lam: Optional[float]):
    if cfg.trace_path is not None:
        return load_trace(cfg.trace_path, split=cfg.split, seed=cfg.seed)
    seed = cfg.trace_seed if cfg.trace_seed is not None else cfg.seed
    kwargs = dict(
        mode=cfg.mode,
        n_jobs=cfg.n_jobs,
        split=cfg.split,
        seed=seed,
    )
    if cfg.mode == "dynamic":
        kwargs["lam"] = lam if lam is not None else cfg.lambdas[0]
    if cfg.gpu_demand_dist is not None:
        kwargs["gpu_demand_dist"] = cfg.gpu_demand_dist
    return gen_trace(TraceSpec(**kwargs))


def _sim_config(cfg: ExperimentConfig, policy: str, mechanism: str) -> SimConfig:
    return SimConfig(
        policy=PolicyKind(policy),
        mechanism=mechanism,
        seed=cfg.seed,
        restart_penalty_s=cfg.restart_penalty_s,
        profiling_in_jct=cfg.profiling_in_jct,
        monitor_width=cfg.monitor_width,
        profile_threshold=cfg.threshold,
    )


def _cell_name(lam: Optional[float], policy: str, mechanism: str) -> str:
    lam_part = "replay" if lam is None else f"lam{lam:g}"
    return f"{lam_part}_{policy}_{mechanism}"


def cmd_simulate(args) -> int:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    cfg = _apply_overrides(cfg, args)
    out_dir = args.out or "synsim-out"
    os.makedirs(out_dir, exist_ok=True)

    sweep_rows = []
    for lam, policy, mechanism in cfg.cells():
        trace = _trace_for(cfg, lam)
        report = run(trace, cfg.cluster(), _sim_config(cfg, policy, mechanism))
        cell_dir = os.path.join(out_dir, _cell_name(lam, policy, mechanism))
        os.makedirs(cell_dir, exist_ok=True)
        write_metrics_csv(report, os.path.join(cell_dir, "metrics.csv"))
        write_utilization_csv(report, os.path.join(cell_dir, "utilization.csv"))
        write_summary_csv(report, os.path.join(cell_dir, "summary.csv"))
        with open(os.path.join(cell_dir, "summary.csv")) as fh:
            row = list(csv.reader(fh))[1]
        sweep_rows.append(["" if lam is None else repr(float(lam))] + row)
        print(
            f"{_cell_name(lam, policy, mechanism)}: "
            f"avg_jct={report.avg_jct:.2f} p99={report.p99_jct:.2f} "
            f"makespan={report.makespan:.2f}"
        )

    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("lambda",) + SUMMARY_COLUMNS)
        w.writerows(sweep_rows)
    return 0


def cmd_gen_trace(args) -> int:
    seed = _resolve_seed(args.seed, None)
    kwargs = dict(
        mode=args.mode,
        n_jobs=args.n_jobs,
        split=_parse_split(args.split),
        seed=seed,
    )
    if args.mode == "dynamic":
        kwargs["lam"] = args.lam if args.lam is not None else 9.0
    if args.gpu_demand_dist:
        kwargs["gpu_demand_dist"] = _parse_gpu_dist(args.gpu_demand_dist)
    trace = gen_trace(TraceSpec(**kwargs))
    save_trace(trace, args.out)
    print(f"wrote {len(trace)} jobs to {args.out}")
    return 0


def cmd_profile(args) -> int:
    if args.class_name not in JOB_CLASSES:
        raise ConfigError(
            f"unknown class {args.class_name!r}; choices: {sorted(JOB_CLASSES)}"
        )
    server = reference_server(args.cpu_gpu_ratio)
    matrix, demand, cost = profile_job(
        JOB_CLASSES[args.class_name], args.gpus, server, args.threshold
    )
    print(f"class: {args.class_name} (gpus={args.gpus})")
    print(f"sampled cpu points: {len(matrix.sampled_cpus)} {matrix.sampled_cpus}")
    print(f"simulated profiling minutes: {cost:g}")
    print(
        f"demand vector: gpus={demand.gpus} cpus={demand.cpus} "
        f"mem_gb={demand.mem_gb:g} peak={demand.peak_throughput:g} samples/s"
    )
    if args.out:
        export_matrix_csv(matrix, args.out)
        print(f"matrix written to {args.out}")
    return 0


def cmd_compare(args) -> int:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    cfg = _apply_overrides(cfg, args)
    lam = cfg.lambdas[0] if cfg.trace_path is None else None
    trace = _trace_for(cfg, lam)
    variants = [
        (PolicyKind(p), m)
        for p, m in product(cfg.policies or [cfg.policy], cfg.mechanisms or [cfg.mechanism])
    ]
    result = compare(
        trace, cfg.cluster(), variants, config=_sim_config(cfg, cfg.policy, "tune")
    )
    out_path = args.out or "compare.csv"
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ("policy", "mechanism", "avg_jct", "p99_jct", "makespan", "avg_jct_ratio")
        )
        for key in sorted(result.reports):
            rep = result.reports[key]
            w.writerow(
                [
                    key[0],
                    key[1],
                    repr(rep.avg_jct),
                    repr(rep.p99_jct),
                    repr(rep.makespan),
                    repr(result.avg_jct_ratio[key]),
                ]
            )
            print(
                f"{key[0]}/{key[1]}: avg_jct={rep.avg_jct:.2f} "
                f"ratio_vs_baseline={result.avg_jct_ratio[key]:.3f}"
            )
    print(f"comparison written to {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synsim",
        description="Trace-driven GPU cluster scheduling simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a sweep of simulations")
    sim.add_argument("--config", help="INI experiment config")
    sim.add_argument("--policy", choices=POLICY_CHOICES)
    sim.add_argument("--mechanism", choices=MECHANISM_CHOICES)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--lambda", dest="lam", type=float, help="jobs per hour")
    sim.add_argument("--trace", help="replay a trace CSV instead of generating")
    sim.add_argument("--threshold", type=float, help="profiling bisection threshold")
    sim.add_argument("--out", help="output directory (default synsim-out)")
    sim.set_defaults(fn=cmd_simulate)

    gen = sub.add_parser("gen-trace", help="write a synthetic trace CSV")
    gen.add_argument("--out", required=True)
    gen.add_argument("--mode", choices=("dynamic", "static"), default="dynamic")
    gen.add_argument("--n-jobs", type=int, default=100)
    gen.add_argument("--lambda", dest="lam", type=float)
    gen.add_argument("--split", default="20,70,10")
    gen.add_argument("--gpu-demand-dist", dest="gpu_demand_dist")
    gen.add_argument("--seed", type=int)
    gen.set_defaults(fn=cmd_gen_trace)

    prof = sub.add_parser("profile", help="profile one job class")
    prof.add_argument("--class-name", required=True)
    prof.add_argument("--gpus", type=int, default=1)
    prof.add_argument("--cpu-gpu-ratio", type=int, default=3)
    prof.add_argument("--threshold", type=float, default=0.10)
    prof.add_argument("--out", help="matrix CSV path")
    prof.set_defaults(fn=cmd_profile)

    cmp_ = sub.add_parser("compare", help="run variants against the baseline")
    cmp_.add_argument("--config", help="INI experiment config")
    cmp_.add_argument("--policy", choices=POLICY_CHOICES)
    cmp_.add_argument("--mechanism", choices=MECHANISM_CHOICES)
    cmp_.add_argument("--seed", type=int)
    cmp_.add_argument("--lambda", dest="lam", type=float)
    cmp_.add_argument("--trace")
    cmp_.add_argument("--threshold", type=float)
    cmp_.add_argument("--out", help="comparison CSV path (default compare.csv)")
    cmp_.set_defaults(fn=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
