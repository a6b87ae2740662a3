"""Runtime-schedulability experiments over utilization sweeps."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

from . import nn
from .model import ContractError, Platform, hyperperiod, total_utilization
from .schedulers import GEDF, GRM, NeuralScheduler
from .simulator import STRICT_SPORADIC, inflate_wcet, run_trajectory
from .taskgen import experiment_grid, point_seed
from .training import coerce

log = logging.getLogger(__name__)

CSV_COLUMNS = ("scheduler", "m", "preemption", "arch", "class", "util_over_m", "schedulable_frac",
               "n_sets", "seed")


@dataclass
class ExperimentConfig:
    m: int = 2
    preemptive: bool = True
    heterogeneous: bool = False
    cls: str = "mixed"
    sweep_points: int = 5
    lo_frac: float = 0.5
    hi_frac: float = 1.0
    sets_per_point: int = 50
    trials_per_set: int = 1
    seed: int = 0
    schedulers: tuple = ("GEDF", "GRM")
    checkpoints: dict = field(default_factory=dict)   # scheduler name -> checkpoint path
    overhead: int = 0
    release_mode: str = STRICT_SPORADIC
    sporadic_rho: float = 0.5
    horizon_cap: int | None = None
    n_tasks: int | None = None
    workers: int = 1

    def __post_init__(self):
        if self.trials_per_set < 1:
            raise ValueError("trials_per_set must be at least 1")
        if not (0.5 <= self.lo_frac <= self.hi_frac <= 1.0):
            raise ValueError("utilization sweep must lie within [0.5m, m]")
        if isinstance(self.schedulers, str):
            self.schedulers = tuple(x.strip() for x in self.schedulers.split(",") if x.strip())
        self.schedulers = tuple(self.schedulers)

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        """Build from ``key = value`` strings; ``checkpoint`` feeds the ``neural`` scheduler."""
        known = {f.name for f in fields(cls)}
        kwargs, checkpoints = {}, {}
        for k, v in values.items():
            k = k.replace("-", "_")
            if k == "class":
                k = "cls"
            if k == "checkpoint":
                checkpoints["neural"] = v
            elif k.startswith("checkpoint."):
                checkpoints[k.split(".", 1)[1]] = v
            elif k in known and k != "checkpoints":
                kwargs[k] = coerce(v, getattr(cls, k, None), k)
        if checkpoints:
            kwargs["checkpoints"] = checkpoints
        return cls(**kwargs)

    def platform(self) -> Platform:
        make = Platform.heterogeneous if self.heterogeneous else Platform.homogeneous
        return make(self.m, self.preemptive)


@dataclass(frozen=True)
class ResultRow:
    scheduler: str
    m: int
    preemption: str
    arch: str
    cls: str
    util_over_m: float
    schedulable_frac: float
    n_sets: int
    seed: int

    def as_csv(self) -> list:
        return [self.scheduler, self.m, self.preemption, self.arch, self.cls, f"{self.util_over_m:.4f}",
                f"{self.schedulable_frac:.4f}", self.n_sets, self.seed]


@dataclass
class Results:
    rows: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)         # scheduler -> message
    dominance_violations: dict = field(default_factory=dict)  # (scheduler, util_over_m) -> count
    accepted: dict = field(default_factory=dict)       # (scheduler, util_over_m) -> [bool per set]

    def frac(self, scheduler: str, util_over_m: float) -> float:
        for r in self.rows:
            if r.scheduler == scheduler and abs(r.util_over_m - util_over_m) < 1e-9:
                return r.schedulable_frac
        raise KeyError((scheduler, util_over_m))

    def curve(self, scheduler: str) -> list[tuple[float, float]]:
        return sorted((r.util_over_m, r.schedulable_frac) for r in self.rows if r.scheduler == scheduler)


def build_schedulers(cfg: ExperimentConfig, params: dict | None = None):
    """Scheduler objects by name. Neural ones need params or a checkpoint, else they land in errors."""
    params = dict(params or {})
    out, errors = {}, {}
    for name in cfg.schedulers:
        if name.upper() == "GEDF":
            out[name] = GEDF
        elif name.upper() == "GRM":
            out[name] = GRM
        else:
            p = params.get(name)
            if p is None:
                path = cfg.checkpoints.get(name)
                if path is None or not Path(path).exists():
                    errors[name] = f"missing checkpoint for scheduler {name!r}"
                    log.error(errors[name])
                    continue
                p = nn.load(path)
            out[name] = NeuralScheduler(p)
    return out, errors


def set_accepted(taskset, platform: Platform, scheduler, cfg: ExperimentConfig, set_seed: int) -> bool:
    """Every trial must run a full horizon without a miss; U above capacity is rejected outright."""
    if total_utilization(taskset) > sum(platform.speeds):
        return False
    H = hyperperiod(taskset)
    horizon = min(H, cfg.horizon_cap) if cfg.horizon_cap else H
    for trial in range(cfg.trials_per_set):
        v = run_trajectory(taskset, platform, scheduler, horizon, point_seed(set_seed, trial),
                           cfg.release_mode, sporadic_rho=cfg.sporadic_rho)
        if v.error:
            raise ContractError(f"{scheduler!r}: {v.error}")
        if not v.feasible:
            return False
    return True


def _judge(args) -> dict:
    point, ts, scheds, cfg = args
    platform = cfg.platform()
    return {name: set_accepted(ts, platform, s, cfg, point.seed) for name, s in scheds.items()}


def runtime_schedulability(cfg: ExperimentConfig, params: dict | None = None, grid=None) -> Results:
    """Fraction of generated task sets each scheduler runs without a miss, per utilization point."""
    scheds, errors = build_schedulers(cfg, params)
    res = Results(errors=errors)
    if grid is None:
        grid = experiment_grid(cfg.m, cfg.preemptive, cfg.heterogeneous, cfg.cls, cfg.sweep_points,
                               cfg.sets_per_point, cfg.seed, cfg.lo_frac, cfg.hi_frac, cfg.n_tasks)
    jobs = [(point, inflate_wcet(ts, cfg.overhead) if cfg.overhead else ts) for point, ts in grid]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            verdicts = list(pool.map(_judge, [(p, ts, scheds, cfg) for p, ts in jobs], chunksize=4))
    else:
        verdicts = [_judge((p, ts, scheds, cfg)) for p, ts in jobs]
    # grid order, not completion order, fixes the per-point lists
    for (point, _), flags in zip(jobs, verdicts):
        u = round(point.util_over_m, 10)
        for name, ok in flags.items():
            res.accepted.setdefault((name, u), []).append(ok)
    pre = "preemptive" if cfg.preemptive else "nonpreemptive"
    arch = "hetero" if cfg.heterogeneous else "homo"
    for (name, u), flags in res.accepted.items():
        res.rows.append(ResultRow(name, cfg.m, pre, arch, cfg.cls, u, sum(flags) / len(flags), len(flags), cfg.seed))
    res.rows.sort(key=lambda r: (r.scheduler, r.util_over_m))
    baselines = [n for n in scheds if n.upper() in ("GEDF", "GRM")]
    for name in scheds:
        if name in baselines:
            continue
        for (bname, u), flags in res.accepted.items():
            if bname != name:
                continue
            bad = 0
            for i, ok in enumerate(flags):
                if not ok and any(res.accepted[(b, u)][i] for b in baselines):
                    bad += 1
            res.dominance_violations[(name, u)] = bad
    return res


def emit_plotdata(results: Results | Sequence[ResultRow], path=None) -> str:
    """CSV text with a fixed column order, rows sorted; also written to `path` if given."""
    rows = results.rows if isinstance(results, Results) else list(results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in sorted(rows, key=lambda r: (r.scheduler, r.m, r.preemption, r.arch, r.cls, r.util_over_m)):
        w.writerow(r.as_csv())
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def summary(results: Results) -> str:
    lines = []
    for name in sorted({r.scheduler for r in results.rows}):
        pts = ", ".join(f"{u:.2f}:{f:.2f}" for u, f in results.curve(name))
        lines.append(f"{name:>8}  {pts}")
    for name, msg in results.errors.items():
        lines.append(f"{name:>8}  skipped ({msg})")
    for (name, u), bad in sorted(results.dominance_violations.items()):
        if bad:
            lines.append(f"{name:>8}  U/m={u:.2f}: {bad} sets accepted by a baseline but not by {name}")
    return "\n".join(lines)
