"""Policy iteration: search-guided self-simulation, sample harvest, network updates."""

from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .encoding import mode_of
from .mcts import NetEvaluator, SearchTree, search
from .model import Platform, TaskSpec, hyperperiod
from .nn import NetConfig, NetParams, TrainSample
from .schedulers import NeuralScheduler
from .simulator import STRICT_SPORADIC, Simulator, run_trajectory
from .taskgen import experiment_grid, point_seed

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    m: int = 2
    preemptive: bool = True
    heterogeneous: bool = False
    capacity: int = 32
    n_hist: int = 4
    filters: int = 64
    blocks: int = 5
    hidden: int = 64
    input_scale: float = 100.0
    reg_coeff: float = 1e-4
    squared_value_loss: bool = False
    iterations: int = 20
    trajectories_per_set: int = 1
    rollouts: int = 200
    temperature: float = 1.0
    c_puct: float = 1.0
    puct: bool = False
    updates_per_iteration: int = 10000
    batch_size: int = 256
    momentum: float = 0.9
    replay_capacity: int = 200_000
    z_mode: str = "realized"           # or "max-rollout"
    train_horizon: int | None = None   # cap on the simulated horizon (slots)
    max_rollout_slots: int | None = None
    release_mode: str = STRICT_SPORADIC
    sporadic_rho: float = 0.5
    eval_horizon: int | None = None
    patience: int | None = 3
    cls: str = "heavy"                 # task-set class for generated training/validation sets
    train_sets: int = 20
    validation_sets: int = 10
    lo_frac: float = 0.5               # training utilizations span [lo_frac*m, hi_frac*m]
    hi_frac: float = 0.9
    seed: int = 0

    def platform(self) -> Platform:
        make = Platform.heterogeneous if self.heterogeneous else Platform.homogeneous
        return make(self.m, self.preemptive)

    def net_config(self) -> NetConfig:
        return NetConfig(self.m, self.capacity, self.n_hist, mode_of(self.platform()), self.filters,
                         self.blocks, self.hidden, self.input_scale, self.reg_coeff,
                         self.squared_value_loss)

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for k, v in values.items():
            k = k.replace("-", "_")
            if k in known:
                kwargs[k] = coerce(v, getattr(cls, k, None), k)
        return cls(**kwargs)


def coerce(value, default, name=""):
    if not isinstance(value, str):
        return value
    v = value.strip()
    if v.lower() in ("none", "null", ""):
        return None
    if isinstance(default, bool) or v.lower() in ("true", "false", "yes", "no"):
        return v.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(v)
    if isinstance(default, float):
        return float(v)
    try:
        return int(v)
    except ValueError:
        try:
            return float(v)
        except ValueError:
            return v


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for ln in Path(path).read_text().splitlines():
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        if "=" not in ln:
            raise ValueError(f"config line without '=': {ln!r}")
        k, v = ln.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def training_sets(cfg: TrainConfig):
    """Generated (training, validation) task sets, spread over the configured utilization range."""
    def draw(n, tag):
        if n <= 0:
            return []
        points = min(n, 5)
        per = -(-n // points)
        grid = experiment_grid(cfg.m, cfg.preemptive, cfg.heterogeneous, cfg.cls, points, per,
                               point_seed(cfg.seed, tag), cfg.lo_frac, cfg.hi_frac)
        # round-robin over utilization points so truncation keeps the spread
        by_set = sorted(grid, key=lambda g: (g[0].set_index, g[0].total_util))
        return [ts for _, ts in by_set[:n]]
    return draw(cfg.train_sets, 11), draw(cfg.validation_sets, 12)


def normalize_z(z_raw: float, remaining: float) -> float:
    """Map survival slots onto [-1, 1]: the rest of the horizon -> +1, nothing -> -1."""
    if remaining <= 0:
        return 1.0
    return 2.0 * min(max(z_raw, 0) / remaining, 1.0) - 1.0


class ReplayStore:
    """Bounded sample buffer; draws come from the most recent iteration by default."""

    def __init__(self, capacity: int = 200_000):
        self.capacity = capacity
        self.items: deque = deque(maxlen=capacity)

    def __len__(self):
        return len(self.items)

    def add(self, samples, iteration: int) -> None:
        for s in samples:
            self.items.append((iteration, s))

    def pool(self, iteration: int | None = None) -> list[TrainSample]:
        if not self.items:
            return []
        if iteration is None:
            iteration = self.items[-1][0]
        return [s for it, s in self.items if it == iteration]

    def sample(self, n: int, rng: np.random.Generator, iteration: int | None = None,
               pool: list | None = None) -> list[TrainSample]:
        pool = self.pool(iteration) if pool is None else pool
        if not pool:
            return []
        idx = rng.integers(len(pool), size=n)
        return [pool[i] for i in idx]


@dataclass
class Decision:
    state: object
    pi: np.ndarray
    clock: int
    z_search: int


@dataclass
class Trajectory:
    decisions: list
    end_slot: int
    horizon: int
    feasible: bool


def play_trajectory(taskset: Sequence[TaskSpec], params: NetParams, cfg: TrainConfig, seed) -> Trajectory:
    """Simulate one horizon, choosing every decision by sampling the search policy."""
    rng = np.random.default_rng(seed)
    sim = Simulator(taskset, cfg.platform(), cfg.release_mode, seed, sporadic_rho=cfg.sporadic_rho)
    H = hyperperiod(taskset)
    horizon = min(H, cfg.train_horizon) if cfg.train_horizon else H
    tree = SearchTree(sim, NetEvaluator(params), horizon, cfg.c_puct, cfg.puct, cfg.n_hist, cfg.capacity,
                      seed=seed, max_rollout_slots=cfg.max_rollout_slots)
    node = tree.root
    decisions = []
    while node.terminal is None:
        tree.root = node
        res = search(tree, node, cfg.rollouts, cfg.temperature)
        a = int(rng.choice(len(res.pi), p=res.pi))
        decisions.append(Decision(node.state, res.pi, node.clock, int(max(res.best_survival[a], 0))))
        node = tree.step(node, a)
    return Trajectory(decisions, node.end_slot, horizon, node.terminal == "feasible")


def harvest_samples(traj: Trajectory, z_mode: str = "realized") -> list[TrainSample]:
    """One (s, pi, z) sample per decision state of a finished trajectory."""
    out = []
    end = min(traj.end_slot, traj.horizon)
    for d in traj.decisions:
        remaining = traj.horizon - d.clock
        z_raw = d.z_search if z_mode == "max-rollout" else end - d.clock
        out.append(TrainSample(d.state.tensor, d.state.mask, d.pi, normalize_z(z_raw, remaining)))
    return out


def schedulability(tasksets, params: NetParams, cfg: TrainConfig, seed: int = 0, scheduler=None) -> float:
    if not tasksets:
        return float("nan")
    sched = scheduler or NeuralScheduler(params)
    ok = 0
    for i, ts in enumerate(tasksets):
        H = hyperperiod(ts)
        horizon = min(H, cfg.eval_horizon) if cfg.eval_horizon else H
        v = run_trajectory(ts, cfg.platform(), sched, horizon, point_seed(seed, 7, i), cfg.release_mode,
                           sporadic_rho=cfg.sporadic_rho)
        ok += v.feasible
    return ok / len(tasksets)


@dataclass
class IterationLog:
    iteration: int
    mean_loss: float
    validation_schedulability: float
    samples: int
    first_loss: float = float("nan")
    last_loss: float = float("nan")


def policy_iteration(tasksets: Sequence[Sequence[TaskSpec]], params0: NetParams | None, cfg: TrainConfig,
                     validation: Sequence[Sequence[TaskSpec]] = (), out_dir=None,
                     progress: list | None = None) -> list[NetParams]:
    """Return the checkpoint sequence theta_0, theta_1, ... (copies).

    Each iteration simulates every training task set with search guided by
    the previous network, keeps that iteration's samples, and runs
    ``updates_per_iteration`` minibatch steps on uniform draws from them.
    """
    if not tasksets:
        raise ValueError("need at least one training task set")
    params = params0.copy() if params0 is not None else nn.init_params(cfg.net_config(), seed=cfg.seed)
    rng = np.random.default_rng(point_seed(cfg.seed, 1))
    store = ReplayStore(cfg.replay_capacity)
    checkpoints = [params.copy()]
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        nn.save(params, out_dir / "ckpt_0000.s0nn")
    if progress is None:
        progress = []
    best_val, stale = -1.0, 0
    simulations = 0
    for k in range(1, cfg.iterations + 1):
        samples = []
        for si, ts in enumerate(tasksets):
            for r in range(cfg.trajectories_per_set):
                traj = play_trajectory(ts, params, cfg, point_seed(cfg.seed, 2, k, si, r))
                samples += harvest_samples(traj, cfg.z_mode)
                simulations += 1
        store.add(samples, k)
        pool = store.pool(k)
        losses = []
        lr_p, lr_v = nn.lr_schedule(simulations - 1)
        if not pool:
            log.warning("iteration %d produced no decision states; skipping update", k)
        else:
            for _ in range(cfg.updates_per_iteration):
                batch = store.sample(cfg.batch_size, rng, pool=pool)
                rep = nn.backward_and_update(params, batch, lr_p, lr_v, cfg.momentum)
                if rep.skipped:
                    log.warning("iteration %d: update skipped (%s)", k, rep.reason)
                else:
                    losses.append(rep.loss)
        val = schedulability(validation, params, cfg, seed=cfg.seed) if validation else float("nan")
        entry = IterationLog(k, float(np.mean(losses)) if losses else float("nan"), val, len(samples))
        if losses:
            w = max(1, min(100, len(losses) // 2))
            entry.first_loss = float(np.mean(losses[:w]))
            entry.last_loss = float(np.mean(losses[-w:]))
        log.info("iteration %d: %d samples, mean loss %.4f, validation %.3f", k, len(samples),
                 entry.mean_loss, val)
        progress.append(entry)
        checkpoints.append(params.copy())
        if out_dir:
            nn.save(params, out_dir / f"ckpt_{k:04d}.s0nn")
            write_progress(progress, out_dir / "progress.csv")
        if validation and cfg.patience:
            if val > best_val:
                best_val, stale = val, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("validation plateaued for %d iterations; stopping", stale)
                    break
    return checkpoints


def write_progress(entries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "mean_loss", "validation_schedulability"])
        for e in entries:
            w.writerow([e.iteration, f"{e.mean_loss:.6f}", f"{e.validation_schedulability:.4f}"])
