"""Acceptance suite: one recorded verdict per criterion, printed at the end of the run."""

import time
from fractions import Fraction

import numpy as np
import pytest

from schedlab import nn
from schedlab.cli import main
from schedlab.encoding import encode_state, mode_of
from schedlab.evaluation import ExperimentConfig, runtime_schedulability
from schedlab.mcts import EdgeStats, backup
from schedlab.model import Platform, TaskSpec, total_utilization
from schedlab.nn import NetConfig
from schedlab.schedulers import GEDF, generate_static_table, replay_table
from schedlab.simulator import PERIODIC, RANDOM_OFFSET, STRICT_SPORADIC, Simulator, idle_by_type, run_trajectory
from schedlab.taskgen import randfixedsum
from schedlab.training import TrainConfig, policy_iteration, training_sets

from oracles import exhaustive_feasible, finite_difference_check
from support import RandomScheduler, random_tiny_taskset, relu_pattern, search_finds_feasible

SMALL_PERIODS = (4, 5, 6, 8, 10, 12, 15, 20, 24, 30, 40, 60)


def uniprocessor_set(rng, fill=False):
    """Implicit-deadline periodic set with 0.3 <= U <= 1 and a hyperperiod of at most 120.

    With ``fill`` one task's wcet is raised to make U exactly 1 when an integer wcet allows it.
    """
    while True:
        n = int(rng.integers(1, 7))
        u = randfixedsum(n, float(rng.uniform(0.3, 1.0)), 0.0, 1.0, rng)
        ps = rng.choice(SMALL_PERIODS, size=n)
        es = np.floor(u * ps).astype(int)
        if not (es >= 1).all():
            continue
        ts = [TaskSpec(i, int(p), int(e)) for i, (p, e) in enumerate(zip(ps, es))]
        slack = 1 - total_utilization(ts)
        if fill:
            for i, t in enumerate(ts):
                extra = slack * t.period
                if extra.denominator == 1 and extra > 0:
                    ts[i] = TaskSpec(t.id, t.period, t.wcet + int(extra))
                    slack = 0
                    break
        if slack >= 0:
            return ts


def test_c1_uniprocessor_edf_optimality(criterion):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    misses, full = 0, 0
    for k in range(200):
        ts = uniprocessor_set(rng, fill=k % 2 == 0)
        full += total_utilization(ts) == 1
        v = run_trajectory(ts, Platform.homogeneous(1), GEDF, release_mode=PERIODIC)
        misses += not v.feasible
    dt = time.perf_counter() - t0
    ok = criterion(1, misses == 0 and dt < 120,
                   f"200 sets (U=1 exactly: {full}), misses={misses}, {dt:.1f}s")
    assert ok


def test_c2_search_matches_enumeration(criterion):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    agree, idle_diff, feasible = 0, 0, 0
    for _ in range(50):
        ts = random_tiny_taskset(rng, max_tasks=3, periods=(2, 3, 4, 6, 8, 12), max_h=24)
        truth = exhaustive_feasible(ts, m=1, preemptive=False)
        found, _, _ = search_finds_feasible(ts)
        agree += found == truth
        feasible += truth
        # for information: schedules that may idle with work pending
        idle_diff += exhaustive_feasible(ts, m=1, preemptive=False, work_conserving=False) != truth
    dt = time.perf_counter() - t0
    ok = criterion(2, agree == 50 and dt < 300,
                   f"agreement {agree}/50 ({feasible} feasible), idle-allowing differs on {idle_diff}, {dt:.1f}s")
    assert ok


def test_c3_gradient_check(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for squared in (False, True):
        cfg = NetConfig(m=2, capacity=8, n_hist=2, filters=8, blocks=5, hidden=8, reg_coeff=1e-3,
                        squared_value_loss=squared)
        params = nn.init_params(cfg, seed=11, dtype=np.float64)
        rng = np.random.default_rng(5)
        x = rng.uniform(0, 30, (4, 8, 6))
        mask = np.zeros((4, 8), bool)
        for b in range(4):
            mask[b, :rng.integers(1, 9)] = True
        x[~mask] = 0
        pi = rng.uniform(0.1, 1, (4, 8)) * mask
        pi /= pi.sum(1, keepdims=True)
        _, v = nn.forward_batch(params, x, mask, train=True)
        z = np.clip(v + np.where(rng.random(4) < 0.5, -0.4, 0.4), -1, 1)
        _, grads = nn.gradients(params, x, mask, pi, z, train=True)

        def f():
            pp, vv = nn.forward_batch(params, x, mask, train=True)
            return nn.loss(pp, vv, pi, z, cfg.reg_coeff, params, squared)

        err, _ = finite_difference_check(f, params.weights, grads, pattern=relu_pattern(params, x, mask))
        worst = max(worst, err)
    dt = time.perf_counter() - t0
    ok = criterion(3, worst < 1e-4 and dt < 60, f"worst relative error {worst:.2e}, {dt:.1f}s")
    assert ok


def test_c4_backup_arithmetic(criterion):
    edges = [EdgeStats(1 / 3) for _ in range(3)]
    backup(edges, [0.5, -0.2, 0.3])
    first = [e.value for e in edges]
    backup(edges, [0.1, 0.5, 0.3])
    second = [e.value for e in edges]
    expected1 = [0.2, 0.05, 0.3]
    expected2 = [(0.2 + 0.3) / 2, (0.05 + 0.4) / 2, 0.3]
    ok = criterion(4, np.allclose(first, expected1, rtol=0, atol=1e-15)
                   and np.allclose(second, expected2, rtol=0, atol=1e-15)
                   and all(e.visits == 2 for e in edges),
                   f"Q after one rollout {first}, after two {second}")
    assert ok


def test_c5_normalization_and_conservation(criterion):
    steps, finished, worst_sum, v_range = 0, 0, 0.0, [1.0, -1.0]
    conserved = True
    config_seed = 0
    while steps < 10_000:
        rng = np.random.default_rng(config_seed)
        m = int(rng.integers(1, 5))
        hetero, preemptive = bool(rng.integers(2)), bool(rng.integers(2))
        make = Platform.heterogeneous if hetero else Platform.homogeneous
        platform = make(m, preemptive)
        ts = [TaskSpec(i, int(p), int(rng.integers(1, p // 2 + 1)))
              for i, p in enumerate(rng.choice([5, 8, 10, 12, 20], size=m + 3))]
        mode = rng.choice([PERIODIC, STRICT_SPORADIC, RANDOM_OFFSET])
        sim = Simulator(ts, platform, mode, seed=config_seed)
        params = nn.init_params(NetConfig(m=m, capacity=8, n_hist=2, mode=mode_of(platform), filters=8, blocks=2,
                                          hidden=8), seed=config_seed)
        sched = RandomScheduler(config_seed)
        for _ in range(500):
            sim.release_jobs()
            state = encode_state(sim.lists, sim.clock, idle_by_type(sim), params.config.mode, 2, 8)
            if state.mask.any():
                p, v = nn.forward(params, state)
                worst_sum = max(worst_sum, abs(float(p.sum()) - 1))
                v_range = [min(v_range[0], v), max(v_range[1], v)]
            out = sim.advance(sched.decide(sim))
            for job in out.finished:
                worked = (job.allocated[0] + job.allocated[1]) * Fraction(1, 2)
                conserved &= worked == job.exec_time
                finished += 1
            steps += 1
        config_seed += 1
    ok = criterion(5, worst_sum <= 1e-6 and -1 <= v_range[0] and v_range[1] <= 1 and conserved and finished > 0,
                   f"{steps} steps, max |sum p - 1| = {worst_sum:.1e}, v in [{v_range[0]:.3f}, {v_range[1]:.3f}], "
                   f"{finished} finished jobs conserved={conserved}")
    assert ok


DESK_TRAIN = dict(m=2, preemptive=False, cls="heavy", iterations=20, rollouts=32, max_rollout_slots=300,
                  train_horizon=3000, eval_horizon=3000, updates_per_iteration=50, batch_size=64, patience=None,
                  train_sets=20, validation_sets=0, lo_frac=0.5, hi_frac=0.9, seed=2026)


@pytest.mark.slow
def test_c6_desk_training_direction(criterion):
    cfg = TrainConfig(**DESK_TRAIN)
    train, _ = training_sets(cfg)
    t0 = time.perf_counter()
    ckpts = policy_iteration(train, None, cfg)
    exp = ExperimentConfig(m=2, preemptive=False, cls="heavy", sweep_points=5, lo_frac=0.5, hi_frac=0.9,
                           sets_per_point=50, seed=2026, schedulers=("GEDF", "neural"))
    res = runtime_schedulability(exp, params={"neural": ckpts[-1]})
    dt = time.perf_counter() - t0
    gedf, neural = res.curve("GEDF"), res.curve("neural")
    diffs = [n - g for (_, g), (_, n) in zip(gedf, neural)]
    at_least = sum(d >= 0 for d in diffs) / len(diffs)
    pts = " ".join(f"{u:.1f}:{g:.2f}/{n:.2f}" for (u, g), (_, n) in zip(gedf, neural))
    ok = criterion(6, len(ckpts) - 1 >= 20 and at_least >= 0.6 and min(diffs) >= -0.10,
                   f"{len(ckpts) - 1} iterations; U/m:GEDF/neural {pts}; neural>=GEDF at {at_least:.0%}, "
                   f"worst gap {min(diffs):+.2f}, {dt:.0f}s")
    assert ok


STATIC_PERIODS = (2, 3, 4, 6, 8, 12, 16, 24, 48)


def feasible_static_candidates(n, rng, hard_wanted=5, hard_tries=20_000):
    """Feasible non-preemptive m=1 sets; first up to `hard_wanted` that non-preemptive EDF misses."""
    platform = Platform.homogeneous(1, preemptive=False)
    hard = []
    for _ in range(hard_tries):
        if len(hard) == hard_wanted:
            break
        ts = random_tiny_taskset(rng, max_tasks=4, periods=STATIC_PERIODS, max_h=48)
        if len(ts) < 2 or run_trajectory(ts, platform, GEDF, release_mode=PERIODIC).feasible:
            continue
        if exhaustive_feasible(ts, m=1, preemptive=False):
            hard.append(ts)
    out = list(hard)
    while len(out) < n:
        ts = random_tiny_taskset(rng, max_tasks=4, periods=STATIC_PERIODS, max_h=48)
        if len(ts) < 2 or total_utilization(ts) < Fraction(1, 2):
            continue
        if exhaustive_feasible(ts, m=1, preemptive=False):
            out.append(ts)
    return out, len(hard)


def test_c7_static_tables(criterion):
    rng = np.random.default_rng(707)
    sets, n_hard = feasible_static_candidates(20, rng)
    platform = Platform.homogeneous(1, preemptive=False)
    found, clean, rollouts = 0, 0, []
    t0 = time.perf_counter()
    for i, ts in enumerate(sets):
        params = nn.init_params(NetConfig(m=1, capacity=8, n_hist=2, mode=mode_of(platform), filters=16, blocks=2,
                                          hidden=16), seed=i)
        res = generate_static_table(ts, platform, params, rollout_threshold=5000, seed=i)
        if res.ok:
            found += 1
            rollouts.append(res.rollouts)
            clean += replay_table(res.table, ts).feasible
    dt = time.perf_counter() - t0
    ok = criterion(7, found >= 16 and clean == found,
                   f"tables for {found}/20 feasible sets ({n_hard} that non-preemptive EDF misses; max {max(rollouts, default=0)} rollouts), "
                   f"{clean}/{found} replay without a miss, {dt:.1f}s")
    assert ok


def test_c8_evaluate_byte_identical(criterion, tmp_path):
    ckpt = tmp_path / "n.s0nn"
    nn.save(nn.init_params(NetConfig(m=2, capacity=8, n_hist=2, filters=8, blocks=2, hidden=8), seed=1), ckpt)
    args = ["--seed", "42", "evaluate", "--m", "2", "--class", "heavy", "--points", "3", "--sets", "10",
            "--schedulers", "GEDF,GRM,neural", "--checkpoint", str(ckpt)]
    codes = [main(args + ["--out", str(tmp_path / f"{k}.csv")]) for k in "ab"]
    a, b = (tmp_path / "a.csv").read_bytes(), (tmp_path / "b.csv").read_bytes()
    ok = criterion(8, codes == [0, 0] and a == b and a.count(b"\n") == 10,
                   f"exit codes {codes}, {len(a)} bytes, identical={a == b}")
    assert ok


def test_c9_learning_rate_table(criterion):
    rows = [(0, 500, 0.1, 0.01), (500, 1000, 0.01, 0.001), (1000, 1500, 0.001, 0.0001),
            (1500, 2000, 0.0001, 0.00001)]
    ok = all(nn.lr_schedule(s) == (p, v) for lo, hi, p, v in rows for s in (lo, (lo + hi) // 2, hi - 1))
    ok = criterion(9, ok, "four phases checked at their first, middle and last simulation")
    assert ok
