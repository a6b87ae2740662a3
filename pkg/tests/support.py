"""Small helpers shared by several test modules."""

from math import lcm

import numpy as np

from schedlab.mcts import FEASIBLE, SearchTree, UniformEvaluator, search
from schedlab.model import Platform, TaskSpec
from schedlab.simulator import PERIODIC, Simulator


class EdfFirstEvaluator:
    """Nearly all prior mass on row 0, which is always the earliest deadline."""

    def __call__(self, state):
        p = state.mask * 1e-3
        if state.mask.any():
            p[int(np.flatnonzero(state.mask)[0])] = 1.0
        return p / max(p.sum(), 1e-12), 0.0


def search_finds_feasible(tasks, m=1, preemptive=False, budget=100_000):
    """Exhaustive uniform-prior search over periodic releases: (found, exhausted, rollouts)."""
    H = lcm(*(t.period for t in tasks))
    sim = Simulator(tasks, Platform.homogeneous(m, preemptive), PERIODIC)
    tree = SearchTree(sim, UniformEvaluator(), H)
    if tree.root.terminal is not None:
        return tree.root.terminal == FEASIBLE, True, 0
    res = search(tree, n_rollouts=budget, stop_on_feasible=True)
    return res.feasible_leaf is not None, res.exhausted, res.rollouts


def random_tiny_taskset(rng, max_tasks=3, periods=(2, 3, 4, 6, 8, 12), max_h=24):
    while True:
        n = int(rng.integers(1, max_tasks + 1))
        ps = [int(p) for p in rng.choice(periods, size=n)]
        if lcm(*ps) > max_h:
            continue
        return [TaskSpec(i, p, int(rng.integers(1, p + 1))) for i, p in enumerate(ps)]


def random_implicit_taskset(rng, periods=(4, 5, 6, 8, 10, 12, 20, 24), max_tasks=5):
    n = int(rng.integers(1, max_tasks + 1))
    ps = [int(p) for p in rng.choice(periods, size=n)]
    return [TaskSpec(i, p, int(rng.integers(1, max(p // n, 1) + 1))) for i, p in enumerate(ps)]


class RandomScheduler:
    """Picks a random legal assignment; exercises paths priority rules never take."""

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def decide(self, sim):
        assignment = sim.pinned()
        jobs = list(sim.selectable_jobs())
        self.rng.shuffle(jobs)
        procs = list(sim.idle_processors())
        self.rng.shuffle(procs)
        k = int(self.rng.integers(0, min(len(jobs), len(procs)) + 1))
        for p, j in zip(procs[:k], jobs[:k]):
            assignment[p] = j
        return assignment


def relu_pattern(params, x, mask):
    """Callable returning every ReLU on/off flag of a training-mode forward pass."""
    from schedlab.nn import _forward

    def pattern():
        _, _, cache = _forward(params, x, mask, train=True, bn_momentum=0.0)
        flags = [b[3].ravel() for b in cache["blocks"]]
        flags += [cache[k].ravel() for k in ("z0", "z1", "y0")]
        return np.concatenate(flags)
    return pattern
