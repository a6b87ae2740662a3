"""Random task-set generation over a utilization sweep.

Per-task utilizations come from Stafford's randfixedsum, which draws
uniformly from the slice of the hypercube [lo, hi]^n whose coordinates sum
to the requested total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import InvalidInput, TaskSpec

PERIOD_TABLE = (50, 54, 60, 64, 72, 75, 80, 81, 90, 96, 100, 108, 120, 125, 128,
                135, 144, 150, 160, 162, 180, 192, 200)

CLASS_BOUNDS = {
    "light": (0.0, 0.2),
    "medium": (0.2, 0.5),
    "heavy": (0.5, 0.8),
    "mixed": (0.0, 0.8),
}

# achieved utilization may fall short of the request by at most this fraction
MAX_SHORTFALL = 0.005
_EPS = 1e-9


class GenerationError(InvalidInput):
    pass


def randfixedsum(n: int, total: float, lo: float, hi: float, rng: np.random.Generator) -> np.ndarray:
    """One vector of `n` values in [lo, hi] summing to `total`, uniform on that polytope.

    Port of Roger Stafford's randfixedsum (2006) for a single sample.
    """
    if n < 1:
        raise GenerationError("n must be positive")
    if not (n * lo - _EPS <= total <= n * hi + _EPS) or hi < lo:
        raise GenerationError(f"cannot split {total} over {n} values in [{lo}, {hi}]")
    if hi == lo:
        return np.full(n, lo)
    s = (total - n * lo) / (hi - lo)
    k = max(min(math.floor(s), n - 1), 0)
    s = max(min(s, k + 1), k)
    s1 = s - np.arange(k, k - n, -1, dtype=float)
    s2 = np.arange(k + n, k, -1, dtype=float) - s

    tiny = np.finfo(float).tiny
    w = np.zeros((n, n + 1))
    w[0, 1] = np.finfo(float).max
    t = np.zeros((max(n - 1, 1), n))
    for i in range(2, n + 1):
        tmp1 = w[i - 2, 1:i + 1] * s1[:i] / i
        tmp2 = w[i - 2, 0:i] * s2[n - i:n] / i
        w[i - 1, 1:i + 1] = tmp1 + tmp2
        tmp3 = w[i - 1, 1:i + 1] + tiny
        upper = s2[n - i:n] > s1[:i]
        t[i - 2, :i] = np.where(upper, tmp2 / tmp3, 1.0 - tmp1 / tmp3)

    x = np.zeros(n)
    rt = rng.random(n - 1)
    rs = rng.random(n - 1)
    j = k  # 0-based column into t
    sm, pr = 0.0, 1.0
    for i in range(n - 1, 0, -1):
        e = 1 if rt[n - i - 1] <= t[i - 1, j] else 0
        sx = rs[n - i - 1] ** (1.0 / i)
        sm += (1.0 - sx) * pr * s / (i + 1)
        pr *= sx
        x[n - i - 1] = sm + pr * e
        s -= e
        j -= e
    x[n - 1] = sm + pr * s
    x = x[rng.permutation(n)]
    return np.clip((hi - lo) * x + lo, lo, hi)


@dataclass(frozen=True)
class GenSpec:
    n_tasks: int
    total_util: float
    cls: str = "mixed"
    period_table: tuple = PERIOD_TABLE
    seed: int | Sequence[int] = 0

    def __post_init__(self):
        if self.cls not in CLASS_BOUNDS:
            raise GenerationError(f"unknown utilization class {self.cls!r}")
        lo, hi = CLASS_BOUNDS[self.cls]
        if self.n_tasks < 1 or self.n_tasks * hi < self.total_util - _EPS or self.n_tasks * lo > self.total_util + _EPS:
            raise GenerationError(
                f"{self.n_tasks} {self.cls} tasks cannot reach total utilization {self.total_util}")


def default_n_tasks(total_util: float, cls: str) -> int:
    """ceil(U / class mean), clamped into the range of task counts that can reach U."""
    lo, hi = CLASS_BOUNDS[cls]
    n_min = max(math.ceil(total_util / hi - _EPS), 1)
    n_max = math.floor(total_util / lo + _EPS) if lo > 0 else None
    if n_max is not None and n_max < n_min:
        raise GenerationError(f"no number of {cls} tasks sums to utilization {total_util}")
    n = max(math.ceil(total_util / ((lo + hi) / 2) - _EPS), n_min)
    return n if n_max is None else min(n, n_max)


def generate_taskset(spec: GenSpec, max_attempts: int = 100_000) -> list[TaskSpec]:
    lo, hi = CLASS_BOUNDS[spec.cls]
    rng = np.random.default_rng(spec.seed)
    table = np.asarray(spec.period_table, dtype=np.int64)
    target = spec.total_util
    for _ in range(max_attempts):
        u = randfixedsum(spec.n_tasks, target, lo, hi, rng)
        periods = rng.choice(table, size=spec.n_tasks)
        wcets = np.floor(u * periods + 0.5).astype(np.int64)
        if (wcets < 1).any():
            continue
        achieved = float(np.sum(wcets / periods))
        if not (target * (1 - MAX_SHORTFALL) - _EPS <= achieved <= target + _EPS):
            continue
        if (wcets / periods > hi + _EPS).any():
            continue
        return [TaskSpec(i, int(p), int(e), int(p)) for i, (p, e) in enumerate(zip(periods, wcets))]
    raise GenerationError(f"no admissible task set after {max_attempts} attempts for {spec}")


@dataclass(frozen=True)
class GridPoint:
    m: int
    preemptive: bool
    heterogeneous: bool
    cls: str
    total_util: float
    set_index: int
    seed: int

    @property
    def util_over_m(self) -> float:
        return self.total_util / self.m


def sweep_utilizations(m: int, sweep_points: int, lo_frac: float = 0.5, hi_frac: float = 1.0) -> list[float]:
    if sweep_points < 2:
        raise InvalidInput("need at least two sweep points")
    return [round(float(u), 10) for u in np.linspace(lo_frac * m, hi_frac * m, sweep_points)]


def point_seed(seed: int, *path: int) -> int:
    """Stable 63-bit child seed for a position in the experiment grid."""
    return int(np.random.SeedSequence([seed, *path]).generate_state(1, np.uint64)[0]) >> 1


def experiment_grid(m: int, preemptive: bool, heterogeneous: bool, cls: str, sweep_points: int,
                    sets_per_point: int, seed: int, lo_frac: float = 0.5, hi_frac: float = 1.0,
                    n_tasks: int | None = None, period_table=PERIOD_TABLE):
    """All (grid point, task set) pairs of one configuration, deterministic in `seed`."""
    out = []
    for pi, util in enumerate(sweep_utilizations(m, sweep_points, lo_frac, hi_frac)):
        n = n_tasks or default_n_tasks(util, cls)
        for si in range(sets_per_point):
            s = point_seed(seed, pi, si)
            ts = generate_taskset(GenSpec(n, util, cls, tuple(period_table), s))
            out.append((GridPoint(m, preemptive, heterogeneous, cls, util, si, s), ts))
    return out
