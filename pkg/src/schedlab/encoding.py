"""State tensors and one-hot actions.

A state is a ``capacity x 3 x n_hist`` array. Row r describes the r-th
selectable job by absolute deadline (ties: task id, then instance index):
column 0 the relative deadline, column 1 the remaining work as seen from
the processor type being filled, column 2 whether the job ran in the
previous slot. History slice k holds the same job at slot ``t - k``
(zeros before its release). Rows past the job count are zero padding.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .model import UNITS_PER_SLOT, JobInstance, JobLists, Platform

PREEMPTIVE_HOMO = "preemptive-homo"
PREEMPTIVE_HETERO = "preemptive-hetero"
NONPREEMPTIVE_HOMO = "nonpreemptive-homo"
NONPREEMPTIVE_HETERO = "nonpreemptive-hetero"
MODES = (PREEMPTIVE_HOMO, PREEMPTIVE_HETERO, NONPREEMPTIVE_HOMO, NONPREEMPTIVE_HETERO)

DEFAULT_CAPACITY = 32
DEFAULT_HISTORY = 4


class InvalidAction(ValueError):
    pass


def mode_of(platform: Platform) -> str:
    pre = "preemptive" if platform.preemptive else "nonpreemptive"
    arch = "hetero" if platform.heterogeneous_ else "homo"
    return f"{pre}-{arch}"


def is_preemptive(mode: str) -> bool:
    return mode.startswith("preemptive")


def deadline_order(job: JobInstance):
    return (job.abs_deadline, job.task_id, job.index)


@dataclass(frozen=True)
class SystemState:
    tensor: np.ndarray          # (capacity, 3, n_hist)
    mask: np.ndarray            # (capacity,) selectable rows
    row_to_job: tuple
    t: int
    idle_fast: int
    idle_slow: int
    mode: str
    candidates: tuple           # every selectable job, deadline order, before truncation
    n_hist: int
    capacity: int

    @property
    def idle(self) -> int:
        return self.idle_fast + self.idle_slow

    @property
    def view_speed(self) -> Fraction:
        return Fraction(1) if self.idle_fast > 0 else Fraction(1, 2)

    @property
    def n_selectable(self) -> int:
        return len(self.candidates)

    @property
    def forced(self) -> bool:
        """True when every remaining job fits on idle processors of the type being filled."""
        return is_forced(self.n_selectable, self.idle_fast, self.idle_slow)

    @property
    def done(self) -> bool:
        return self.idle == 0 or self.n_selectable == 0


def is_forced(n_selectable: int, idle_fast: int, idle_slow: int) -> bool:
    """No real choice: nothing to pick, nowhere to run it, or everything fits on the current type."""
    if idle_fast + idle_slow == 0:
        return True
    cur = idle_fast if idle_fast > 0 else idle_slow
    return n_selectable <= cur


def _rows(jobs, t: int, n_hist: int, capacity: int, speed: Fraction) -> np.ndarray:
    out = np.zeros((capacity, 3, n_hist), dtype=np.float32)
    scale = 1.0 / (UNITS_PER_SLOT * float(speed))
    for r, job in enumerate(jobs[:capacity]):
        rem = job.remaining_units
        log = job.work_log
        li = len(log) - 1
        for k in range(n_hist):
            tk = t - k
            if tk < job.release:
                break
            # fold in work done during slots >= tk
            while li >= 0 and log[li][0] >= tk:
                rem += log[li][1]
                li -= 1
            out[r, 0, k] = job.abs_deadline - tk
            out[r, 1, k] = rem * scale
            out[r, 2, k] = 1.0 if (li >= 0 and log[li][0] == tk - 1) else 0.0
    return out


def encode_state(lists: JobLists, t: int, idle, mode: str, n_hist: int = DEFAULT_HISTORY,
                 capacity: int = DEFAULT_CAPACITY) -> SystemState:
    """Build s_{t,i}. `idle` is either a count (homogeneous) or ``(idle_fast, idle_slow)``."""
    if capacity < 1:
        raise ValueError("capacity must be positive")
    if isinstance(idle, tuple):
        idle_fast, idle_slow = idle
    else:
        idle_fast, idle_slow = int(idle), 0
    if is_preemptive(mode):
        jobs = list(lists.waiting) + list(lists.running)
    else:
        jobs = list(lists.waiting)
    jobs.sort(key=deadline_order)
    return _build(tuple(jobs), t, idle_fast, idle_slow, mode, n_hist, capacity)


def _build(candidates, t, idle_fast, idle_slow, mode, n_hist, capacity) -> SystemState:
    speed = Fraction(1) if idle_fast > 0 or idle_slow == 0 else Fraction(1, 2)
    tensor = _rows(candidates, t, n_hist, capacity, speed)
    mask = np.zeros(capacity, dtype=bool)
    kept = candidates[:capacity]
    mask[:len(kept)] = True
    return SystemState(tensor, mask, kept, t, idle_fast, idle_slow, mode, candidates, n_hist, capacity)


def action_vector(index: int, capacity: int) -> np.ndarray:
    a = np.zeros(capacity, dtype=np.int8)
    a[index] = 1
    return a


def action_index(action) -> int:
    if isinstance(action, (int, np.integer)):
        return int(action)
    a = np.asarray(action)
    hot = np.flatnonzero(a)
    if len(hot) != 1:
        raise InvalidAction("an action vector must have exactly one entry set")
    return int(hot[0])


def intermediate_state(state: SystemState, action) -> SystemState:
    """s_{t,i-1}: drop the selected job and consume one processor of the current type.

    Once the last fast processor is taken the remaining-work column switches
    to the slow-processor view.
    """
    idx = action_index(action)
    if state.idle == 0:
        raise InvalidAction("no idle processor left in this slot")
    if not (0 <= idx < state.capacity) or not state.mask[idx]:
        raise InvalidAction(f"row {idx} is not a selectable job")
    cands = state.candidates[:idx] + state.candidates[idx + 1:]
    if state.idle_fast > 0:
        fast, slow = state.idle_fast - 1, state.idle_slow
    else:
        fast, slow = 0, state.idle_slow - 1
    return _build(cands, state.t, fast, slow, state.mode, state.n_hist, state.capacity)


def forced_completion(state: SystemState) -> list[JobInstance]:
    """All remaining jobs, when the choice among them cannot matter (see ``forced``)."""
    return list(state.candidates) if state.forced and state.idle else []
