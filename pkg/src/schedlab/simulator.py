"""Slot-stepped multiprocessor simulator.

One slot of simulation is: ``release_jobs()`` at the current clock, a
scheduler picks an assignment ``{processor: job}``, then ``advance()``
executes that assignment for one slot, retires finished jobs, reports
deadline misses at the new clock and increments it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .model import (RUNNING, WAITING, FINISHED, ContractError, InvalidInput, JobInstance,
                    JobLists, Platform, TaskSpec, hyperperiod, make_job)

RANDOM_OFFSET = "random-offset"
STRICT_SPORADIC = "strict-sporadic"
PERIODIC = "periodic"
RELEASE_MODES = (RANDOM_OFFSET, STRICT_SPORADIC, PERIODIC)


@dataclass
class StepOutcome:
    released: list = field(default_factory=list)
    finished: list = field(default_factory=list)
    missed: list = field(default_factory=list)  # (job, slot)
    clock: int = 0


@dataclass
class SimStats:
    preemptions: int = 0
    migrations: int = 0
    busy_slots: int = 0


class Simulator:
    """Mutable simulation state. Use :meth:`clone` to branch (e.g. for rollouts)."""

    def __init__(self, taskset: Sequence[TaskSpec], platform: Platform,
                 release_mode: str = STRICT_SPORADIC, seed=0, sporadic_rho: float = 0.5,
                 exec_beta: float = 1.0, offset_per_step: bool = True, trace: list | None = None):
        if release_mode not in RELEASE_MODES:
            raise InvalidInput(f"unknown release mode {release_mode!r}")
        self.tasks = sorted(taskset, key=lambda t: t.id)
        self.platform = platform
        self.release_mode = release_mode
        self.rng = np.random.default_rng(seed)
        self.sporadic_rho = sporadic_rho
        self.exec_beta = exec_beta
        self.offset_per_step = offset_per_step
        self.trace = trace
        self.clock = 0
        self.waiting: list[JobInstance] = []
        self.running: dict[int, JobInstance] = {}
        self.pending: dict[int, JobInstance | None] = {t.id: None for t in self.tasks}
        self.next_index = {t.id: 0 for t in self.tasks}
        self.last_release = {t.id: None for t in self.tasks}
        self.stats = SimStats()
        self._released_at = -1
        self._max_period = max((t.period for t in self.tasks), default=1)
        self.offset = int(self.rng.integers(self._max_period))
        if release_mode == STRICT_SPORADIC:
            self.next_release = {t.id: self._extra_delay() for t in self.tasks}
        else:
            self.next_release = {}

    # -- bookkeeping -----------------------------------------------------------

    def _extra_delay(self) -> int:
        if self.sporadic_rho >= 1:
            return 0
        return int(self.rng.geometric(self.sporadic_rho)) - 1

    def _exec_time(self, task: TaskSpec) -> int:
        if self.exec_beta >= 1:
            return task.wcet
        lo = max(1, math.ceil(self.exec_beta * task.wcet))
        return int(self.rng.integers(lo, task.wcet + 1))

    @property
    def m(self) -> int:
        return self.platform.m

    @property
    def lists(self) -> JobLists:
        return JobLists(list(self.waiting), [self.running[p] for p in sorted(self.running)])

    def live_jobs(self) -> list[JobInstance]:
        return self.waiting + [self.running[p] for p in sorted(self.running)]

    def idle_processors(self) -> list[int]:
        """Processors a scheduler may assign this slot (non-preemptive: those not pinned)."""
        if self.platform.preemptive:
            return list(range(self.m))
        return [p for p in range(self.m) if p not in self.running]

    def selectable_jobs(self) -> list[JobInstance]:
        if self.platform.preemptive:
            return self.live_jobs()
        return list(self.waiting)

    def pinned(self) -> dict[int, JobInstance]:
        return {} if self.platform.preemptive else dict(self.running)

    def clone(self) -> "Simulator":
        new = Simulator.__new__(Simulator)
        new.__dict__.update(self.__dict__)
        memo = {}

        def cp(job):
            if job is None:
                return None
            c = memo.get(id(job))
            if c is None:
                c = memo[id(job)] = job.copy()
            return c

        new.waiting = [cp(j) for j in self.waiting]
        new.running = {p: cp(j) for p, j in self.running.items()}
        new.pending = {k: cp(j) for k, j in self.pending.items()}
        new.next_index = dict(self.next_index)
        new.last_release = dict(self.last_release)
        new.next_release = dict(self.next_release)
        new.stats = replace(self.stats)
        new.rng = np.random.Generator(type(self.rng.bit_generator)())
        new.rng.bit_generator.state = self.rng.bit_generator.state
        new.trace = None
        return new

    def reseed(self, seed) -> None:
        self.rng = np.random.default_rng(seed)

    # -- slot phases -------------------------------------------------------------

    def release_jobs(self) -> list[JobInstance]:
        """Release the jobs due at the current clock (idempotent within a slot)."""
        c = self.clock
        if self._released_at == c:
            return []
        self._released_at = c
        mode = self.release_mode
        if mode == RANDOM_OFFSET and self.offset_per_step:
            self.offset = int(self.rng.integers(self._max_period))
        out = []
        for t in self.tasks:
            if mode == PERIODIC:
                due = c % t.period == 0
            elif mode == STRICT_SPORADIC:
                due = c >= self.next_release[t.id] and self.pending[t.id] is None
            else:
                due = self.pending[t.id] is None and c % t.period == self.offset
            if not due:
                continue
            job = make_job(t, self.next_index[t.id], c, self._exec_time(t))
            self.next_index[t.id] += 1
            self.pending[t.id] = job
            self.last_release[t.id] = c
            if mode == STRICT_SPORADIC:
                self.next_release[t.id] = c + t.period + self._extra_delay()
            self.waiting.append(job)
            out.append(job)
            if self.trace is not None:
                self.trace.append((c, -1, job_label(job), "release"))
        return out

    def check_assignment(self, assignment: dict[int, JobInstance]) -> None:
        live = {id(j) for j in self.waiting}
        live.update(id(j) for j in self.running.values())
        seen = set()
        for p, job in assignment.items():
            if not 0 <= p < self.m:
                raise ContractError(f"processor {p} out of range")
            if id(job) not in live:
                raise ContractError(f"job {job.key} is not a live job")
            if id(job) in seen:
                raise ContractError(f"job {job.key} assigned to two processors")
            seen.add(id(job))
        if not self.platform.preemptive:
            for p, job in self.running.items():
                if assignment.get(p) is not job:
                    raise ContractError(f"non-preemptive: running job {job.key} must continue on processor {p}")

    def advance(self, assignment: dict[int, JobInstance]) -> StepOutcome:
        """Execute `assignment` for the slot [clock, clock+1) and move the clock."""
        self.check_assignment(assignment)
        c = self.clock
        speed_units = self.platform.speed_units
        out = StepOutcome()
        prev_proc = {id(j): p for p, j in self.running.items()}
        for p, j in self.running.items():
            if not any(a is j for a in assignment.values()):
                self.stats.preemptions += 1
        new_running = {}
        for p, job in assignment.items():
            was = prev_proc.get(id(job))
            if was is not None and was != p:
                self.stats.migrations += 1
            units = min(speed_units[p], job.remaining_units)
            job.done_units += units
            job.allocated[self.platform.proc_type(p)] += units
            job.work_log.append((c, units))
            self.stats.busy_slots += 1
            if self.trace is not None:
                self.trace.append((c, p, job_label(job), "run"))
            if job.remaining_units <= 0:
                job.status = FINISHED
                self.pending[job.task_id] = None
                out.finished.append(job)
                if self.trace is not None:
                    self.trace.append((c + 1, p, job_label(job), "finish"))
            else:
                new_running[p] = job
        chosen = {id(j) for j in new_running.values()}
        waiting = [j for j in self.live_jobs() if j.status != FINISHED and id(j) not in chosen]
        # keep waiting order stable by release
        self.clock = c + 1
        keep_w = []
        for j in waiting:
            if j.abs_deadline <= self.clock:
                out.missed.append((j, self.clock))
            else:
                j.status = WAITING
                keep_w.append(j)
        keep_r = {}
        for p, j in new_running.items():
            if j.abs_deadline <= self.clock:
                out.missed.append((j, self.clock))
            else:
                j.status = RUNNING
                keep_r[p] = j
        for j, _ in out.missed:
            self.pending[j.task_id] = None
            if self.trace is not None:
                self.trace.append((self.clock, -1, job_label(j), "miss"))
        keep_w.sort(key=lambda j: (j.release, j.task_id))
        self.waiting = keep_w
        self.running = keep_r
        out.clock = self.clock
        return out


def idle_by_type(sim: Simulator) -> tuple[int, int]:
    fast = slow = 0
    for p in sim.idle_processors():
        if sim.platform.proc_type(p) == 0:
            fast += 1
        else:
            slow += 1
    return fast, slow


def assign_in_order(sim: Simulator, chosen: Sequence[JobInstance]) -> dict[int, JobInstance]:
    """Map jobs picked in priority order onto idle processors, fastest type first.

    Within one processor type a job keeps the processor it ran on last slot
    when that processor is free, which avoids needless migrations.
    """
    idle = sim.idle_processors()
    if len(chosen) > len(idle):
        raise ContractError(f"{len(chosen)} jobs chosen for {len(idle)} idle processors")
    assignment = sim.pinned()
    prev = {id(j): p for p, j in sim.running.items()}
    groups: dict[int, list[int]] = {}
    for p in idle:
        groups.setdefault(sim.platform.proc_type(p), []).append(p)
    pos = 0
    for ptype in sorted(groups):
        procs = groups[ptype]
        batch = chosen[pos:pos + len(procs)]
        pos += len(batch)
        free = list(procs)
        rest = []
        for job in batch:
            p = prev.get(id(job))
            if p is not None and p in free:
                free.remove(p)
                assignment[p] = job
            else:
                rest.append(job)
        for job, p in zip(rest, free):
            assignment[p] = job
    return assignment


def job_label(job: JobInstance) -> str:
    return f"{job.task_id}.{job.index}"


# -- trajectories --------------------------------------------------------------

class Scheduler(Protocol):
    def decide(self, sim: Simulator) -> dict[int, JobInstance]: ...


@dataclass
class Verdict:
    feasible: bool
    first_miss_at: int | None = None
    horizon: int = 0
    missed_job: tuple | None = None
    error: str | None = None
    stats: SimStats | None = None

    def summary(self) -> str:
        if self.error:
            return f"error: {self.error}"
        if self.feasible:
            return f"feasible over {self.horizon} slots"
        return f"deadline miss at slot {self.first_miss_at} (job {self.missed_job})"


def run_trajectory(taskset: Sequence[TaskSpec], platform: Platform, scheduler: Scheduler,
                   horizon: int | None = None, seed=0, release_mode: str = STRICT_SPORADIC,
                   trace: list | None = None, **sim_kwargs) -> Verdict:
    """Simulate until the first deadline miss or `horizon` slots (default: one hyperperiod)."""
    if not taskset:
        return Verdict(True, horizon=horizon or 0, stats=SimStats())
    if horizon is None:
        horizon = hyperperiod(taskset)
    sim = Simulator(taskset, platform, release_mode, seed, trace=trace, **sim_kwargs)
    return drive(sim, scheduler, horizon)


def drive(sim: Simulator, scheduler: Scheduler, horizon: int) -> Verdict:
    """Run an existing simulator forward with `scheduler` until a miss or `horizon`."""
    while sim.clock < horizon:
        sim.release_jobs()
        try:
            assignment = scheduler.decide(sim)
            out = sim.advance(assignment)
        except ContractError as exc:
            return Verdict(False, sim.clock, horizon, error=str(exc), stats=sim.stats)
        if out.missed:
            job, at = out.missed[0]
            return Verdict(False, at, horizon, job.key, stats=sim.stats)
    return Verdict(True, None, horizon, stats=sim.stats)


def inflate_wcet(taskset: Sequence[TaskSpec], mean_overhead: int) -> list[TaskSpec]:
    """Add the mean scheduling overhead (in slots) to every WCET."""
    if mean_overhead < 0 or int(mean_overhead) != mean_overhead:
        raise InvalidInput("overhead must be a non-negative integer number of slots")
    return [replace(t, wcet=t.wcet + int(mean_overhead)) for t in taskset]


def write_trace(trace: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "processor", "job_id", "event"])
        w.writerows(trace)
