"""Tasks, jobs and platforms.

Time is measured in integral slots. Execution progress is tracked in
half-slot *units* so that speed-0.5 processors never introduce rounding:
a speed-1 processor retires 2 units per slot, a speed-0.5 processor 1 unit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, reduce
from pathlib import Path
from typing import Iterable, Sequence

UNITS_PER_SLOT = 2

WAITING = "waiting"
RUNNING = "running"
FINISHED = "finished"


class InvalidInput(ValueError):
    pass


class ContractError(RuntimeError):
    """A scheduler or caller broke an execution contract."""


@dataclass(frozen=True)
class TaskSpec:
    """Static sporadic task: minimum inter-arrival `period`, `wcet`, relative `deadline`.

    Only positivity is enforced here; `wcet <= deadline` is checked by
    :func:`validate_taskset` so that deliberately overloaded tasks can still
    be simulated.
    """

    id: int
    period: int
    wcet: int
    deadline: int | None = None

    def __post_init__(self):
        if self.deadline is None:
            object.__setattr__(self, "deadline", self.period)
        for name in ("period", "wcet", "deadline"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidInput(f"task {self.id}: {name} must be a positive integer, got {v}")

    @property
    def utilization(self) -> Fraction:
        return Fraction(self.wcet, self.period)


def validate_taskset(taskset: Sequence[TaskSpec]) -> None:
    ids = [t.id for t in taskset]
    if len(set(ids)) != len(ids):
        raise InvalidInput("duplicate task ids")
    for t in taskset:
        if t.wcet > t.deadline:
            raise InvalidInput(f"task {t.id}: wcet {t.wcet} exceeds deadline {t.deadline}")
        if t.deadline > t.period:
            raise InvalidInput(f"task {t.id}: deadline {t.deadline} exceeds period {t.period}")


@dataclass(eq=False)
class JobInstance:
    """One released job. Identity semantics: two jobs are equal only if they are the same object."""

    task_id: int
    index: int
    release: int
    exec_time: int
    abs_deadline: int
    period: int = 0
    # units executed on each processor type (0 = fastest)
    allocated: list = field(default_factory=lambda: [0, 0])
    done_units: int = 0
    status: str = WAITING
    # units executed in each slot since release, oldest first
    work_log: list = field(default_factory=list)

    @property
    def key(self) -> tuple[int, int]:
        return (self.task_id, self.index)

    @property
    def exec_units(self) -> int:
        return self.exec_time * UNITS_PER_SLOT

    @property
    def remaining_units(self) -> int:
        return self.exec_units - self.done_units

    def copy(self) -> "JobInstance":
        return JobInstance(self.task_id, self.index, self.release, self.exec_time,
                           self.abs_deadline, self.period, list(self.allocated),
                           self.done_units, self.status, list(self.work_log))

    def __repr__(self):
        return (f"Job({self.task_id}.{self.index} R={self.release} E={self.exec_time} "
                f"D={self.abs_deadline} rem={Fraction(self.remaining_units, UNITS_PER_SLOT)} {self.status})")


@dataclass(frozen=True)
class Platform:
    speeds: tuple
    preemptive: bool = True

    def __post_init__(self):
        speeds = tuple(Fraction(s) for s in self.speeds)
        if not speeds:
            raise InvalidInput("platform needs at least one processor")
        if any(s not in (1, Fraction(1, 2)) for s in speeds):
            raise InvalidInput("only speeds 1 and 1/2 are supported")
        if list(speeds) != sorted(speeds, reverse=True):
            raise InvalidInput("speeds must be sorted fastest first")
        object.__setattr__(self, "speeds", speeds)

    @classmethod
    def homogeneous(cls, m: int, preemptive: bool = True) -> "Platform":
        return cls((1,) * m, preemptive)

    @classmethod
    def heterogeneous(cls, m: int, preemptive: bool = True) -> "Platform":
        """Half the processors at speed 1, the rest at speed 0.5 (fast half rounded up)."""
        n_fast = (m + 1) // 2
        return cls((1,) * n_fast + (Fraction(1, 2),) * (m - n_fast), preemptive)

    @property
    def m(self) -> int:
        return len(self.speeds)

    @property
    def heterogeneous_(self) -> bool:
        return len(set(self.speeds)) > 1

    @cached_property
    def speed_units(self) -> tuple:
        return tuple(int(s * UNITS_PER_SLOT) for s in self.speeds)

    @cached_property
    def proc_types(self) -> tuple:
        return tuple(0 if s == self.speeds[0] else 1 for s in self.speeds)

    def proc_type(self, proc: int) -> int:
        return self.proc_types[proc]


@dataclass
class JobLists:
    waiting: list = field(default_factory=list)
    running: list = field(default_factory=list)

    @property
    def n_jobs(self) -> int:
        return len(self.waiting) + len(self.running)

    def check(self) -> None:
        if set(map(id, self.waiting)) & set(map(id, self.running)):
            raise ContractError("a job is both waiting and running")


def hyperperiod(taskset: Iterable[TaskSpec]) -> int:
    periods = [t.period for t in taskset]
    if not periods:
        raise InvalidInput("hyperperiod of an empty task set")
    return reduce(math.lcm, periods)


def total_utilization(taskset: Iterable[TaskSpec]) -> Fraction:
    return sum((t.utilization for t in taskset), Fraction(0))


def remaining_work(job: JobInstance, t: int | None = None) -> Fraction:
    """Speed-weighted remaining execution of `job`, in slots."""
    if t is not None and t < job.release:
        raise InvalidInput(f"job {job.key} is not released before slot {job.release}")
    return Fraction(max(job.remaining_units, 0), UNITS_PER_SLOT)


def make_job(task: TaskSpec, index: int, release: int, exec_time: int | None = None) -> JobInstance:
    e = task.wcet if exec_time is None else exec_time
    return JobInstance(task.id, index, release, e, release + task.deadline, task.period)


# -- text format ---------------------------------------------------------------

def dumps_taskset(taskset: Sequence[TaskSpec]) -> str:
    lines = [f"taskset v1 {len(taskset)}"]
    lines += [f"{t.id} {t.period} {t.wcet} {t.deadline}" for t in taskset]
    return "\n".join(lines) + "\n"


def loads_taskset(text: str) -> list[TaskSpec]:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise InvalidInput("empty task set file")
    head = lines[0].split()
    if len(head) != 3 or head[:2] != ["taskset", "v1"]:
        raise InvalidInput(f"bad task set header: {lines[0]!r}")
    n = int(head[2])
    if len(lines) - 1 != n:
        raise InvalidInput(f"header announces {n} tasks, found {len(lines) - 1}")
    tasks = []
    for ln in lines[1:]:
        fields = ln.split()
        if len(fields) != 4:
            raise InvalidInput(f"expected 'id period wcet deadline', got {ln!r}")
        try:
            tid, p, e, d = (int(x) for x in fields)
        except ValueError:
            raise InvalidInput(f"non-integer field in {ln!r}") from None
        tasks.append(TaskSpec(tid, p, e, d))
    return tasks


def save_taskset(taskset: Sequence[TaskSpec], path) -> None:
    Path(path).write_text(dumps_taskset(taskset))


def load_taskset(path) -> list[TaskSpec]:
    return loads_taskset(Path(path).read_text())
