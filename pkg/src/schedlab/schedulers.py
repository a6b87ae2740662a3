"""Decision makers behind one interface: ``decide(sim) -> {processor: job}``."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoding import DEFAULT_CAPACITY, DEFAULT_HISTORY, encode_state, intermediate_state, mode_of
from .mcts import FEASIBLE, NetEvaluator, SearchTree, schedule_from_path
from .model import ContractError, InvalidInput, Platform, TaskSpec, hyperperiod, total_utilization
from .nn import NetParams, TrainSample, backward_and_update, check_compatible, forward, lr_schedule
from .simulator import PERIODIC, Simulator, Verdict, assign_in_order, drive, idle_by_type


def edf_key(job):
    return (job.abs_deadline, job.task_id, job.index)


def rm_key(job):
    return (job.period, job.task_id, job.index)


class PriorityScheduler:
    """Global fixed-rule scheduler: the highest-priority jobs run, fastest processors first."""

    def __init__(self, key, name: str):
        self.key = key
        self.name = name

    def decide(self, sim: Simulator):
        idle = sim.idle_processors()
        chosen = sorted(sim.selectable_jobs(), key=self.key)[:len(idle)]
        return assign_in_order(sim, chosen)

    def __repr__(self):
        return self.name


GEDF = PriorityScheduler(edf_key, "GEDF")
GRM = PriorityScheduler(rm_key, "GRM")


def gedf_decide(sim: Simulator):
    return GEDF.decide(sim)


def grm_decide(sim: Simulator):
    return GRM.decide(sim)


class NeuralScheduler:
    """Dynamic configuration: repeatedly take the network's most probable job.

    Choices that cannot matter (all remaining jobs fit on the idle processors
    of the type being filled) are made without a network call.
    """

    name = "neural"

    def __init__(self, params: NetParams):
        self.params = params
        self.calls = 0

    def decide(self, sim: Simulator):
        cfg = self.params.config
        check_compatible(self.params, sim.m, cfg.capacity, cfg.n_hist, mode_of(sim.platform))
        state = encode_state(sim.lists, sim.clock, idle_by_type(sim), cfg.mode, cfg.n_hist, cfg.capacity)
        chosen = []
        while not state.done:
            if state.forced:
                chosen.extend(state.candidates)
                break
            p, _ = forward(self.params, state)
            self.calls += 1
            idx = int(np.argmax(np.where(state.mask, p, -1.0)))
            chosen.append(state.row_to_job[idx])
            state = intermediate_state(state, idx)
        return assign_in_order(sim, chosen)


def neural_decide(sim: Simulator, params: NetParams):
    return NeuralScheduler(params).decide(sim)


# -- static tables -----------------------------------------------------------------

@dataclass
class ScheduleTable:
    horizon: int
    m: int
    slots: dict = field(default_factory=dict)   # slot -> {proc: (task_id, instance)}
    preemptive: bool = True
    speeds: tuple = ()

    def busy_slots(self) -> int:
        return sum(len(a) for a in self.slots.values())

    def to_text(self) -> str:
        lines = [f"table v1 {self.horizon} {self.m}"]
        mode = "preemptive" if self.preemptive else "nonpreemptive"
        speeds = ",".join(str(s) for s in self.speeds)
        lines.append(f"# mode {mode} speeds {speeds}")
        for slot in sorted(self.slots):
            for proc in sorted(self.slots[slot]):
                task, inst = self.slots[slot][proc]
                lines.append(f"{slot} {proc} {task} {inst}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ScheduleTable":
        rows = [ln.strip() for ln in text.splitlines() if ln.strip()]
        head = rows[0].split()
        if head[:2] != ["table", "v1"] or len(head) != 4:
            raise InvalidInput(f"bad table header {rows[0]!r}")
        table = cls(int(head[2]), int(head[3]))
        for ln in rows[1:]:
            if ln.startswith("#"):
                parts = ln[1:].split()
                if parts[:1] == ["mode"]:
                    table.preemptive = parts[1] == "preemptive"
                    if len(parts) >= 4 and parts[3]:
                        table.speeds = tuple(Fraction(s) for s in parts[3].split(","))
                continue
            slot, proc, task, inst = (int(x) for x in ln.split())
            if not 0 <= proc < table.m or not 0 <= slot < table.horizon:
                raise InvalidInput(f"table entry out of range: {ln!r}")
            per = table.slots.setdefault(slot, {})
            if proc in per:
                raise InvalidInput(f"processor {proc} assigned twice in slot {slot}")
            per[proc] = (task, inst)
        return table

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ScheduleTable":
        return cls.from_text(Path(path).read_text())

    def platform(self) -> Platform:
        if self.speeds:
            return Platform(self.speeds, self.preemptive)
        return Platform.homogeneous(self.m, self.preemptive)


class TableScheduler:
    """Replays a table verbatim; referencing a job that is not live is a contract error."""

    name = "table"

    def __init__(self, table: ScheduleTable):
        self.table = table

    def decide(self, sim: Simulator):
        want = self.table.slots.get(sim.clock, {})
        live = {j.key: j for j in sim.live_jobs()}
        out = {}
        for proc, key in want.items():
            job = live.get(tuple(key))
            if job is None:
                raise ContractError(f"slot {sim.clock}: table names job {key} which is not live")
            out[proc] = job
        return out


def replay_table(table: ScheduleTable, taskset: Sequence[TaskSpec], platform: Platform | None = None) -> Verdict:
    if not taskset:
        return Verdict(True, horizon=table.horizon)
    H = hyperperiod(taskset)
    if table.horizon != H:
        raise ContractError(f"table horizon {table.horizon} != hyperperiod {H}")
    known = {t.id for t in taskset}
    for per in table.slots.values():
        for task, _ in per.values():
            if task not in known:
                raise ContractError(f"table references unknown task {task}")
    platform = platform or table.platform()
    if platform.m != table.m:
        raise ContractError("table and platform disagree on the processor count")
    sim = Simulator(taskset, platform, PERIODIC)
    return drive(sim, TableScheduler(table), H)


@dataclass
class StaticResult:
    table: ScheduleTable | None
    rollouts: int
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.table is not None


def generate_static_table(taskset: Sequence[TaskSpec], platform: Platform, params: NetParams | None,
                          rollout_threshold: int = 5000, train: bool = True, seed=0,
                          c_puct: float = 1.0, momentum: float = 0.9, evaluator=None) -> StaticResult:
    """Search for one feasible hyperperiod schedule with network-guided rollouts.

    After every failed rollout the network is trained in place on that
    rollout's states (visit-count policy, normalized survival) unless
    ``train`` is off. Returns a failure value once the threshold is spent or
    the search space is exhausted.
    """
    H = hyperperiod(taskset)
    if total_utilization(taskset) > sum(platform.speeds):
        return StaticResult(None, 0, "utilization exceeds platform capacity")
    if params is not None:
        cfg = params.config
        check_compatible(params, platform.m, cfg.capacity, cfg.n_hist, mode_of(platform))
        n_hist, capacity = cfg.n_hist, cfg.capacity
        evaluator = evaluator or NetEvaluator(params)
    else:
        n_hist, capacity = DEFAULT_HISTORY, DEFAULT_CAPACITY
        if evaluator is None:
            raise InvalidInput("need network parameters or an evaluator")
    sim = Simulator(taskset, platform, PERIODIC, seed)
    tree = SearchTree(sim, evaluator, H, c_puct=c_puct, n_hist=n_hist, capacity=capacity, seed=seed)
    table = ScheduleTable(H, platform.m, preemptive=platform.preemptive, speeds=platform.speeds)
    if tree.root.terminal == FEASIBLE:
        _fill(table, tree.root.segment)
        return StaticResult(table, 0, "no decisions needed")
    if tree.root.terminal is not None:
        return StaticResult(None, 0, "deadline miss before any decision")
    for r in range(rollout_threshold):
        if tree.root.exhausted:
            return StaticResult(None, r, "search space exhausted")
        leaf, path = tree.rollout()
        tree.record(leaf, path)
        if leaf.terminal == FEASIBLE:
            _fill(table, schedule_from_path(tree, leaf, path))
            return StaticResult(table, r + 1)
        if train and params is not None:
            batch = _rollout_samples(tree, leaf, path)
            if batch:
                lr_p, lr_v = lr_schedule(r)
                backward_and_update(params, batch[-256:], lr_p, lr_v, momentum)
    return StaticResult(None, rollout_threshold, "roll-out threshold reached")


def _fill(table: ScheduleTable, segments) -> None:
    for slot, assignment in segments:
        if assignment:
            table.slots[slot] = dict(assignment)


def _rollout_samples(tree: SearchTree, leaf, path) -> list[TrainSample]:
    from .training import normalize_z
    out = []
    for node, _, _ in path:
        visits = np.zeros(node.state.capacity)
        for i, e in node.edges.items():
            visits[i] = e.visits
        if visits.sum() <= 0:
            continue
        z = normalize_z(tree.survival(leaf.end_slot if leaf.terminal else leaf.clock, node),
                        tree.horizon - node.clock)
        out.append(TrainSample(node.state.tensor, node.state.mask, visits / visits.sum(), z))
    return out
