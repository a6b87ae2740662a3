"""Network-guided Monte-Carlo tree search over per-slot job selections.

A tree node is a *decision point*: a simulator positioned at the start of a
slot (jobs released) plus the jobs already picked for earlier processors of
that slot. Slots in which the choice cannot matter (every selectable job
fits on the idle processors) are executed automatically between nodes, so
each edge is a real choice. An edge whose action fills the last processor
advances the simulator; with random releases the resulting child is looked
up by its state, so one edge can lead to several children.

Selection maximises ``Q + c * P / (1 + N)``. After a rollout reaches a
terminal (a deadline miss, or the horizon), every traversed edge gets
``N += 1`` and ``Q`` becomes the running mean over rollouts of the mean
node value along the path suffix below the edge. Terminal nodes are valued
-1 (miss) and +1 (survived the horizon).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .encoding import (DEFAULT_CAPACITY, DEFAULT_HISTORY, SystemState, encode_state,
                       intermediate_state, is_forced, mode_of)
from .nn import NetParams, forward
from .simulator import PERIODIC, Simulator, assign_in_order, idle_by_type

MISS = "miss"
FEASIBLE = "feasible"


class TerminalNodeError(RuntimeError):
    pass


class Evaluator(Protocol):
    def __call__(self, state: SystemState) -> tuple[np.ndarray, float]: ...


class NetEvaluator:
    def __init__(self, params: NetParams):
        self.params = params

    def __call__(self, state):
        return forward(self.params, state)


class UniformEvaluator:
    """Uniform priors over selectable rows and a neutral value."""

    def __call__(self, state):
        p = state.mask.astype(np.float64)
        return p / max(p.sum(), 1.0), 0.0


@dataclass
class EdgeStats:
    prior: float
    visits: int = 0
    value: float = 0.0
    children: dict = field(default_factory=dict)
    best_survival: int = -1
    exhausted: bool = False


class Node:
    __slots__ = ("sim", "picked", "state", "terminal", "clock", "V", "edges", "segment",
                 "exhausted", "key", "end_slot")

    def __init__(self, sim, picked, state, terminal=None, clock=0, segment=None):
        self.sim = sim
        self.picked = picked
        self.state = state
        self.terminal = terminal
        self.clock = clock
        self.V = 0.0
        self.edges: dict[int, EdgeStats] = {}
        self.segment = segment or []
        self.exhausted = False
        self.key = None
        self.end_slot = None

    def __repr__(self):
        return f"Node(t={self.clock}, picked={len(self.picked)}, terminal={self.terminal})"


def select_edge(node: Node, c_puct: float = 1.0, puct: bool = False, skip_exhausted: bool = False) -> int:
    """argmax over edges of Q + c * P / (1 + N) (ties: lowest row).

    With ``puct`` the exploration term carries AlphaGo Zero's sqrt(sum N) factor.
    """
    if node.terminal is not None or not node.edges:
        raise TerminalNodeError("no legal edges at a terminal node")
    total = sum(e.visits for e in node.edges.values()) if puct else 0
    scale = math.sqrt(max(total, 1)) if puct else 1.0
    best, best_score = None, -math.inf
    for idx in sorted(node.edges):
        e = node.edges[idx]
        if skip_exhausted and e.exhausted:
            continue
        score = e.value + c_puct * scale * e.prior / (1 + e.visits)
        if score > best_score:
            best, best_score = idx, score
    if best is None:
        raise TerminalNodeError("every edge below this node is exhausted")
    return best


def backup(edges, child_values) -> None:
    """Update the edges of one rollout path in place.

    ``child_values[k]`` is V of the node reached through ``edges[k]``; the
    last entry is the terminal.
    """
    vals = np.asarray(child_values, dtype=np.float64)
    if len(edges) != len(vals):
        raise ValueError("one child value per edge is required")
    suffix_mean = np.cumsum(vals[::-1])[::-1] / np.arange(len(vals), 0, -1)
    for e, q in zip(edges, suffix_mean):
        e.visits += 1
        e.value += (float(q) - e.value) / e.visits


def _state_key(sim: Simulator) -> tuple:
    running = {id(j): p for p, j in sim.running.items()}
    return (sim.clock,) + tuple(
        (j.task_id, j.index, j.remaining_units, j.abs_deadline, running.get(id(j), -1))
        for j in sim.live_jobs())


class SearchTree:
    """Tree plus the environment model used to expand it."""

    def __init__(self, sim: Simulator, evaluator, horizon: int, c_puct: float = 1.0, puct: bool = False,
                 n_hist: int = DEFAULT_HISTORY, capacity: int = DEFAULT_CAPACITY, seed=0,
                 max_rollout_slots: int | None = None):
        self.evaluator = evaluator
        self.horizon = horizon
        self.c_puct = c_puct
        self.puct = puct
        self.n_hist = n_hist
        self.capacity = capacity
        self.mode = mode_of(sim.platform)
        self.rng = np.random.default_rng(seed)
        self.deterministic = sim.release_mode == PERIODIC and sim.exec_beta >= 1
        self.max_rollout_slots = max_rollout_slots
        self.expansions = 0
        self.root = self._expand(self._settle(sim.clone(), []))

    # -- environment ----------------------------------------------------------------

    def _encode(self, sim: Simulator) -> SystemState:
        return encode_state(sim.lists, sim.clock, idle_by_type(sim), self.mode, self.n_hist, self.capacity)

    def _commit(self, sim: Simulator, chosen, segment):
        by_key = {j.key: j for j in sim.live_jobs()}
        jobs = [by_key[j.key] for j in chosen]
        assignment = assign_in_order(sim, jobs)
        segment.append((sim.clock, {p: j.key for p, j in assignment.items()}))
        return sim.advance(assignment)

    def _settle(self, sim: Simulator, segment) -> Node:
        """Run forced slots until the next decision point or a terminal.

        A returned decision node is not yet expanded.
        """
        while True:
            if sim.clock >= self.horizon:
                node = Node(sim, [], None, FEASIBLE, sim.clock, segment)
                node.V, node.end_slot = 1.0, self.horizon + 1
                return node
            sim.release_jobs()
            cands = sim.selectable_jobs()
            idle = idle_by_type(sim)
            if is_forced(len(cands), *idle):
                out = self._commit(sim, cands if sum(idle) else [], segment)
                if out.missed:
                    node = Node(sim, [], None, MISS, sim.clock, segment)
                    node.V, node.end_slot = -1.0, out.missed[0][1]
                    return node
                continue
            node = Node(sim, [], self._encode(sim), None, sim.clock, segment)
            node.key = _state_key(sim)
            return node

    def _expand(self, node: Node) -> Node:
        if node.terminal is not None or node.edges:
            return node
        p, v = self.evaluator(node.state)
        self.expansions += 1
        node.V = float(v)
        for i in np.flatnonzero(node.state.mask):
            node.edges[int(i)] = EdgeStats(float(p[i]))
        return node

    def step(self, node: Node, idx: int) -> Node:
        """Child reached by choosing row `idx` at `node` (created and expanded on first use)."""
        edge = node.edges[idx]
        if self.deterministic and edge.children:
            return next(iter(edge.children.values()))
        state = node.state
        picked = node.picked + [state.row_to_job[idx]]
        nxt = intermediate_state(state, idx)
        if not (nxt.done or nxt.forced):
            child = edge.children.get("within")
            if child is None:
                child = self._expand(Node(node.sim, picked, nxt, None, node.clock))
                edge.children["within"] = child
            return child
        sim = node.sim.clone()
        if not self.deterministic:
            sim.reseed(int(self.rng.integers(2**63)))
        segment = []
        rest = list(nxt.candidates) if nxt.idle else []
        out = self._commit(sim, picked + rest, segment)
        if out.missed:
            child = Node(sim, [], None, MISS, sim.clock, segment)
            child.V, child.end_slot = -1.0, out.missed[0][1]
        else:
            child = self._settle(sim, segment)
        key = child.key if child.terminal is None else (child.terminal, child.clock)
        existing = edge.children.get(key)
        if existing is not None:
            return existing
        edge.children[key] = child
        return self._expand(child)

    # -- search -------------------------------------------------------------------------

    def rollout(self, root: Node | None = None):
        """One descent from `root` until a terminal (or the rollout slot budget).

        Returns the leaf and the path as ``[(node, row, child), ...]``.
        """
        node = self.root if root is None else root
        cutoff = None if self.max_rollout_slots is None else node.clock + self.max_rollout_slots
        path = []
        while node.terminal is None and (cutoff is None or node.clock < cutoff or not path):
            idx = select_edge(node, self.c_puct, self.puct, skip_exhausted=self.deterministic)
            child = self.step(node, idx)
            path.append((node, idx, child))
            node = child
        return node, path

    def record(self, leaf: Node, path) -> None:
        """Back up one rollout (visit counts, Q means, best survival, exhaustion)."""
        if not path:
            return
        end = leaf.end_slot if leaf.terminal is not None else leaf.clock
        backup([n.edges[i] for n, i, _ in path], [c.V for _, _, c in path])
        for n, i, _ in path:
            e = n.edges[i]
            e.best_survival = max(e.best_survival, end)
        if self.deterministic:
            if leaf.terminal == MISS:
                leaf.exhausted = True
            for n, i, _ in reversed(path):
                e = n.edges[i]
                e.exhausted = bool(e.children) and all(c.exhausted for c in e.children.values())
                n.exhausted = all(x.exhausted for x in n.edges.values())

    def survival(self, end_slot: int, root: Node) -> int:
        return max(0, min(end_slot, self.horizon) - root.clock)


@dataclass
class SearchResult:
    pi: np.ndarray
    visits: np.ndarray
    z_raw: int
    best_survival: np.ndarray
    rollouts: int
    feasible_leaf: Node | None = None
    feasible_path: list | None = None
    exhausted: bool = False


def visit_policy(visits: np.ndarray, legal: np.ndarray, temperature: float) -> np.ndarray:
    """pi proportional to N^(1/T); T -> 0 is argmax (lowest row on ties)."""
    pi = np.zeros(len(visits))
    if visits.sum() <= 0:
        warnings.warn("no visits recorded; falling back to a uniform policy", RuntimeWarning)
        pi[legal] = 1.0
        return pi / pi.sum()
    if temperature <= 1e-6:
        pi[int(np.argmax(visits))] = 1.0
        return pi
    w = np.power(visits.astype(np.float64), 1.0 / temperature)
    return w / w.sum()


def search(tree: SearchTree, root: Node | None = None, n_rollouts: int = 200, temperature: float = 1.0,
           stop_on_feasible: bool = False) -> SearchResult:
    """Run up to `n_rollouts` rollouts from `root` and summarise the root edges."""
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be at least 1")
    root = tree.root if root is None else root
    if root.terminal is not None:
        raise TerminalNodeError("cannot search from a terminal node")
    done = 0
    found = found_path = None
    for _ in range(n_rollouts):
        if tree.deterministic and root.exhausted:
            break
        leaf, path = tree.rollout(root)
        tree.record(leaf, path)
        done += 1
        if stop_on_feasible and leaf.terminal == FEASIBLE:
            found, found_path = leaf, path
            break
    cap = root.state.capacity
    visits = np.zeros(cap)
    best = np.full(cap, -1)
    for i, e in root.edges.items():
        visits[i] = e.visits
        if e.best_survival >= 0:
            best[i] = tree.survival(e.best_survival, root)
    legal = np.array(sorted(root.edges))
    pi = visit_policy(visits, legal, temperature)
    chosen = int(np.argmax(visits)) if visits.sum() else int(legal[0])
    return SearchResult(pi, visits, int(max(best[chosen], 0)), best, done, found, found_path,
                        exhausted=tree.deterministic and root.exhausted)


def schedule_from_path(tree: SearchTree, leaf: Node, path) -> list:
    """Slot-by-slot assignments ``[(slot, {proc: (task, instance)}), ...]`` of one rollout."""
    out = list(tree.root.segment)
    for _, _, child in path:
        out.extend(child.segment)
    return out
