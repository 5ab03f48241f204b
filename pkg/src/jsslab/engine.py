"""Step-based scheduling environment over uncertain instances.

One operation is dispatched per step.  It starts as soon as both its machine
and its job predecessor are free (appending to the machine, never inserting
into idle gaps), so every dispatch order yields a semi-active schedule.  A
successor becomes eligible as soon as its predecessor has been dispatched.

In stochastic mode the branch outcomes are drawn once at reset and kept
hidden; each one is revealed when its branching operation is dispatched, at
which point the ops on the unchosen alternatives leave the graph.  In
deterministic mode all outcomes are known from the start.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from .instance import MAX_PROC_TIME, Instance, Scenario, sample_scenario, scenario_from_choices

STOCHASTIC = "stochastic"
DETERMINISTIC = "deterministic"

# node feature layout
F_DONE, F_ONGOING, F_READY, F_NOT_READY = 0, 1, 2, 3
F_PROC, F_EST, F_JOB_WORK, F_JOB_OPS, F_BRANCHING, F_REACH = 4, 5, 6, 7, 8, 9
N_FEATURES = 10


class EngineError(RuntimeError):
    pass


class IllegalActionError(EngineError):
    pass


class TerminalStateError(EngineError):
    pass


@dataclass(frozen=True)
class StepOutcome:
    dispatched: int
    start: int
    end: int
    branch_resolved: Optional[tuple[int, int]]
    terminal: bool


class SchedState:
    """Mutable episode state.  Use :meth:`copy` to keep a snapshot."""

    def __init__(self, instance: Instance, mode: str, active: set[int],
                 realized: dict[int, int], hidden: dict[int, int]):
        self.instance = instance
        self.mode = mode
        self.active = active
        self.realized = realized
        self._hidden = hidden
        n_j, n_m = instance.n_jobs, instance.n_machines
        self.done: dict[int, tuple[int, int]] = {}
        self.machine_free = [0] * n_m
        self.machine_seq: list[list[int]] = [[] for _ in range(n_m)]
        self.job_front: list[Optional[int]] = [job.source_op for job in instance.jobs]
        self.job_ready = [0] * n_j
        self.last_op: list[Optional[int]] = [None] * n_j
        self.t = 0

    def copy(self) -> "SchedState":
        new = SchedState.__new__(SchedState)
        new.instance = self.instance
        new.mode = self.mode
        new.active = set(self.active)
        new.realized = dict(self.realized)
        new._hidden = self._hidden
        new.done = dict(self.done)
        new.machine_free = list(self.machine_free)
        new.machine_seq = [list(s) for s in self.machine_seq]
        new.job_front = list(self.job_front)
        new.job_ready = list(self.job_ready)
        new.last_op = list(self.last_op)
        new.t = self.t
        return new

    @property
    def terminal(self) -> bool:
        return all(f is None for f in self.job_front)

    @property
    def makespan(self) -> int:
        return max(self.machine_free)

    def earliest_start(self, op_id: int) -> int:
        """Start time ``op_id`` would get if it were dispatched now."""
        op = self.instance.ops[op_id]
        return max(self.machine_free[op.machine_id], self.job_ready[op.job_id])

    @property
    def clock(self) -> int:
        """Next decision time: the earliest moment any eligible op can start."""
        starts = [self.earliest_start(f) for f in self.job_front if f is not None]
        return min(starts) if starts else self.makespan

    def ready_ops(self) -> list[int]:
        """Eligible ops that can start at :attr:`clock` (the non-delay set)."""
        fronts = [f for f in self.job_front if f is not None]
        if not fronts:
            return []
        starts = [self.earliest_start(f) for f in fronts]
        t = min(starts)
        return [f for f, s in zip(fronts, starts) if s == t]

    def realized_scenario(self) -> Scenario:
        return scenario_from_choices(self.instance, self.realized)

    # --- core transitions ---------------------------------------------------

    def eligible(self) -> list[int]:
        if self.terminal:
            raise TerminalStateError("no eligible actions in a terminal state")
        return [f for f in self.job_front if f is not None]

    def step(self, op_id: int) -> StepOutcome:
        inst = self.instance
        if op_id not in self.active or op_id not in self.job_front:
            raise IllegalActionError(f"op {op_id} is not eligible")
        op = inst.ops[op_id]
        j, m = op.job_id, op.machine_id
        start = max(self.machine_free[m], self.job_ready[j])
        end = start + op.proc_time
        self.done[op_id] = (start, end)
        self.active.discard(op_id)
        self.machine_free[m] = end
        self.machine_seq[m].append(op_id)
        self.job_ready[j] = end
        self.last_op[j] = op_id
        self.t += 1

        succ = inst.successors[op_id]
        resolved = None
        if not succ:
            self.job_front[j] = None
        elif len(succ) == 1:
            self.job_front[j] = succ[0][0]
        else:
            choice = self.realized[op_id] if op_id in self.realized else self._hidden[op_id]
            self.realized[op_id] = choice
            resolved = (op_id, choice)
            job = inst.jobs[j]
            keep = job.descendants(choice)
            for v, _ in succ:
                if v != choice:
                    self.active -= job.descendants(v) - keep
            self.job_front[j] = choice
        return StepOutcome(op_id, start, end, resolved, self.terminal)

    # --- derived quantities -------------------------------------------------

    def _job_active_topo(self, j: int) -> Iterator[int]:
        active = self.active
        return (u for u in self.instance.jobs[j].topo_order if u in active)

    def earliest_finish(self) -> dict[int, int]:
        """Precedence-only earliest completion time of every active op.

        Scheduled ops contribute their real end times; at an unresolved merge
        the latest predecessor counts, which makes the bound pessimistic
        about branches that have not been revealed yet.
        """
        ops, preds, active = self.instance.ops, self.instance.predecessors, self.active
        est: dict[int, int] = {}
        for j in range(self.instance.n_jobs):
            front = self.job_front[j]
            if front is None:
                continue
            for u in self._job_active_topo(j):
                if u == front:
                    base = self.job_ready[j]
                else:
                    base = max((est[p] for p in preds[u] if p in active and p in est), default=None)
                    if base is None:
                        continue
                est[u] = base + ops[u].proc_time
        return est

    def reach_probabilities(self) -> dict[int, float]:
        """Probability of each active op lying on its job's realized route."""
        inst = self.instance
        reach: dict[int, float] = {}
        for j in range(inst.n_jobs):
            front = self.job_front[j]
            if front is None:
                continue
            for u in self._job_active_topo(j):
                if u == front:
                    reach[u] = 1.0
                    continue
                r = 0.0
                for p in inst.predecessors[u]:
                    if p not in reach:
                        continue
                    if p in self.realized:
                        r += reach[p] if self.realized[p] == u else 0.0
                    else:
                        r += reach[p] * dict(inst.successors[p])[u]
                reach[u] = r
        return reach


# --- functional surface ------------------------------------------------------


def reset(instance: Instance, mode: str = STOCHASTIC, scenario: Scenario | None = None,
          rng: np.random.Generator | int | None = None) -> SchedState:
    """Start an episode.

    Deterministic mode needs the ``scenario`` to schedule; stochastic mode
    needs ``rng`` (or a seed) from which the hidden branch outcomes are drawn.
    """
    if mode == DETERMINISTIC:
        if scenario is None:
            raise EngineError("deterministic mode requires a scenario")
        active = {o for path in scenario.realized_path for o in path}
        return SchedState(instance, mode, active, dict(scenario.branch_choices), {})
    if mode == STOCHASTIC:
        if scenario is not None:
            raise EngineError("stochastic mode draws its own scenario; do not pass one")
        if rng is None:
            raise EngineError("stochastic mode requires an rng or seed")
        hidden = dict(sample_scenario(instance, rng).branch_choices)
        return SchedState(instance, mode, set(range(instance.n_ops)), {}, hidden)
    raise EngineError(f"unknown mode {mode!r}")


def eligible_actions(state: SchedState) -> list[int]:
    return state.eligible()


def step(state: SchedState, action_op: int) -> tuple[SchedState, StepOutcome]:
    outcome = state.step(action_op)
    return state, outcome


def lower_bound(state: SchedState) -> int:
    """Critical-path makespan bound: max over ops of their earliest completion."""
    est = state.earliest_finish()
    return max(max(state.job_ready), max(est.values(), default=0))


def reward(prev_state: SchedState | int, next_state: SchedState | int) -> int:
    """Negative growth of the makespan lower bound between consecutive states."""
    a = prev_state if isinstance(prev_state, int) else lower_bound(prev_state)
    b = next_state if isinstance(next_state, int) else lower_bound(next_state)
    return a - b


def remaining_work(state: SchedState, job_id: int, reach: dict[int, float] | None = None) -> float:
    """Expected remaining processing time of a job; branches weighted by probability."""
    if reach is None:
        reach = state.reach_probabilities()
    ops = state.instance.ops
    return sum(reach[u] * ops[u].proc_time for u in state._job_active_topo(job_id) if u in reach)


def remaining_ops(state: SchedState, job_id: int, reach: dict[int, float] | None = None) -> float:
    """Expected number of operations left in a job."""
    if reach is None:
        reach = state.reach_probabilities()
    return sum(reach[u] for u in state._job_active_topo(job_id) if u in reach)


# --- graph view -----------------------------------------------------------------


@dataclass
class DisjunctiveView:
    nodes: list[int]
    features: np.ndarray
    conj_edges: list[tuple[int, int]]
    disj_edges: list[tuple[int, int, bool]]
    eligible: list[int]
    index: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {op: i for i, op in enumerate(self.nodes)}

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def adjacency(self) -> np.ndarray:
        """Symmetric 0/1 adjacency over conjunctive and disjunctive edges."""
        n = len(self.nodes)
        a = np.zeros((n, n))
        idx = self.index
        for u, v in self.conj_edges:
            a[idx[u], idx[v]] = a[idx[v], idx[u]] = 1.0
        for u, v, _ in self.disj_edges:
            a[idx[u], idx[v]] = a[idx[v], idx[u]] = 1.0
        return a

    def eligible_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.nodes), dtype=bool)
        for op in self.eligible:
            mask[self.index[op]] = True
        return mask


def feature_scale(instance: Instance) -> float:
    return feature_scale_for(instance.n_machines)


def feature_scale_for(n_machines: int) -> float:
    return float(MAX_PROC_TIME * n_machines)


def disjunctive_view(state: SchedState) -> DisjunctiveView:
    inst = state.instance
    ops = inst.ops
    scale = feature_scale(inst)
    est = state.earliest_finish()
    reach = state.reach_probabilities()
    fronts = set(f for f in state.job_front if f is not None)
    ready = set(state.ready_ops())
    clock = state.clock
    boundary = [b for b in state.last_op if b is not None]
    nodes = sorted(set(state.active) | set(boundary))
    job_work = [remaining_work(state, j, reach) / scale for j in range(inst.n_jobs)]
    job_ops = [remaining_ops(state, j, reach) / inst.n_machines for j in range(inst.n_jobs)]

    feats = np.zeros((len(nodes), N_FEATURES))
    for i, u in enumerate(nodes):
        op = ops[u]
        row = feats[i]
        row[F_PROC] = op.proc_time / scale
        row[F_JOB_WORK] = job_work[op.job_id]
        row[F_JOB_OPS] = job_ops[op.job_id]
        if u in state.done:
            s, e = state.done[u]
            row[F_ONGOING if e > clock else F_DONE] = 1.0
            row[F_EST] = e / scale
            row[F_REACH] = 1.0
        else:
            row[F_READY if u in ready else F_NOT_READY] = 1.0
            row[F_EST] = est.get(u, 0) / scale
            row[F_REACH] = reach.get(u, 0.0)
            if len(inst.successors[u]) >= 2 and u not in state.realized:
                row[F_BRANCHING] = 1.0

    node_set = set(nodes)
    conj = []
    for u in nodes:
        if u in state.done:
            front = state.job_front[ops[u].job_id]
            if front is not None:
                conj.append((u, front))
            continue
        for v, _ in inst.successors[u]:
            if v in node_set and v not in state.done:
                if u in state.realized and state.realized[u] != v:
                    continue
                conj.append((u, v))

    by_machine: dict[int, list[int]] = {}
    for u in nodes:
        by_machine.setdefault(ops[u].machine_id, []).append(u)
    disj = []
    for group in by_machine.values():
        for a in range(len(group)):
            for b in range(a + 1, len(group)):
                u, v = group[a], group[b]
                if u in state.done and v in state.done:
                    if state.done[u][0] > state.done[v][0]:
                        u, v = v, u
                    disj.append((u, v, True))
                else:
                    disj.append((u, v, False))
    return DisjunctiveView(nodes, feats, conj, disj, sorted(fronts))


# --- episodes and traces ------------------------------------------------------------


def run_episode(state: SchedState, choose: Callable[[SchedState], int]) -> list[StepOutcome]:
    """Drive ``state`` to the end, letting ``choose`` pick each action."""
    outcomes = []
    while not state.terminal:
        outcomes.append(state.step(choose(state)))
    return outcomes


def trace_record(t: int, outcome: StepOutcome, clb: int) -> dict:
    return {
        "t": t,
        "action": outcome.dispatched,
        "start": outcome.start,
        "end": outcome.end,
        "branch_resolved": list(outcome.branch_resolved) if outcome.branch_resolved else None,
        "clb": clb,
    }


def write_trace(path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_trace(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def simulate_order(instance: Instance, scenario: Scenario, order: Sequence[int]) -> int:
    """Makespan of dispatching ``order`` (op ids) in deterministic mode."""
    state = reset(instance, DETERMINISTIC, scenario)
    for op in order:
        state.step(op)
    if not state.terminal:
        raise EngineError("order does not complete the scenario")
    return state.makespan
