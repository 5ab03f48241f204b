"""Uncertain job-shop instances: data model, generator and scenario sampling.

A job is a small DAG of operations.  Most operations have exactly one
successor; a *branching* operation has several, and which one is followed is
decided by chance when the branching operation is dispatched.  Fixing every
branch choice turns the instance into a classical job shop (a *scenario*).
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

SCHEMA_VERSION = 1
MAX_PROC_TIME = 99
DEFAULT_SCENARIO_CAP = 4096
PROB_TOL = 1e-9


class InstanceError(ValueError):
    """Invalid dimensions or malformed job graph."""


class ScenarioCapExceeded(InstanceError):
    pass


@dataclass(frozen=True)
class Operation:
    op_id: int
    job_id: int
    machine_id: int
    proc_time: int


@dataclass(frozen=True)
class JobGraph:
    job_id: int
    ops: tuple[Operation, ...]
    edges: tuple[tuple[int, int, float], ...]
    source_op: int

    @cached_property
    def successors(self) -> dict[int, tuple[tuple[int, float], ...]]:
        out: dict[int, list[tuple[int, float]]] = {op.op_id: [] for op in self.ops}
        for a, b, p in self.edges:
            out[a].append((b, p))
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def predecessors(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {op.op_id: [] for op in self.ops}
        for a, b, _ in self.edges:
            out[b].append(a)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def sinks(self) -> frozenset[int]:
        return frozenset(k for k, v in self.successors.items() if not v)

    @cached_property
    def branching_ops(self) -> tuple[int, ...]:
        return tuple(sorted(k for k, v in self.successors.items() if len(v) >= 2))

    @cached_property
    def topo_order(self) -> tuple[int, ...]:
        indeg = {k: len(v) for k, v in self.predecessors.items()}
        ready = sorted(k for k, d in indeg.items() if d == 0)
        order = []
        while ready:
            u = ready.pop(0)
            order.append(u)
            for v, _ in self.successors[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    ready.append(v)
            ready.sort()
        if len(order) != len(self.ops):
            raise InstanceError(f"job {self.job_id}: edge relation has a cycle")
        return tuple(order)

    def descendants(self, op_id: int) -> frozenset[int]:
        """All ops reachable from ``op_id``, including itself."""
        seen = {op_id}
        stack = [op_id]
        while stack:
            u = stack.pop()
            for v, _ in self.successors[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return frozenset(seen)

    def validate(self, n_machines: int) -> None:
        ids = [op.op_id for op in self.ops]
        if len(set(ids)) != len(ids):
            raise InstanceError(f"job {self.job_id}: duplicate op ids")
        for op in self.ops:
            if op.proc_time < 1:
                raise InstanceError(f"op {op.op_id}: proc_time must be >= 1")
            if not 0 <= op.machine_id < n_machines:
                raise InstanceError(f"op {op.op_id}: machine {op.machine_id} out of range")
            if op.job_id != self.job_id:
                raise InstanceError(f"op {op.op_id}: job id mismatch")
        idset = set(ids)
        for a, b, p in self.edges:
            if a not in idset or b not in idset:
                raise InstanceError(f"job {self.job_id}: edge ({a},{b}) references unknown op")
            if not 0.0 <= p <= 1.0:
                raise InstanceError(f"job {self.job_id}: edge ({a},{b}) prob {p} outside [0,1]")
        sources = [k for k, v in self.predecessors.items() if not v]
        if sources != [self.source_op]:
            raise InstanceError(f"job {self.job_id}: expected single source {self.source_op}, got {sources}")
        self.topo_order  # cycle check
        for k, succ in self.successors.items():
            if succ and abs(sum(p for _, p in succ) - 1.0) > PROB_TOL:
                raise InstanceError(f"job {self.job_id}: outgoing probs of op {k} do not sum to 1")
        if self.descendants(self.source_op) != idset:
            raise InstanceError(f"job {self.job_id}: some ops unreachable from source")


@dataclass(frozen=True)
class Instance:
    n_jobs: int
    n_machines: int
    n_branch: int
    jobs: tuple[JobGraph, ...]
    seed: int = 0

    def __post_init__(self):
        if len(self.jobs) != self.n_jobs:
            raise InstanceError("len(jobs) != n_jobs")
        for j, job in enumerate(self.jobs):
            if job.job_id != j:
                raise InstanceError("jobs must be numbered 0..n_jobs-1 in order")
            job.validate(self.n_machines)
        ids = [op.op_id for job in self.jobs for op in job.ops]
        if sorted(ids) != list(range(len(ids))):
            raise InstanceError("op ids must be exactly 0..n_ops-1")

    @cached_property
    def ops(self) -> tuple[Operation, ...]:
        flat = [op for job in self.jobs for op in job.ops]
        return tuple(sorted(flat, key=lambda o: o.op_id))

    @property
    def n_ops(self) -> int:
        return len(self.ops)

    @cached_property
    def successors(self) -> tuple[tuple[tuple[int, float], ...], ...]:
        out = [()] * self.n_ops
        for job in self.jobs:
            for k, v in job.successors.items():
                out[k] = v
        return tuple(out)

    @cached_property
    def predecessors(self) -> tuple[tuple[int, ...], ...]:
        out = [()] * self.n_ops
        for job in self.jobs:
            for k, v in job.predecessors.items():
                out[k] = v
        return tuple(out)

    @cached_property
    def branching_ops(self) -> frozenset[int]:
        return frozenset(b for job in self.jobs for b in job.branching_ops)

    def scenario_count(self) -> int:
        return math.prod(_job_path_count(job) for job in self.jobs)

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "n_jobs": self.n_jobs,
            "n_machines": self.n_machines,
            "n_branch": self.n_branch,
            "seed": self.seed,
            "jobs": [
                {
                    "job_id": job.job_id,
                    "ops": [
                        {"op_id": o.op_id, "machine_id": o.machine_id, "proc_time": o.proc_time}
                        for o in job.ops
                    ],
                    "edges": [{"from": a, "to": b, "prob": p} for a, b, p in job.edges],
                    "source": job.source_op,
                }
                for job in self.jobs
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "Instance":
        if d.get("version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise InstanceError(f"unsupported instance version {d.get('version')}")
        try:
            jobs = []
            for jd in d["jobs"]:
                jid = int(jd["job_id"])
                ops = tuple(
                    Operation(int(o["op_id"]), jid, int(o["machine_id"]), int(o["proc_time"]))
                    for o in jd["ops"]
                )
                edges = tuple((int(e["from"]), int(e["to"]), float(e["prob"])) for e in jd["edges"])
                jobs.append(JobGraph(jid, ops, edges, int(jd["source"])))
            return cls(
                n_jobs=int(d["n_jobs"]),
                n_machines=int(d["n_machines"]),
                n_branch=int(d.get("n_branch", 0)),
                jobs=tuple(jobs),
                seed=int(d.get("seed", 0)),
            )
        except KeyError as exc:
            raise InstanceError(f"missing field {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        return cls.from_dict(json.loads(text))


def from_chains(chains: Sequence[Sequence[tuple[int, int]]], n_machines: int | None = None) -> Instance:
    """Build a deterministic instance from per-job lists of ``(machine, proc_time)``."""
    if n_machines is None:
        n_machines = 1 + max(m for chain in chains for m, _ in chain)
    jobs = []
    nxt = 0
    for j, chain in enumerate(chains):
        ops = tuple(Operation(nxt + k, j, m, p) for k, (m, p) in enumerate(chain))
        edges = tuple((ops[k].op_id, ops[k + 1].op_id, 1.0) for k in range(len(ops) - 1))
        jobs.append(JobGraph(j, ops, edges, ops[0].op_id))
        nxt += len(ops)
    return Instance(len(chains), n_machines, 0, tuple(jobs), 0)


# generation -----------------------------------------------------------------


def branch_positions(n_machines: int, n_branch: int) -> list[int]:
    """Positions along the base route where branching operations sit."""
    return [(b * n_machines) // n_branch for b in range(n_branch)]


def generate_instance(
    n_jobs: int,
    n_machines: int,
    n_branch: int,
    seed: int,
    branch_probs: tuple[float, float] = (0.5, 0.5),
) -> Instance:
    """Taillard-style random instance with ``n_branch`` binary branches per job.

    Each job draws a machine permutation and integer processing times in
    [1, 99].  At every branch position ``p`` the op at ``p`` becomes a
    branching op; the next two machines form a segment that is offered in both
    orders (the reversed one with fresh processing times) and both
    alternatives merge back into the remaining route.
    """
    if n_jobs < 1 or n_machines < 2 or n_branch < 0 or 3 * n_branch > n_machines:
        raise InstanceError(
            f"invalid dimensions: n_jobs={n_jobs} n_machines={n_machines} n_branch={n_branch}"
        )
    if len(branch_probs) != 2 or abs(sum(branch_probs) - 1.0) > PROB_TOL or min(branch_probs) < 0:
        raise InstanceError(f"branch_probs must be two probabilities summing to 1, got {branch_probs}")
    rng = np.random.default_rng(seed)
    positions = set(branch_positions(n_machines, n_branch))
    jobs = []
    nxt = 0
    for j in range(n_jobs):
        perm = rng.permutation(n_machines)
        times = rng.integers(1, MAX_PROC_TIME + 1, size=n_machines)
        ops: list[Operation] = []
        edges: list[tuple[int, int, float]] = []

        def new_op(m, p):
            nonlocal nxt
            ops.append(Operation(nxt, j, int(m), int(p)))
            nxt += 1
            return nxt - 1

        tails = [new_op(perm[0], times[0])]
        k = 0
        while True:
            if k in positions:
                alt_times = rng.integers(1, MAX_PROC_TIME + 1, size=2)
                (branch_op,) = tails
                a1 = new_op(perm[k + 1], times[k + 1])
                a2 = new_op(perm[k + 2], times[k + 2])
                b1 = new_op(perm[k + 2], alt_times[0])
                b2 = new_op(perm[k + 1], alt_times[1])
                edges += [
                    (branch_op, a1, float(branch_probs[0])),
                    (branch_op, b1, float(branch_probs[1])),
                    (a1, a2, 1.0),
                    (b1, b2, 1.0),
                ]
                tails = [a2, b2]
                k += 2
            if k + 1 >= n_machines:
                break
            k += 1
            nxt_op = new_op(perm[k], times[k])
            edges += [(t, nxt_op, 1.0) for t in tails]
            tails = [nxt_op]
        jobs.append(JobGraph(j, tuple(ops), tuple(edges), ops[0].op_id))
    return Instance(n_jobs, n_machines, n_branch, tuple(jobs), int(seed))


# scenarios --------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """One realization of every job's route: a classical job-shop instance."""

    instance: Instance = field(repr=False, compare=False)
    realized_path: tuple[tuple[int, ...], ...]
    branch_choices: Mapping[int, int]
    probability: float = 1.0

    @cached_property
    def machines(self) -> list[list[int]]:
        ops = self.instance.ops
        return [[ops[o].machine_id for o in path] for path in self.realized_path]

    @cached_property
    def times(self) -> list[list[int]]:
        ops = self.instance.ops
        return [[ops[o].proc_time for o in path] for path in self.realized_path]

    def key(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(self.branch_choices.items()))

    def to_dict(self) -> dict:
        return {
            "instance": self.instance.to_dict(),
            "branch_choices": {str(k): v for k, v in sorted(self.branch_choices.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        inst = Instance.from_dict(d["instance"])
        choices = {int(k): int(v) for k, v in d.get("branch_choices", {}).items()}
        return scenario_from_choices(inst, choices)


def scenario_from_choices(instance: Instance, choices: Mapping[int, int]) -> Scenario:
    """Follow ``choices`` from every source; every branching op met must be decided."""
    paths = []
    used = {}
    prob = 1.0
    succ = instance.successors
    for job in instance.jobs:
        path = [job.source_op]
        u = job.source_op
        while succ[u]:
            if len(succ[u]) == 1:
                u = succ[u][0][0]
            else:
                if u not in choices:
                    raise InstanceError(f"branching op {u} has no recorded choice")
                v = choices[u]
                probs = dict(succ[u])
                if v not in probs:
                    raise InstanceError(f"op {v} is not a successor of branching op {u}")
                used[u] = v
                prob *= probs[v]
                u = v
            path.append(u)
        paths.append(tuple(path))
    return Scenario(instance, tuple(paths), dict(sorted(used.items())), prob)


def _draw_choice(succ: Sequence[tuple[int, float]], rng: np.random.Generator) -> int:
    u = rng.random()
    acc = 0.0
    for v, p in succ:
        acc += p
        if u < acc:
            return v
    return next(v for v, p in reversed(succ) if p > 0)


def sample_scenario(instance: Instance, rng: np.random.Generator | int) -> Scenario:
    """Draw every branching op's successor independently from its edge probabilities.

    One uniform is consumed per branching op, in ascending op-id order.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    succ = instance.successors
    choices = {b: _draw_choice(succ[b], rng) for b in sorted(instance.branching_ops)}
    return scenario_from_choices(instance, choices)


def _job_path_count(job: JobGraph) -> int:
    count = {s: 1 for s in job.sinks}
    for u in reversed(job.topo_order):
        if u not in count:
            count[u] = sum(count[v] for v, _ in job.successors[u])
    return count[job.source_op]


def enumerate_scenarios(instance: Instance, cap: int = DEFAULT_SCENARIO_CAP) -> list[Scenario]:
    """Every joint branch realization reachable from the sources, with its probability."""
    total = instance.scenario_count()
    if total > cap:
        raise ScenarioCapExceeded(f"{total} scenarios exceed cap {cap}")
    per_job: list[list[dict[int, int]]] = []
    succ = instance.successors
    for job in instance.jobs:
        outcomes: list[dict[int, int]] = []

        def walk(u, chosen):
            while len(succ[u]) == 1:
                u = succ[u][0][0]
            if not succ[u]:
                outcomes.append(dict(chosen))
                return
            for v, _ in succ[u]:
                chosen[u] = v
                walk(v, chosen)
                del chosen[u]

        walk(job.source_op, {})
        per_job.append(outcomes)
    scenarios = []
    for combo in itertools.product(*per_job):
        choices: dict[int, int] = {}
        for c in combo:
            choices.update(c)
        scenarios.append(scenario_from_choices(instance, choices))
    return scenarios

