"""Multi-seed evaluation: Avg, CVaR and Gap, baseline sweeps and ablation tables.

Run ``r`` of every instance uses environment seed ``seed + r``, so all
policies in a sweep face the same hidden branch realizations.  The exact
reference of an instance is the mean optimum of exactly those realized
scenarios; every policy's per-run makespan is at least the per-run optimum,
so its gap against this reference is never negative.
"""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .instance import Instance, sample_scenario
from .models import ModelBundle
from .policies import ModelPolicy, Policy, RulePolicy, run_lockstep
from .rules import PDRS, RuleKind
from .solver import DEFAULT_NODE_BUDGET, solve_optimal

REFERENCE_KINDS = ("optimal", "best-found", "none")
EXACT_MAX_SIZE = 50          # n_jobs * n_machines at or below which the exact reference is tried
EXACT_NODE_BUDGET = 2_000_000
CVAR_ALPHA = 0.2


class MissingCheckpointError(FileNotFoundError):
    pass


def cvar(makespans: Sequence[float], alpha: float = CVAR_ALPHA) -> float:
    """Mean of the ceil(alpha * n) largest values."""
    v = np.asarray(makespans, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cvar of an empty list")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    k = math.ceil(round(alpha * v.size, 9))
    return float(np.sort(v)[::-1][:k].mean())


def gap_pct(value: float, reference: float) -> float:
    if reference <= 0:
        raise ValueError(f"reference must be positive, got {reference}")
    return 100.0 * (value - reference) / reference


def instance_id(inst: Instance) -> str:
    return f"{inst.n_jobs}x{inst.n_machines}b{inst.n_branch}-s{inst.seed}"


@dataclass
class EvalRow:
    instance_id: str
    policy: str
    makespans: list[int]
    avg: float
    cvar: float
    gap_pct: Optional[float] = None
    reference_kind: str = "none"
    reference: Optional[float] = None


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    def by_policy(self) -> dict[str, list[EvalRow]]:
        out: dict[str, list[EvalRow]] = {}
        for r in self.rows:
            out.setdefault(r.policy, []).append(r)
        return out

    def summary(self) -> list[EvalRow]:
        """One aggregate row per policy: means of Avg and CVaR, gap of the means."""
        out = []
        for name, rows in self.by_policy().items():
            avg = float(np.mean([r.avg for r in rows]))
            cv = float(np.mean([r.cvar for r in rows]))
            refs = [r.reference for r in rows]
            kinds = {r.reference_kind for r in rows}
            if None in refs:
                gap, kind, ref = None, "none", None
            else:
                ref = float(np.mean(refs))
                gap = gap_pct(avg, ref)
                kind = kinds.pop() if len(kinds) == 1 else "mixed"
            out.append(EvalRow("mean", name, [], avg, cv, gap, kind, ref))
        return out

    def to_csv(self, include_summary: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["instance_id", "policy", "avg", "cvar", "gap_pct", "reference_kind"])
        rows = self.rows + (self.summary() if include_summary else [])
        for r in rows:
            w.writerow([r.instance_id, r.policy, f"{r.avg:.4f}", f"{r.cvar:.4f}",
                        "" if r.gap_pct is None else f"{r.gap_pct:.4f}", r.reference_kind])
        return buf.getvalue()


def run_seeds(runs: int, seed: int) -> list[int]:
    return [seed + r for r in range(runs)]


def rollout_makespans(policy: Policy, inst: Instance, runs: int, seed: int) -> list[int]:
    return [s.makespan for s in run_lockstep(policy, inst, run_seeds(runs, seed))]


def sample_optimal_reference(inst: Instance, runs: int, seed: int,
                             node_budget: int = EXACT_NODE_BUDGET) -> Optional[float]:
    """Mean optimum over the scenarios drawn by runs ``seed .. seed+runs-1``; None if any proof fails."""
    cache: dict = {}
    total = 0.0
    for s in run_seeds(runs, seed):
        sc = sample_scenario(inst, s)
        key = sc.key()
        if key not in cache:
            c, proof = solve_optimal(sc, node_budget)
            if not proof:
                return None
            cache[key] = c
        total += cache[key]
    return total / runs


def _eval_one(args):
    policy, inst, runs, seed, alpha = args
    ms = rollout_makespans(policy, inst, runs, seed)
    return EvalRow(instance_id(inst), policy.name, ms, float(np.mean(ms)), cvar(ms, alpha))


def _workers(workers: Optional[int]) -> int:
    if workers is None:
        workers = int(os.environ.get("JSSLAB_WORKERS", "1") or 1)
    return max(1, workers)


def _map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _ref_task(args):
    inst, runs, seed, budget = args
    return sample_optimal_reference(inst, runs, seed, budget)


def evaluate_policies(policies: Sequence[Policy], instances: Sequence[Instance], runs: int = 50, seed: int = 0,
                      reference: str = "auto", alpha: float = CVAR_ALPHA, workers: Optional[int] = None,
                      ids: Optional[Sequence[str]] = None, exact_max_size: int = EXACT_MAX_SIZE,
                      node_budget: int = EXACT_NODE_BUDGET) -> EvalReport:
    """Evaluate every policy on every instance and attach a gap reference.

    ``reference``: "auto" (exact when small and provable, otherwise best-found),
    "optimal" (exact or fail), "best-found" (lowest Avg in this sweep) or "none".
    """
    if reference not in ("auto",) + REFERENCE_KINDS:
        raise ValueError(f"unknown reference {reference!r}")
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if not instances:
        raise ValueError("no instances to evaluate")
    workers = _workers(workers)
    tasks = [(p, inst, runs, seed, alpha) for inst in instances for p in policies]
    rows = _map(_eval_one, tasks, workers)
    if ids is not None:
        for k, r in enumerate(rows):
            r.instance_id = ids[k // len(policies)]

    refs: list[tuple[str, Optional[float]]] = [("none", None)] * len(instances)
    if reference in ("auto", "optimal"):
        todo = [i for i, inst in enumerate(instances)
                if reference == "optimal" or inst.n_jobs * inst.n_machines <= exact_max_size]
        exact = _map(_ref_task, [(instances[i], runs, seed, node_budget) for i in todo], workers)
        for i, v in zip(todo, exact):
            if v is not None:
                refs[i] = ("optimal", v)
        if reference == "optimal" and any(k != "optimal" for k, _ in refs):
            raise RuntimeError("exact reference unavailable: optimality not proven within the node budget")
    if reference in ("auto", "best-found"):
        for i in range(len(instances)):
            if refs[i][0] == "none":
                own = rows[i * len(policies):(i + 1) * len(policies)]
                refs[i] = ("best-found", min(r.avg for r in own))
    for k, r in enumerate(rows):
        kind, ref = refs[k // len(policies)]
        r.reference_kind, r.reference = kind, ref
        r.gap_pct = None if ref is None else gap_pct(r.avg, ref)
    return EvalReport(rows)


def evaluate_policy(policy: Policy, instances: Sequence[Instance], runs: int = 50, seed: int = 0,
                    reference: str = "auto", **kw) -> EvalReport:
    return evaluate_policies([policy], instances, runs, seed, reference, **kw)


def baseline_policies(include_random: bool = True) -> list[Policy]:
    rules = list(PDRS) + ([RuleKind.RANDOM] if include_random else [])
    return [RulePolicy(r) for r in rules]


def load_model_policy(path, name: Optional[str] = None) -> ModelPolicy:
    """Greedy policy from a checkpoint; the risk vector is used iff the training mode had it."""
    p = Path(path)
    if not p.is_file():
        raise MissingCheckpointError(f"checkpoint not found: {p}")
    bundle, meta = ModelBundle.load(p)
    mode = meta.get("train_config", {}).get("mode", "UP-AAC")
    from .trainer import uses_upm
    return ModelPolicy(bundle, use_upm=uses_upm(mode), greedy=True, name=name or mode)


def ablation_table(checkpoints: Mapping[str, str | os.PathLike], instance_sets: Mapping[str, Sequence[Instance]],
                   runs: int = 50, seed: int = 0, workers: Optional[int] = None,
                   modes: Optional[Sequence[str]] = None) -> str:
    """CSV with one row per mode and Avg/CVaR columns per instance set."""
    from .trainer import MODES
    modes = list(modes or MODES)
    missing = [m for m in modes if m not in checkpoints]
    if missing:
        raise MissingCheckpointError(f"no checkpoint given for mode(s): {', '.join(missing)}")
    policies = [load_model_policy(checkpoints[m], name=m) for m in modes]
    header = ["mode"]
    for s in instance_sets:
        header += [f"{s}_avg", f"{s}_cvar"]
    table = {m: [m] for m in modes}
    for sname, insts in instance_sets.items():
        rep = evaluate_policies(policies, insts, runs, seed, reference="none", workers=workers)
        for row in rep.summary():
            table[row.policy] += [f"{row.avg:.4f}", f"{row.cvar:.4f}"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for m in modes:
        w.writerow(table[m])
    return buf.getvalue()


def write_csv(path, text: str) -> None:
    ad.atomic_write(Path(path), text.encode())
