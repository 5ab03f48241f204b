"""Pure-Python kernels.  Same contracts as the compiled ``_bnb`` module."""
from __future__ import annotations

import math
from typing import Sequence

INF = math.inf


def bnb_solve(machines: Sequence[Sequence[int]], times: Sequence[Sequence[int]], n_machines: int,
              node_budget: int, prune: bool = True, dominance: bool = True,
              upper_bound: float = INF) -> tuple[int, int, bool]:
    """Depth-first search over dispatch orders of a deterministic job shop.

    Returns ``(best_makespan, nodes_expanded, complete)``.  With ``dominance``
    the branching set is restricted to the Giffler-Thompson conflict set (ops on
    the machine of the earliest-completing candidate that could start before
    that completion); with ``prune`` subtrees whose bound reaches the
    incumbent are cut.
    """
    J = len(machines)
    lengths = [len(r) for r in machines]
    total = sum(lengths)
    nxt = [0] * J
    jr = [0] * J
    mf = [0] * n_machines
    rem_job = [sum(t) for t in times]
    rem_mach = [0] * n_machines
    for j in range(J):
        for m, p in zip(machines[j], times[j]):
            rem_mach[m] += p
    best = upper_bound
    nodes = 0
    aborted = False

    def dfs(depth):
        nonlocal best, nodes, aborted
        if depth == total:
            ms = max(mf) if mf else 0
            if ms < best:
                best = ms
            return
        nodes += 1
        if nodes > node_budget:
            aborted = True
            return
        if prune:
            lb = 0
            for j in range(J):
                v = jr[j] + rem_job[j]
                if v > lb:
                    lb = v
            for m in range(n_machines):
                v = mf[m] + rem_mach[m]
                if v > lb:
                    lb = v
            if lb >= best:
                return
        cands = []
        for j in range(J):
            k = nxt[j]
            if k < lengths[j]:
                m = machines[j][k]
                est = jr[j] if jr[j] > mf[m] else mf[m]
                cands.append((est, j, m, times[j][k]))
        if dominance:
            cstar, mstar = INF, -1
            for est, j, m, p in cands:
                if est + p < cstar:
                    cstar, mstar = est + p, m
            cands = [c for c in cands if c[2] == mstar and c[0] < cstar]
        cands.sort()
        for est, j, m, p in cands:
            old_jr, old_mf = jr[j], mf[m]
            end = est + p
            jr[j] = end
            mf[m] = end
            nxt[j] += 1
            rem_job[j] -= p
            rem_mach[m] -= p
            dfs(depth + 1)
            nxt[j] -= 1
            rem_job[j] += p
            rem_mach[m] += p
            jr[j] = old_jr
            mf[m] = old_mf
            if aborted:
                return

    dfs(0)
    return (int(best) if best < INF else -1), nodes, not aborted


def simulate_order(machines: Sequence[Sequence[int]], times: Sequence[Sequence[int]],
                   n_machines: int, job_order: Sequence[int]) -> int:
    """Makespan of dispatching jobs' next ops in ``job_order`` (job ids)."""
    nxt = [0] * len(machines)
    jr = [0] * len(machines)
    mf = [0] * n_machines
    for j in job_order:
        k = nxt[j]
        m = machines[j][k]
        end = max(jr[j], mf[m]) + times[j][k]
        jr[j] = mf[m] = end
        nxt[j] = k + 1
    return max(mf) if mf else 0
