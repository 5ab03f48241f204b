"""Priority dispatching rules.

The seven priority rules act like an event-driven dispatcher: among the
eligible ops they only consider those that can start at the next decision
time (the non-delay set), then pick by priority key.  RANDOM picks uniformly
from the full eligible set.

Rules that look ahead (MOR/LOR, MWKR/LWKR) use the expected remaining route of
the job when a branch is still unresolved.  Ties go to the lowest job id, then
the lowest op id.
"""
from __future__ import annotations

import enum
from typing import Optional, Sequence

import numpy as np

from .engine import SchedState, remaining_ops, remaining_work


class RuleKind(str, enum.Enum):
    FIFO = "FIFO"
    LOR = "LOR"
    LWKR = "LWKR"
    LPT = "LPT"
    MOR = "MOR"
    MWKR = "MWKR"
    SPT = "SPT"
    RANDOM = "RANDOM"


PDRS = (RuleKind.FIFO, RuleKind.LOR, RuleKind.LWKR, RuleKind.LPT,
        RuleKind.MOR, RuleKind.MWKR, RuleKind.SPT)


def parse_rule(name: str) -> RuleKind:
    try:
        return RuleKind(name.upper())
    except ValueError:
        raise ValueError(f"unknown rule {name!r}; choose from {[r.value for r in RuleKind]}") from None


def apply_rule(rule: RuleKind | str, state: SchedState, eligible: Sequence[int],
               rng: Optional[np.random.Generator] = None) -> int:
    if not eligible:
        raise ValueError("eligible set is empty")
    rule = parse_rule(rule) if isinstance(rule, str) else rule
    ops = state.instance.ops
    if rule is RuleKind.RANDOM:
        if rng is None:
            raise ValueError("RANDOM rule needs an rng")
        return int(sorted(eligible)[rng.integers(len(eligible))])

    eligible = non_delay(state, eligible)
    reach = state.reach_probabilities() if rule in _LOOKAHEAD else None

    def key(u):
        op = ops[u]
        j = op.job_id
        if rule is RuleKind.FIFO:
            k = state.job_ready[j]
        elif rule is RuleKind.SPT:
            k = op.proc_time
        elif rule is RuleKind.LPT:
            k = -op.proc_time
        elif rule is RuleKind.MOR:
            k = -remaining_ops(state, j, reach)
        elif rule is RuleKind.LOR:
            k = remaining_ops(state, j, reach)
        elif rule is RuleKind.MWKR:
            k = -remaining_work(state, j, reach)
        else:  # LWKR
            k = remaining_work(state, j, reach)
        return (k, j, u)

    return min(eligible, key=key)


def non_delay(state: SchedState, eligible: Sequence[int]) -> list[int]:
    """Members of ``eligible`` whose start time would be the earliest possible."""
    starts = [state.earliest_start(u) for u in eligible]
    t = min(starts)
    return [u for u, s in zip(eligible, starts) if s == t]


_LOOKAHEAD = {RuleKind.MOR, RuleKind.LOR, RuleKind.MWKR, RuleKind.LWKR}
