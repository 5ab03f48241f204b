"""Exact makespan oracle for small deterministic scenarios."""
from __future__ import annotations

from .instance import DEFAULT_SCENARIO_CAP, Instance, Scenario, enumerate_scenarios
from . import kernels

DEFAULT_NODE_BUDGET = 5_000_000


def solve_optimal(scenario: Scenario, node_budget: int = DEFAULT_NODE_BUDGET,
                  prune: bool = True, dominance: bool = True) -> tuple[int, bool]:
    """Optimal makespan and whether optimality was proven within ``node_budget``.

    On budget exhaustion the best makespan found so far is returned with
    ``proof=False`` (or ``-1`` if no complete schedule was reached).
    """
    best, _, complete = kernels.bnb_solve(
        scenario.machines, scenario.times, scenario.instance.n_machines,
        node_budget, prune, dominance,
    )
    return best, complete


def expected_optimal(instance: Instance, cap: int = DEFAULT_SCENARIO_CAP,
                     node_budget: int = DEFAULT_NODE_BUDGET) -> float:
    """Probability-weighted mean of per-scenario optima."""
    total = 0.0
    for sc in enumerate_scenarios(instance, cap):
        if sc.probability == 0.0:
            continue
        c, _ = solve_optimal(sc, node_budget)
        total += sc.probability * c
    return total
