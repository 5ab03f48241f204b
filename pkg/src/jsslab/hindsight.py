"""Hindsight reconstruction of stochastic episodes.

Once an episode is over every branch outcome is known, so the episode can be
replayed in the deterministic instance it actually turned out to be.  The
replay yields the deterministic-state features the critic trains on and the
lower-bound rewards.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import engine
from .engine import DETERMINISTIC, STOCHASTIC, DisjunctiveView, SchedState
from .instance import Instance, InstanceError, Scenario, scenario_from_choices


class IncompleteTrajectoryError(ValueError):
    pass


class ReplayError(RuntimeError):
    """A recorded action was not legal on replay; indicates an engine bug."""


@dataclass
class StochStep:
    view: Optional[DisjunctiveView]
    action: int
    log_prob: float = 0.0
    branch_resolved: Optional[tuple[int, int]] = None


@dataclass
class StochTrajectory:
    instance: Instance
    steps: list[StochStep] = field(default_factory=list)
    final_makespan: int = 0
    terminal: bool = False
    mode: str = STOCHASTIC

    @property
    def actions(self) -> list[int]:
        return [s.action for s in self.steps]


@dataclass
class DetStep:
    view: Optional[DisjunctiveView]
    action: int
    reward: int


@dataclass
class HindsightTrajectory:
    scenario: Scenario
    steps: list[DetStep]
    final_makespan: int
    initial_bound: int

    @property
    def rewards(self) -> list[int]:
        return [s.reward for s in self.steps]

    @property
    def actions(self) -> list[int]:
        return [s.action for s in self.steps]


def collect_trajectory(
    instance: Instance,
    choose: Callable[[SchedState, Optional[DisjunctiveView]], tuple[int, float]],
    rng: np.random.Generator | int,
    record_views: bool = True,
) -> StochTrajectory:
    """Run one stochastic episode; ``choose`` returns ``(action, log_prob)``."""
    state = engine.reset(instance, STOCHASTIC, rng=rng)
    traj = StochTrajectory(instance)
    while not state.terminal:
        view = engine.disjunctive_view(state) if record_views else None
        action, logp = choose(state, view)
        out = state.step(action)
        traj.steps.append(StochStep(view, action, logp, out.branch_resolved))
    traj.final_makespan = state.makespan
    traj.terminal = True
    return traj


def extract_scenario(traj: StochTrajectory) -> Scenario:
    """The scenario implied by the branch outcomes revealed during the episode."""
    if not traj.terminal:
        raise IncompleteTrajectoryError("trajectory did not reach a terminal state")
    choices = {}
    for s in traj.steps:
        if s.branch_resolved is not None:
            b, c = s.branch_resolved
            choices[b] = c
    try:
        scenario = scenario_from_choices(traj.instance, choices)
    except InstanceError as exc:
        raise IncompleteTrajectoryError(str(exc)) from None
    if len(traj.steps) != sum(len(p) for p in scenario.realized_path):
        raise IncompleteTrajectoryError("trajectory length does not match the realized routes")
    return scenario


def reconstruct(traj: StochTrajectory, record_views: bool = True) -> HindsightTrajectory:
    """Replay the recorded actions in the deterministic twin, collecting rewards."""
    scenario = extract_scenario(traj)
    state = engine.reset(traj.instance, DETERMINISTIC, scenario)
    clb = engine.lower_bound(state)
    clb0 = clb
    steps = []
    for s in traj.steps:
        if state.terminal or s.action not in state.job_front:
            raise ReplayError(f"recorded action {s.action} is not eligible on replay")
        view = engine.disjunctive_view(state) if record_views else None
        state.step(s.action)
        nxt = engine.lower_bound(state)
        steps.append(DetStep(view, s.action, clb - nxt))
        clb = nxt
    if not state.terminal or state.makespan != traj.final_makespan:
        raise ReplayError(
            f"replay makespan {state.makespan} differs from episode makespan {traj.final_makespan}"
        )
    return HindsightTrajectory(scenario, steps, state.makespan, clb0)


def trajectory_from_trace(instance: Instance, records: Sequence[dict]) -> StochTrajectory:
    """Rebuild a (view-less) trajectory from episode trace records."""
    traj = StochTrajectory(instance)
    for rec in sorted(records, key=lambda r: r["t"]):
        br = rec.get("branch_resolved")
        traj.steps.append(StochStep(None, int(rec["action"]), 0.0, tuple(br) if br else None))
    traj.final_makespan = max((int(r["end"]) for r in records), default=0)
    fronts_done = _covers_routes(instance, traj)
    traj.terminal = fronts_done
    return traj


def _covers_routes(instance: Instance, traj: StochTrajectory) -> bool:
    choices = {s.branch_resolved[0]: s.branch_resolved[1] for s in traj.steps if s.branch_resolved}
    try:
        scenario = scenario_from_choices(instance, choices)
    except InstanceError:
        return False
    return len(traj.steps) == sum(len(p) for p in scenario.realized_path)


def hindsight_records(h: HindsightTrajectory) -> list[dict]:
    """JSON-ready rows of a reconstruction, one per step."""
    return [
        {"t": t, "action": s.action, "reward": s.reward} for t, s in enumerate(h.steps)
    ]
