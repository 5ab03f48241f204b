import numpy as np
import pytest

from jsslab import engine
from jsslab.hindsight import (IncompleteTrajectoryError, ReplayError, StochStep, StochTrajectory,
                              collect_trajectory, extract_scenario, hindsight_records, reconstruct,
                              trajectory_from_trace)
from jsslab.instance import from_chains, generate_instance, sample_scenario
from jsslab.rules import RuleKind, apply_rule


def random_chooser(seed):
    rng = np.random.default_rng(seed)

    def choose(state, view):
        el = state.eligible()
        return el[rng.integers(len(el))], -np.log(len(el))

    return choose


def test_reconstruction_reproduces_episode():
    inst = generate_instance(4, 6, 2, 3)
    tr = collect_trajectory(inst, random_chooser(1), rng=11)
    h = reconstruct(tr)
    assert h.final_makespan == tr.final_makespan
    assert h.actions == tr.actions
    assert sum(h.rewards) == h.initial_bound - h.final_makespan
    assert h.scenario.branch_choices == sample_scenario(inst, 11).branch_choices
    assert all(s.view is not None for s in h.steps)


def test_deterministic_instance_stochastic_equals_hindsight_views():
    inst = generate_instance(3, 4, 0, 2)
    tr = collect_trajectory(inst, random_chooser(2), rng=0)
    h = reconstruct(tr)
    for a, b in zip(tr.steps, h.steps):
        np.testing.assert_array_equal(a.view.features, b.view.features)
        assert a.view.nodes == b.view.nodes


def test_incomplete_trajectory_rejected():
    inst = generate_instance(2, 4, 1, 0)
    tr = collect_trajectory(inst, random_chooser(0), rng=0)
    tr.steps = tr.steps[:3]
    with pytest.raises(IncompleteTrajectoryError):
        extract_scenario(tr)
    tr.terminal = False
    with pytest.raises(IncompleteTrajectoryError):
        reconstruct(tr)


def test_tampered_action_is_a_replay_error():
    t1 = from_chains([[(0, 3), (1, 2)], [(1, 2), (0, 4)]])
    tr = StochTrajectory(t1, [StochStep(None, a) for a in (1, 0, 2, 3)], 7, True)
    with pytest.raises(ReplayError):
        reconstruct(tr, record_views=False)


def test_wrong_makespan_is_a_replay_error():
    t1 = from_chains([[(0, 3), (1, 2)], [(1, 2), (0, 4)]])
    tr = StochTrajectory(t1, [StochStep(None, a) for a in (2, 0, 1, 3)], 8, True)
    with pytest.raises(ReplayError):
        reconstruct(tr, record_views=False)


def test_trace_to_hindsight():
    inst = generate_instance(3, 5, 1, 4)
    s = engine.reset(inst, engine.STOCHASTIC, rng=5)
    recs = []
    while not s.terminal:
        out = s.step(apply_rule(RuleKind.MWKR, s, s.eligible()))
        recs.append(engine.trace_record(len(recs), out, engine.lower_bound(s)))
    tr = trajectory_from_trace(inst, recs)
    assert tr.terminal
    h = reconstruct(tr, record_views=False)
    assert h.final_makespan == s.makespan
    rows = hindsight_records(h)
    assert [r["action"] for r in rows] == [r["action"] for r in recs]


def test_partial_trace_is_not_terminal():
    inst = generate_instance(2, 4, 1, 0)
    s = engine.reset(inst, engine.STOCHASTIC, rng=0)
    recs = []
    for _ in range(3):
        out = s.step(s.eligible()[0])
        recs.append(engine.trace_record(len(recs), out, engine.lower_bound(s)))
    assert not trajectory_from_trace(inst, recs).terminal
