import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jsslab import kernels
from jsslab.instance import Instance, enumerate_scenarios, from_chains, generate_instance, sample_scenario
from jsslab.rules import PDRS, RuleKind, apply_rule
from jsslab import engine
from jsslab.solver import expected_optimal, solve_optimal

from oracles import brute_force_optimum, schedule_makespan

T1 = from_chains([[(0, 3), (1, 2)], [(1, 2), (0, 4)]])

# value of expected_optimal(generate_instance(3, 3, 1, 2024)) by brute-force
# enumeration of every dispatch order of every scenario (tests/oracles.py)
EXPECTED_3x3_2024 = 168.125


def test_t1_optimum():
    assert solve_optimal(sample_scenario(T1, 0)) == (7, True)


def test_t1_by_enumeration():
    sc = sample_scenario(T1, 0)
    assert brute_force_optimum(sc.machines, sc.times) == 7


def test_single_machine_sum():
    inst = from_chains([[(0, 2)], [(0, 3)], [(0, 4)]])
    assert solve_optimal(sample_scenario(inst, 0)) == (9, True)


def test_all_2x2_instances_match_enumeration():
    # every machine routing of two jobs over two machines, times from a small grid
    routes = [(0, 1), (1, 0)]
    for r0, r1 in itertools.product(routes, routes):
        for times in itertools.product([1, 2, 5], repeat=4):
            machines = [list(r0), list(r1)]
            t = [list(times[:2]), list(times[2:])]
            full, _, done = kernels.bnb_solve(machines, t, 2, 10**7, prune=False, dominance=False)
            fast, _, proof = kernels.bnb_solve(machines, t, 2, 10**7)
            assert done and proof
            assert fast == full == brute_force_optimum(machines, t)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_3x3_matches_enumeration(seed):
    inst = generate_instance(3, 3, 0, seed)
    sc = sample_scenario(inst, 0)
    c, proof = solve_optimal(sc)
    assert proof and c == brute_force_optimum(sc.machines, sc.times)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_pruning_never_changes_proven_optimum(seed):
    sc = sample_scenario(generate_instance(3, 4, 1, seed), seed)
    ref = solve_optimal(sc, prune=False, dominance=False)
    assert ref[1]
    for prune, dom in [(True, False), (False, True), (True, True)]:
        c, proof = solve_optimal(sc, prune=prune, dominance=dom)
        assert proof and c == ref[0]


def test_budget_exhaustion_is_flagged():
    sc = sample_scenario(generate_instance(8, 8, 0, 1), 0)
    c, proof = solve_optimal(sc, node_budget=50)
    assert (c, proof) == (-1, False)
    c, proof = solve_optimal(sc, node_budget=500)
    assert not proof and c >= solve_optimal(sc)[0]


def test_expected_optimal_deterministic_equals_solve():
    inst = generate_instance(3, 3, 0, 5)
    assert expected_optimal(inst) == solve_optimal(enumerate_scenarios(inst)[0])[0]


def test_expected_optimal_two_equiprobable_scenarios():
    d = {"n_jobs": 1, "n_machines": 2, "n_branch": 1, "seed": 0, "jobs": [{
        "job_id": 0, "source": 0,
        "ops": [{"op_id": 0, "machine_id": 0, "proc_time": 1},
                {"op_id": 1, "machine_id": 1, "proc_time": 6},
                {"op_id": 2, "machine_id": 1, "proc_time": 8}],
        "edges": [{"from": 0, "to": 1, "prob": 0.5}, {"from": 0, "to": 2, "prob": 0.5}]}]}
    assert expected_optimal(Instance.from_dict(d)) == 8.0


def test_expected_optimal_regression_fixture():
    assert expected_optimal(generate_instance(3, 3, 1, 2024)) == EXPECTED_3x3_2024


@pytest.mark.parametrize("backend", ["python", "cython"])
def test_backends_agree(backend):
    mod = kernels.python_backend if backend == "python" else kernels.cython_backend
    if mod is None:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(3)
    for k in range(30):
        sc = sample_scenario(generate_instance(4, 4, 1, k), k)
        ref = kernels.python_backend.bnb_solve(sc.machines, sc.times, 4, 10**6)
        assert mod.bnb_solve(sc.machines, sc.times, 4, 10**6) == ref
        order = rng.permutation([j for j in range(4) for _ in range(4)]).tolist()
        assert mod.simulate_order(sc.machines, sc.times, 4, order) == schedule_makespan(sc.machines, sc.times, order)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_rules_never_beat_the_optimum(seed):
    inst = generate_instance(3, 3, 1, seed)
    sc = sample_scenario(inst, seed)
    c, _ = solve_optimal(sc)
    rng = np.random.default_rng(seed)
    for rule in list(PDRS) + [RuleKind.RANDOM]:
        s = engine.reset(inst, engine.DETERMINISTIC, sc)
        while not s.terminal:
            s.step(apply_rule(rule, s, s.eligible(), rng))
        assert s.makespan >= c
