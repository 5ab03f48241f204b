import numpy as np
import pytest

from jsslab import engine
from jsslab.engine import DETERMINISTIC, STOCHASTIC, reset
from jsslab.instance import from_chains, generate_instance, sample_scenario
from jsslab.rules import PDRS, RuleKind, apply_rule, non_delay, parse_rule

T1 = from_chains([[(0, 3), (1, 2)], [(1, 2), (0, 4)]])


def t1_state():
    return reset(T1, DETERMINISTIC, sample_scenario(T1, 0))


def test_parse_rule():
    assert parse_rule("spt") is RuleKind.SPT
    with pytest.raises(ValueError):
        parse_rule("EDD")


@pytest.mark.parametrize("rule,expected", [
    (RuleKind.SPT, 2), (RuleKind.LPT, 0), (RuleKind.FIFO, 0),
    (RuleKind.MWKR, 2), (RuleKind.LWKR, 0), (RuleKind.MOR, 0), (RuleKind.LOR, 0),
])
def test_first_choice_on_t1(rule, expected):
    # job 0 has 5 units of work left, job 1 has 6; equal op counts tie to job 0
    s = t1_state()
    assert apply_rule(rule, s, s.eligible()) == expected


def test_non_delay_filters_late_starts():
    s = t1_state()
    s.step(2)   # job 1 op on m1 ends at 2; job 1 next is on m0
    s.step(0)   # m0 busy until 3
    el = s.eligible()
    assert sorted(el) == [1, 3]
    # op 1 (m1) can start at 3, op 3 (m0) can start at 3 as well
    assert sorted(non_delay(s, el)) == [1, 3]


def test_spt_ignores_ops_that_start_later():
    inst = from_chains([[(0, 9)], [(1, 1), (0, 1)], [(1, 5)]])
    s = reset(inst, DETERMINISTIC, sample_scenario(inst, 0))
    s.step(1)   # job 1 on m1 [0, 1): its m0 op could start at 1 but job 0 starts at 0
    el = s.eligible()
    nd = non_delay(s, el)
    assert set(nd) == {0}
    assert apply_rule(RuleKind.SPT, s, el) == 0


def test_random_needs_rng_and_is_uniform():
    s = t1_state()
    with pytest.raises(ValueError):
        apply_rule(RuleKind.RANDOM, s, s.eligible())
    rng = np.random.default_rng(0)
    picks = [apply_rule(RuleKind.RANDOM, s, s.eligible(), rng) for _ in range(4000)]
    assert abs(picks.count(0) - 2000) < 150


def test_empty_eligible_rejected():
    with pytest.raises(ValueError):
        apply_rule(RuleKind.SPT, t1_state(), [])


@pytest.mark.parametrize("rule", PDRS)
def test_rules_complete_stochastic_episodes(rule):
    inst = generate_instance(4, 6, 2, 11)
    a = reset(inst, STOCHASTIC, rng=3)
    b = reset(inst, STOCHASTIC, rng=3)
    for s in (a, b):
        while not s.terminal:
            el = s.eligible()
            u = apply_rule(rule, s, el)
            assert u in el
            s.step(u)
    assert a.makespan == b.makespan > 0
    assert a.makespan == engine.lower_bound(a)
