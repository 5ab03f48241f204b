"""Uniform policy interface over dispatching rules and trained models.

Policies act on a list of states at once so that model policies can batch
their forward pass across parallel episodes.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import engine
from .engine import SchedState
from .instance import Instance
from .models import GraphBatch, ModelBundle
from .rules import RuleKind, apply_rule, parse_rule
from .seeding import split_seed


class Policy:
    name = "policy"

    def start(self, instance: Instance, run_seeds: Sequence[int]) -> None:
        """Called once per instance before a batch of episodes."""

    def act_batch(self, states: Sequence[SchedState], run_index: Sequence[int]) -> list[int]:
        raise NotImplementedError


class RulePolicy(Policy):
    def __init__(self, rule: RuleKind | str):
        self.rule = parse_rule(rule) if isinstance(rule, str) else rule
        self.name = self.rule.value
        self._rngs: dict[int, np.random.Generator] = {}

    def start(self, instance, run_seeds):
        if self.rule is RuleKind.RANDOM:
            self._rngs = {i: np.random.default_rng(split_seed(s, "random-policy"))
                          for i, s in enumerate(run_seeds)}

    def act_batch(self, states, run_index):
        return [apply_rule(self.rule, s, s.eligible(), self._rngs.get(i)) for s, i in zip(states, run_index)]


def upm_seed(instance: Instance) -> int:
    return split_seed(instance.seed, "upm-eval")


class ModelPolicy(Policy):
    """Greedy (argmax) or sampling decoding of a trained actor."""

    def __init__(self, bundle: ModelBundle, use_upm: bool = True, greedy: bool = True, name: str = "model"):
        self.bundle = bundle
        self.use_upm = use_upm
        self.greedy = greedy
        self.name = name
        self._z: Optional[ad.Tensor] = None
        self._rngs: dict[int, np.random.Generator] = {}

    def start(self, instance, run_seeds):
        if self.use_upm:
            with ad.no_grad():
                self._z = self.bundle.upm(instance, upm_seed(instance)).z
        else:
            self._z = None
        if not self.greedy:
            self._rngs = {i: np.random.default_rng(split_seed(s, "model-policy"))
                          for i, s in enumerate(run_seeds)}

    def act_batch(self, states, run_index):
        views = [engine.disjunctive_view(s) for s in states]
        with ad.no_grad():
            lp = self.bundle.actor_log_probs(GraphBatch.from_views(views), self._z).data
        out = []
        for b, (v, i) in enumerate(zip(views, run_index)):
            mask = v.eligible_mask()
            scores = lp[b, : v.n_nodes]
            if self.greedy:
                k = int(np.argmax(np.where(mask, scores, -np.inf)))
            else:
                k = sample_index(np.where(mask, np.exp(scores), 0.0), self._rngs[i])
            out.append(v.nodes[k])
        return out


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw; one uniform per call."""
    c = np.cumsum(probs)
    k = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    k = min(k, len(probs) - 1)
    while probs[k] == 0.0:
        k -= 1
    return k


def run_lockstep(policy: Policy, instance: Instance, seeds: Sequence[int]) -> list[SchedState]:
    """One stochastic episode per seed, stepped together; returns the final states."""
    policy.start(instance, seeds)
    states = [engine.reset(instance, engine.STOCHASTIC, rng=s) for s in seeds]
    live = [i for i, s in enumerate(states) if not s.terminal]
    while live:
        actions = policy.act_batch([states[i] for i in live], live)
        for i, a in zip(live, actions):
            states[i].step(a)
        live = [i for i in live if not states[i].terminal]
    return states
