"""Asymmetric actor-critic training with hindsight reconstruction.

One iteration: sample an instance, compute its risk vector, roll out K
stochastic episodes in lockstep, replay each in its realized deterministic
scenario to get rewards (and the critic's states), then take one optimizer
step for the actor and one for the critic.

Modes:
  UP-AAC       risk vector on, critic on hindsight (deterministic) states
  no-AAC       risk vector on, critic on stochastic states
  no-UPM       risk vector zero, critic on hindsight states
  standard-AC  risk vector zero, critic on stochastic states
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import engine
from .autodiff import Tensor
from .engine import DisjunctiveView, SchedState
from .hindsight import StochStep, StochTrajectory, reconstruct
from .instance import Instance, generate_instance
from .models import GraphBatch, ModelBundle, ModelConfig
from .policies import ModelPolicy, sample_index
from .seeding import child_rng, split_seed

MODES = ("UP-AAC", "standard-AC", "no-AAC", "no-UPM")


def uses_upm(mode: str) -> bool:
    return mode in ("UP-AAC", "no-AAC")


def critic_on_hindsight(mode: str) -> bool:
    return mode in ("UP-AAC", "no-UPM")


@dataclass(frozen=True)
class TrainConfig:
    K: int = 8
    gamma: float = 1.0
    lr: float = 3e-4
    entropy_coef: float = 0.01
    iterations: int = 300
    eval_every: int = 25
    mode: str = "UP-AAC"
    seed: int = 0
    n_jobs: int = 5
    n_machines: int = 5
    n_branch: int = 1
    eval_instances: int = 10
    eval_runs: int = 10
    grad_clip: float = 0.5
    normalize_advantage: bool = True
    critic_lr: float = 0.0      # 0 means: same as lr
    gae_lambda: float = 0.95    # 0 gives the one-step advantage exactly
    critic_warmup: int = 0      # leading iterations that update only the critic
    hidden: int = 72
    layers: int = 3
    n_scenarios: int = 100

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.iterations < 0 or self.eval_every < 1:
            raise ValueError("iterations must be >= 0 and eval_every >= 1")
        if self.lr <= 0 or self.critic_lr < 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")

    def model_config(self) -> ModelConfig:
        return ModelConfig(hidden=self.hidden, layers=self.layers, key_dim=self.hidden,
                           n_scenarios=self.n_scenarios)


@dataclass
class UpdateBatch:
    """All transitions of one iteration, flattened in (episode, step) order."""
    sto_views: list[DisjunctiveView]
    det_views: list[DisjunctiveView]
    actions: np.ndarray        # node index of the action within its stochastic view
    log_probs: np.ndarray      # behaviour log-probabilities at sampling time
    rewards: np.ndarray        # integer C_LB differences
    terminal: np.ndarray       # True on each episode's last step
    episode: np.ndarray
    makespans: list[int] = field(default_factory=list)
    advantages: Optional[np.ndarray] = None
    action_ops: list[list[int]] = field(default_factory=list)


def advantage(rewards: np.ndarray, values: np.ndarray, terminal: np.ndarray, gamma: float,
              lam: float = 0.0) -> np.ndarray:
    """One-step TD advantage ``r_t + gamma * V(s_{t+1}) - V(s_t)`` with V(terminal) = 0.

    Arrays are flat over consecutive steps; ``terminal[t]`` marks an episode's
    last transition, whose successor value is taken as zero.  ``lam > 0``
    accumulates later TD errors with weight ``(gamma * lam)^k`` (lam = 1 gives
    the Monte-Carlo return minus V).
    """
    values = np.asarray(values, dtype=np.float64)
    term = np.asarray(terminal, dtype=bool)
    nxt = np.zeros_like(values)
    nxt[:-1] = values[1:]
    nxt[term] = 0.0
    delta = np.asarray(rewards, dtype=np.float64) + gamma * nxt - values
    if lam == 0.0:
        return delta
    out = np.empty_like(delta)
    acc = 0.0
    for t in range(len(delta) - 1, -1, -1):
        if term[t]:
            acc = 0.0
        acc = delta[t] + gamma * lam * acc
        out[t] = acc
    return out


def risk_vector(bundle: ModelBundle, instance: Instance, mode: str, rng) -> Tensor:
    if not uses_upm(mode):
        return Tensor(np.zeros(bundle.cfg.z_dim))
    return bundle.upm(instance, rng).z


def collect(bundle: ModelBundle, instance: Instance, z: Tensor, env_seeds: Sequence[int],
            rng_act: np.random.Generator) -> tuple[list[StochTrajectory], list[list[int]]]:
    """Lockstep sampling rollouts; returns trajectories and per-step action node indices."""
    states: list[SchedState] = [engine.reset(instance, engine.STOCHASTIC, rng=s) for s in env_seeds]
    trajs = [StochTrajectory(instance) for _ in states]
    idx: list[list[int]] = [[] for _ in states]
    zc = Tensor(z.data)
    live = [i for i, s in enumerate(states) if not s.terminal]
    while live:
        views = [engine.disjunctive_view(states[i]) for i in live]
        with ad.no_grad():
            lp = bundle.actor_log_probs(GraphBatch.from_views(views), zc).data
        for b, (i, v) in enumerate(zip(live, views)):
            mask = v.eligible_mask()
            row = lp[b, : v.n_nodes]
            k = sample_index(np.where(mask, np.exp(row), 0.0), rng_act)
            out = states[i].step(v.nodes[k])
            trajs[i].steps.append(StochStep(v, v.nodes[k], float(row[k]), out.branch_resolved))
            idx[i].append(k)
        live = [i for i in live if not states[i].terminal]
    for t, s in zip(trajs, states):
        t.final_makespan = s.makespan
        t.terminal = True
    return trajs, idx


def build_batch(trajs: Sequence[StochTrajectory], idx: Sequence[Sequence[int]], record_det: bool) -> UpdateBatch:
    sto, det, acts, lps, rews, term, ep = [], [], [], [], [], [], []
    spans = []
    for e, (tr, ks) in enumerate(zip(trajs, idx)):
        h = reconstruct(tr, record_views=record_det)
        n = len(tr.steps)
        for t, (ss, ds, k) in enumerate(zip(tr.steps, h.steps, ks)):
            sto.append(ss.view)
            det.append(ds.view)
            acts.append(k)
            lps.append(ss.log_prob)
            rews.append(ds.reward)
            term.append(t == n - 1)
            ep.append(e)
        spans.append(h.final_makespan)
    return UpdateBatch(sto, det, np.array(acts, dtype=np.int64), np.array(lps), np.array(rews, dtype=np.int64),
                       np.array(term, dtype=bool), np.array(ep, dtype=np.int64), spans,
                       action_ops=[tr.actions for tr in trajs])


class Trainer:
    """Owns the model, the random streams and the instance sampler."""

    def __init__(self, cfg: TrainConfig, bundle: Optional[ModelBundle] = None):
        self.cfg = cfg
        self.bundle = bundle or ModelBundle(cfg.model_config(), split_seed(cfg.seed, "model"))
        self.rng_instances = child_rng(cfg.seed, "instances")
        self.rng_env = child_rng(cfg.seed, "env")
        self.rng_act = child_rng(cfg.seed, "actions")
        self.rng_upm = child_rng(cfg.seed, "upm")
        self.iteration = 0
        self.reward_scale = 1.0 / engine.feature_scale_for(cfg.n_machines)

    def sample_instance(self) -> Instance:
        c = self.cfg
        return generate_instance(c.n_jobs, c.n_machines, c.n_branch, int(self.rng_instances.integers(2**62)))

    def step(self, instance: Optional[Instance] = None) -> tuple[dict, UpdateBatch]:
        """One training iteration; returns its metrics and the consumed batch."""
        c = self.cfg
        bundle = self.bundle
        instance = instance if instance is not None else self.sample_instance()
        bundle.actor.zero_grad()
        bundle.critic.zero_grad()

        z = risk_vector(bundle, instance, c.mode, self.rng_upm)
        env_seeds = [int(s) for s in self.rng_env.integers(2**62, size=c.K)]
        trajs, idx = collect(bundle, instance, z, env_seeds, self.rng_act)
        hind = critic_on_hindsight(c.mode)
        batch = build_batch(trajs, idx, record_det=hind)

        # critic
        cviews = batch.det_views if hind else batch.sto_views
        values = bundle.critic_values(GraphBatch.from_views(cviews))
        r = batch.rewards * self.reward_scale
        adv = advantage(r, values.data, batch.terminal, c.gamma, c.gae_lambda)
        batch.advantages = adv
        target = adv + values.data  # held fixed
        td = ad.add(values, Tensor(-target))
        critic_loss = ad.tmean(ad.square(td))

        # actor
        a = adv
        if c.normalize_advantage and len(a) > 1:
            a = (a - a.mean()) / (a.std() + 1e-8)
        lp = bundle.actor_log_probs(GraphBatch.from_views(batch.sto_views), z)
        chosen = ad.reshape(ad.take(lp, batch.actions[:, None], axis=1), (len(batch.actions),))
        pg = ad.neg(ad.tmean(ad.mul(chosen, Tensor(a))))
        ent = ad.neg(ad.tsum(ad.mul(ad.exp(lp), lp), axis=1))
        entropy = ad.tmean(ent)
        actor_loss = ad.add(pg, ad.mul(entropy, -c.entropy_coef))

        ad.backward(ad.add(actor_loss, critic_loss))
        warm = self.iteration < c.critic_warmup
        gn_a = 0.0 if warm else ad.optimizer_step(bundle.actor, c.lr, c.grad_clip)
        gn_c = ad.optimizer_step(bundle.critic, c.critic_lr or c.lr, c.grad_clip)
        self.iteration += 1
        metrics = {
            "iteration": self.iteration,
            "actor_loss": float(actor_loss.item()),
            "critic_loss": float(critic_loss.item()),
            "entropy": float(entropy.item()),
            "adv_variance": float(np.var(adv)),
            "mean_makespan": float(np.mean(batch.makespans)),
            "grad_norm_actor": gn_a,
            "grad_norm_critic": gn_c,
        }
        for v in metrics.values():
            if not np.isfinite(v):
                raise FloatingPointError(f"non-finite training metric: {metrics}")
        return metrics, batch


def held_out_instances(cfg: TrainConfig) -> list[Instance]:
    base = split_seed(cfg.seed, "held-out")
    return [generate_instance(cfg.n_jobs, cfg.n_machines, cfg.n_branch, base + i)
            for i in range(cfg.eval_instances)]


def greedy_eval(bundle: ModelBundle, instances: Sequence[Instance], runs: int, mode: str, seed: int = 0):
    """Mean and CVaR(0.2) of greedy makespans (both averaged over instances)."""
    from .evaluation import evaluate_policy
    pol = ModelPolicy(bundle, use_upm=uses_upm(mode), greedy=True, name=mode)
    rep = evaluate_policy(pol, instances, runs=runs, seed=seed, reference="none")
    return float(np.mean([r.avg for r in rep.rows])), float(np.mean([r.cvar for r in rep.rows]))


CURVE_FIELDS = ("iteration", "eval_mean", "eval_cvar", "adv_variance")


def train(cfg: TrainConfig, out_dir, log: Optional[Callable[[str], None]] = None,
          bundle: Optional[ModelBundle] = None) -> dict:
    """Run ``cfg.iterations`` iterations, evaluating every ``eval_every``.

    Writes ``curve.csv`` (one row per evaluation), ``best.ckpt`` (lowest eval
    mean) and ``last.ckpt`` into ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tr = Trainer(cfg, bundle)
    held = held_out_instances(cfg)
    rows = []
    best = float("inf")
    meta = {"train_config": asdict(cfg)}
    recent_var: list[float] = []
    t0 = time.perf_counter()

    def evaluate(it):
        nonlocal best
        m, cv = greedy_eval(tr.bundle, held, cfg.eval_runs, cfg.mode, seed=split_seed(cfg.seed, "eval"))
        av = float(np.mean(recent_var)) if recent_var else 0.0
        rows.append((it, m, cv, av))
        recent_var.clear()
        if m < best:
            best = m
            tr.bundle.save(out / "best.ckpt", {**meta, "iteration": it, "eval_mean": m})
        if log:
            log(f"iter {it:5d}  eval_mean {m:9.3f}  eval_cvar {cv:9.3f}  adv_var {av:.5f}  "
                f"{time.perf_counter() - t0:7.1f}s")

    evaluate(0)
    for it in range(1, cfg.iterations + 1):
        metrics, _ = tr.step()
        recent_var.append(metrics["adv_variance"])
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            evaluate(it)
    tr.bundle.save(out / "last.ckpt", {**meta, "iteration": cfg.iterations})
    ad.atomic_write(out / "curve.csv", curve_csv(rows).encode())
    return {"best_eval_mean": best, "curve": rows, "checkpoint": str(out / "best.ckpt")}


def curve_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_FIELDS)
    for it, m, cv, av in rows:
        w.writerow([it, f"{m:.4f}", f"{cv:.4f}", f"{av:.8f}"])
    return buf.getvalue()


def advantage_variance(bundle: ModelBundle, instances: Sequence[Instance], K: int = 8, seed: int = 0,
                       gamma: float = 1.0) -> dict:
    """Advantage variance with the critic on hindsight states vs on stochastic states.

    Both estimates use the same sampled episodes and the same critic, so the
    only difference is which state stream the critic reads.
    """
    rng_env = child_rng(seed, "var-env")
    rng_act = child_rng(seed, "var-actions")
    rng_upm = child_rng(seed, "var-upm")
    scale = 1.0
    det_adv, sto_adv = [], []
    for inst in instances:
        scale = 1.0 / engine.feature_scale_for(inst.n_machines)
        with ad.no_grad():
            z = bundle.upm(inst, rng_upm).z
            seeds = [int(s) for s in rng_env.integers(2**62, size=K)]
            trajs, idx = collect(bundle, inst, z, seeds, rng_act)
            b = build_batch(trajs, idx, record_det=True)
            r = b.rewards * scale
            vd = bundle.critic_values(GraphBatch.from_views(b.det_views)).data
            vs = bundle.critic_values(GraphBatch.from_views(b.sto_views)).data
        det_adv.append(advantage(r, vd, b.terminal, gamma))
        sto_adv.append(advantage(r, vs, b.terminal, gamma))
    d = np.concatenate(det_adv)
    s = np.concatenate(sto_adv)
    return {"hindsight_critic_variance": float(np.var(d)), "stochastic_critic_variance": float(np.var(s)),
            "transitions": int(d.size), "instances": len(instances)}
