"""Graph encoder, actor and critic heads, and the uncertainty-perception module.

Graphs of different sizes are batched by zero-padding to the largest node
count; padded nodes have no edges and are masked out of pooling and of the
action distribution.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import engine
from .autodiff import ParamStore, Tensor
from .engine import DETERMINISTIC, DisjunctiveView
from .instance import Instance, Scenario, sample_scenario


class EmptyGraphError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = engine.N_FEATURES
    hidden: int = 72
    layers: int = 3
    n_scenarios: int = 100
    n_inducing: int = 4
    key_dim: int = 72
    z_dim: int = 32
    omega_init: float = 0.1
    slope: float = 0.01

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("encoder needs layers >= 1 and hidden >= 1")
        if self.n_scenarios < 1 or self.n_inducing < 1:
            raise ValueError("UPM needs n_scenarios >= 1 and n_inducing >= 1")


@dataclass
class GraphBatch:
    x: np.ndarray          # (B, N, F)
    adj: np.ndarray        # (B, N, N), row-normalized
    node_mask: np.ndarray  # (B, N) bool
    elig_mask: np.ndarray  # (B, N) bool

    @classmethod
    def from_views(cls, views: Sequence[DisjunctiveView]) -> "GraphBatch":
        if not views or any(v.n_nodes == 0 for v in views):
            raise EmptyGraphError("cannot encode an empty graph")
        B = len(views)
        N = max(v.n_nodes for v in views)
        F = views[0].features.shape[1]
        x = np.zeros((B, N, F))
        adj = np.zeros((B, N, N))
        node_mask = np.zeros((B, N), dtype=bool)
        elig = np.zeros((B, N), dtype=bool)
        for b, v in enumerate(views):
            n = v.n_nodes
            x[b, :n] = v.features
            adj[b, :n, :n] = v.adjacency()
            node_mask[b, :n] = True
            elig[b, :n] = v.eligible_mask()
        return cls(x, ad.normalize_adjacency(adj), node_mask, elig)

    def __len__(self):
        return self.x.shape[0]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def _init_mlp(store: ParamStore, prefix: str, dims: Sequence[int], rng, zero_last: bool):
    for i in range(len(dims) - 1):
        last = i == len(dims) - 2
        w = np.zeros((dims[i], dims[i + 1])) if (last and zero_last) else _glorot(rng, dims[i], dims[i + 1])
        store.add(f"{prefix}.W{i}", w)
        store.add(f"{prefix}.b{i}", np.zeros(dims[i + 1]))
        if not last:
            store.add(f"{prefix}.g{i}", np.ones(dims[i + 1]))
            store.add(f"{prefix}.s{i}", np.zeros(dims[i + 1]))


def mlp(x: Tensor, store: ParamStore, prefix: str, n_layers: int, slope: float) -> Tensor:
    """affine -> layer norm -> leaky ReLU on every layer but the last."""
    for i in range(n_layers):
        x = ad.affine(x, store[f"{prefix}.W{i}"], store[f"{prefix}.b{i}"])
        if i < n_layers - 1:
            x = ad.layer_norm(x, store[f"{prefix}.g{i}"], store[f"{prefix}.s{i}"])
            x = ad.leaky_relu(x, slope)
    return x


def init_encoder(store: ParamStore, prefix: str, cfg: ModelConfig, rng) -> None:
    d = cfg.feature_dim
    for l in range(cfg.layers):
        store.add(f"{prefix}.W{l}", _glorot(rng, 2 * d, cfg.hidden))
        store.add(f"{prefix}.b{l}", np.zeros(cfg.hidden))
        store.add(f"{prefix}.g{l}", np.ones(cfg.hidden))
        store.add(f"{prefix}.s{l}", np.zeros(cfg.hidden))
        d = cfg.hidden


def encode_batch(batch: GraphBatch, store: ParamStore, prefix: str, cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Node embeddings (B, N, H) and mean-pooled graph embeddings (B, H)."""
    h = Tensor(batch.x)
    for l in range(cfg.layers):
        agg = ad.mean_neighbors(h, batch.adj, normalized=True)
        h = ad.affine(ad.concat([h, agg], axis=-1), store[f"{prefix}.W{l}"], store[f"{prefix}.b{l}"])
        h = ad.leaky_relu(ad.layer_norm(h, store[f"{prefix}.g{l}"], store[f"{prefix}.s{l}"]), cfg.slope)
    return h, ad.masked_mean(h, batch.node_mask, axis=-2)


def risk_prior(scenario: Scenario) -> int:
    """max(longest job route, busiest machine load) of a deterministic scenario."""
    job_len = max((sum(t) for t in scenario.times), default=0)
    load = [0] * scenario.instance.n_machines
    for ms, ts in zip(scenario.machines, scenario.times):
        for m, p in zip(ms, ts):
            load[m] += p
    return max(job_len, max(load, default=0))


def zscore(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    sd = v.std()
    return np.zeros_like(v) if sd == 0 else (v - v.mean()) / sd


def risk_attention(queries: Tensor, keys: Tensor, priors: np.ndarray, Wq: Tensor, Wk: Tensor,
                   omega: Tensor) -> tuple[Tensor, Tensor]:
    """Scores ``(Wq q_j)·(Wk h_k)/sqrt(d_k) + omega * p_k`` and their softmax over k.

    ``queries`` is (M, D), ``keys`` is (K, D); returns (scores, weights), both (M, K).
    """
    q = ad.matmul(queries, Wq)
    k = ad.matmul(keys, Wk)
    dk = Wq.shape[-1]
    scores = ad.mul(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(dk))
    scores = ad.add(scores, ad.mul(omega, Tensor(np.asarray(priors, dtype=np.float64)[None, :])))
    weights = ad.masked_softmax(scores, np.ones(scores.shape, dtype=bool))
    return scores, weights


@dataclass
class RiskVector:
    z: Tensor                # (z_dim,)
    priors: np.ndarray       # raw p_k
    attention: np.ndarray    # (M, n_s)


class ModelBundle:
    """Actor side (encoder, UPM, actor head) and critic side (own encoder, value head)."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        H, Z = cfg.hidden, cfg.z_dim
        self.actor = ParamStore()
        init_encoder(self.actor, "enc", cfg, rng)
        _init_mlp(self.actor, "actor", [2 * H + Z, H, H, 1], rng, zero_last=True)
        a = self.actor
        a.add("upm.inducing", rng.normal(0.0, 1.0, size=(cfg.n_inducing, H)))
        a.add("upm.Wq", _glorot(rng, H, cfg.key_dim))
        a.add("upm.Wk", _glorot(rng, H, cfg.key_dim))
        a.add("upm.Wv", _glorot(rng, H, H))
        a.add("upm.omega", np.full((1, 1), cfg.omega_init))
        a.add("upm.Wz", _glorot(rng, H, Z))
        a.add("upm.bz", np.zeros(Z))
        self.critic = ParamStore()
        init_encoder(self.critic, "cenc", cfg, rng)
        _init_mlp(self.critic, "critic", [H, H, H, 1], rng, zero_last=True)

    # --- forward passes --------------------------------------------------------

    def encode(self, batch: GraphBatch) -> tuple[Tensor, Tensor]:
        return encode_batch(batch, self.actor, "enc", self.cfg)

    def actor_log_probs(self, batch: GraphBatch, z: Optional[Tensor] = None) -> Tensor:
        """Log-probabilities over nodes (B, N); non-eligible entries are 0."""
        nodes, graph = self.encode(batch)
        B, N, H = nodes.shape
        if z is None:
            z = Tensor(np.zeros(self.cfg.z_dim))
        inp = ad.concat([
            nodes,
            ad.broadcast_to(ad.reshape(graph, (B, 1, H)), (B, N, H)),
            ad.broadcast_to(ad.reshape(z, (1, 1, -1)), (B, N, z.shape[-1])),
        ], axis=-1)
        scores = ad.reshape(mlp(inp, self.actor, "actor", 3, self.cfg.slope), (B, N))
        return ad.masked_log_softmax(scores, batch.elig_mask)

    def critic_values(self, batch: GraphBatch) -> Tensor:
        _, graph = encode_batch(batch, self.critic, "cenc", self.cfg)
        return ad.reshape(mlp(graph, self.critic, "critic", 3, self.cfg.slope), (len(batch),))

    def scenario_set(self, instance: Instance, rng: np.random.Generator) -> list[Scenario]:
        return [sample_scenario(instance, rng) for _ in range(self.cfg.n_scenarios)]

    def upm(self, instance: Instance, rng: np.random.Generator | int,
            scenarios: Optional[Sequence[Scenario]] = None) -> RiskVector:
        """Risk vector of an instance from ``n_scenarios`` sampled realizations.

        An instance with a single scenario carries no routing risk; its risk
        vector is zero, so the actor sees the same input as without the module.
        """
        if instance.scenario_count() == 1 and scenarios is None:
            return RiskVector(Tensor(np.zeros(self.cfg.z_dim)), np.zeros(0), np.zeros((self.cfg.n_inducing, 0)))
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        if scenarios is None:
            scenarios = self.scenario_set(instance, rng)
        views = [engine.disjunctive_view(engine.reset(instance, DETERMINISTIC, sc)) for sc in scenarios]
        _, h = self.encode(GraphBatch.from_views(views))
        raw = np.array([risk_prior(sc) for sc in scenarios], dtype=np.float64)
        return self.upm_from_encodings(h, raw)

    def upm_from_encodings(self, h: Tensor, raw_priors: np.ndarray) -> RiskVector:
        a = self.actor
        _, alpha = risk_attention(a["upm.inducing"], h, zscore(raw_priors), a["upm.Wq"], a["upm.Wk"], a["upm.omega"])
        values = ad.matmul(h, a["upm.Wv"])
        pooled = ad.tmean(ad.matmul(alpha, values), axis=0)
        z = ad.affine(pooled, a["upm.Wz"], a["upm.bz"])
        return RiskVector(z, raw_priors, alpha.data.copy())

    # --- persistence ---------------------------------------------------------------

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"actor/{k}": v for k, v in self.actor.arrays().items()}
        out.update({f"critic/{k}": v for k, v in self.critic.arrays().items()})
        return out

    def save(self, path, extra_meta: Optional[dict] = None) -> None:
        meta = {"model_config": asdict(self.cfg), "seed": self.seed}
        meta.update(extra_meta or {})
        ad.save_checkpoint(path, self.arrays(), meta)

    @classmethod
    def load(cls, path) -> tuple["ModelBundle", dict]:
        arrays, meta = ad.load_checkpoint(path)
        bundle = cls(ModelConfig(**meta["model_config"]), meta.get("seed", 0))
        bundle.actor.load_arrays(arrays, "actor/")
        bundle.critic.load_arrays(arrays, "critic/")
        return bundle, meta


def encode(view: DisjunctiveView, bundle: ModelBundle) -> tuple[np.ndarray, np.ndarray]:
    """Node and graph embeddings of a single view (values only)."""
    with ad.no_grad():
        nodes, graph = bundle.encode(GraphBatch.from_views([view]))
    return nodes.data[0, : view.n_nodes], graph.data[0]


def actor_distribution(view: DisjunctiveView, bundle: ModelBundle, z: Optional[np.ndarray] = None) -> np.ndarray:
    """Action probabilities over the view's nodes (0 for non-eligible)."""
    with ad.no_grad():
        zt = None if z is None else Tensor(z)
        lp = bundle.actor_log_probs(GraphBatch.from_views([view]), zt)
    mask = view.eligible_mask()
    return np.where(mask, np.exp(lp.data[0, : view.n_nodes]), 0.0)


def critic_value(view: DisjunctiveView, bundle: ModelBundle) -> float:
    with ad.no_grad():
        return float(bundle.critic_values(GraphBatch.from_views([view])).data[0])
