"""The relational-graph recommender network and its ablation variants.

Samples are processed in batches: the relational subgraphs of a batch are laid
out as one disjoint graph (``GraphBatch``) so each extractor layer is a handful
of array primitives over all edges at once.  Layer ``l`` node states have
width ``d * 2**l``; every layer concatenates a node's state with the
attention-weighted mean of its neighbours' states.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .autodiff import ParameterStore, Tape
from .data import DenseStats, Sample, Schema, standardize
from .errors import ContractError, ShapeError, UnknownIdError, ValidationError
from .kg import ProfileTable
from .subgraph import LayeredView, RelationalSubgraph

AGGREGATORS = ("relation", "concat", "sum", "self_attention", "nonlinear")
MODELS = ("atbrg", "behavior_mlp")


@dataclass(frozen=True)
class ModelConfig:
    """Every hyperparameter and ablation switch, plus the training knobs.

    ``max_depth=None`` derives the KG path depth from the layer count as
    ``(layers - 1) // 2``.
    """

    d: int = 4
    layers: int = 5
    mlp_dims: tuple[int, ...] = (512, 256, 128)
    mlp_activation: str = "tanh"
    max_behaviors: int = 10
    aggregator: str = "relation"
    use_ram: bool = True
    use_ral: bool = True
    model: str = "atbrg"
    concat_k: int = 4
    lr: float = 0.001
    eps: float = 1e-8
    init_scale: float = 0.05
    seed: int = 0
    epochs: int = 5
    batch_size: int = 64
    max_depth: int | None = None
    fanout_cap: int = 64
    dedupe_target: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mlp_dims", tuple(int(v) for v in self.mlp_dims))
        self.validate()

    def validate(self):
        if self.d < 1 or self.layers < 1:
            raise ValidationError("d and layers must be >= 1")
        if not self.mlp_dims or min(self.mlp_dims) < 1:
            raise ValidationError("mlp_dims must be a non-empty list of positive widths")
        if self.aggregator not in AGGREGATORS:
            raise ValidationError(f"aggregator must be one of {AGGREGATORS}")
        if self.model not in MODELS:
            raise ValidationError(f"model must be one of {MODELS}")
        if not self.use_ram and self.aggregator != "relation":
            raise ValidationError("use_ram=false only applies to the relation aggregator")
        if self.mlp_activation not in ("tanh", "sigmoid"):
            raise ValidationError("mlp_activation must be tanh or sigmoid")
        if self.batch_size < 1 or self.epochs < 0 or self.fanout_cap < 1 or self.concat_k < 1:
            raise ValidationError("batch_size, fanout_cap, concat_k must be >= 1 and epochs >= 0")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValidationError("max_depth must be >= 0")

    @property
    def depth(self) -> int:
        return (self.layers - 1) // 2 if self.max_depth is None else self.max_depth

    @property
    def repr_dim(self) -> int:
        return self.d * 2 ** self.layers if self.model == "atbrg" else self.d

    @classmethod
    def desk_scale(cls, **overrides) -> "ModelConfig":
        return cls(**{"mlp_dims": (64, 32, 16), **overrides})

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def to_json(self) -> dict:
        out = asdict(self)
        out["mlp_dims"] = list(self.mlp_dims)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


# parameters -----------------------------------------------------------------------

def init_params(cfg: ModelConfig, schema: Schema, n_entities: int, n_relations: int,
                seed: int | None = None) -> ParameterStore:
    """Uniform(-init_scale, init_scale) weights, zero biases, seeded."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    s, d = cfg.init_scale, cfg.d
    p = ParameterStore()
    for side, spec in (("user", schema.user), ("item", schema.item)):
        for j, vocab in enumerate(spec.sparse):
            p.uniform(f"{side}_emb/{j}", (vocab, d), rng, s)
    p.uniform("entity_emb", (n_entities, d), rng, s)
    if cfg.model == "atbrg":
        p.uniform("relation_emb", (n_relations, d), rng, s)
        for l in range(cfg.layers):
            width = d * 2 ** l
            pre = f"layer{l}/"
            if cfg.aggregator == "relation":
                p.uniform(pre + "f_w", (2 * width, d), rng, s)
                p.zeros(pre + "f_b", (d,))
                if cfg.use_ram:
                    p.uniform(pre + "w_alpha", (d, d), rng, s)
                else:
                    p.uniform(pre + "score_w", (d, 1), rng, s)
            elif cfg.aggregator == "self_attention":
                p.uniform(pre + "sa_w", (width, width), rng, s)
            elif cfg.aggregator == "nonlinear":
                p.uniform(pre + "nl_w", (width, width), rng, s)
                p.zeros(pre + "nl_b", (width,))
            elif cfg.aggregator == "concat":
                p.uniform(pre + "cat_w", (cfg.concat_k * width, width), rng, s)
                p.zeros(pre + "cat_b", (width,))
        if cfg.use_ral:
            p.uniform("w_beta", (cfg.repr_dim, cfg.repr_dim), rng, s)
    width = schema.user.width(d) + schema.item.width(d) + 2 * cfg.repr_dim
    for k, h in enumerate(cfg.mlp_dims):
        p.uniform(f"mlp{k}/w", (width, h), rng, s)
        p.zeros(f"mlp{k}/b", (h,))
        width = h
    p.uniform("out/w", (width, 1), rng, s)
    p.zeros("out/b", (1,))
    return p


# batching ---------------------------------------------------------------------------

@dataclass
class GraphBatch:
    """Disjoint union of per-sample relational subgraphs.

    ``edge_src``/``edge_rel``/``edge_dst`` list directed edges ``h -r-> t``;
    node ``h`` aggregates over the edges whose ``edge_src`` is ``h``.
    """

    node_entity: np.ndarray
    edge_src: np.ndarray
    edge_rel: np.ndarray
    edge_dst: np.ndarray
    target_node: np.ndarray          # (B,)
    behavior_node: np.ndarray        # (M,)
    behavior_sample: np.ndarray      # (M,) owning sample of each behavior row

    @property
    def n_nodes(self) -> int:
        return len(self.node_entity)

    @property
    def n_samples(self) -> int:
        return len(self.target_node)

    def edge_slots(self) -> np.ndarray:
        """Position of each edge among its source's edges, in stored order."""
        order = np.argsort(self.edge_src, kind="stable")
        src = self.edge_src[order]
        first = np.searchsorted(src, src, side="left")
        slots = np.empty(len(order), dtype=np.int64)
        slots[order] = np.arange(len(order)) - first
        return slots


def graph_batch(subgraphs: Sequence[RelationalSubgraph], max_behaviors: int | None = None) -> GraphBatch:
    node_entity, src, rel, dst, tgt, bnode, bsample = [], [], [], [], [], [], []
    offset = 0
    for s, sub in enumerate(subgraphs):
        nodes = sub.nodes
        local = {e: offset + k for k, e in enumerate(nodes)}
        node_entity.extend(nodes)
        for h, r, t in sub.edges:
            src.append(local[h])
            rel.append(r)
            dst.append(local[t])
        anchor = dict(sub.anchors)
        tgt.append(local[anchor[sub.target]])
        behs = sub.behaviors if max_behaviors is None else sub.behaviors[:max_behaviors]
        for b in behs:
            bnode.append(local[anchor[b]])
            bsample.append(s)
        offset += len(nodes)
    as_int = lambda v: np.asarray(v, dtype=np.int64)  # noqa: E731
    return GraphBatch(as_int(node_entity), as_int(src), as_int(rel), as_int(dst),
                      as_int(tgt), as_int(bnode), as_int(bsample))


def view_batch(view: LayeredView, target: int, behaviors: Sequence[int],
               anchors: dict[int, int]) -> GraphBatch:
    """Single-sample batch straight from a :class:`LayeredView`."""
    nodes = view.nodes
    local = {e: k for k, e in enumerate(nodes)}
    src, rel, dst = [], [], []
    for h in nodes:
        for r, t in view.at(0)[h]:
            src.append(local[h])
            rel.append(r)
            dst.append(local[t])
    return GraphBatch(np.asarray(nodes, dtype=np.int64), np.asarray(src, dtype=np.int64),
                      np.asarray(rel, dtype=np.int64), np.asarray(dst, dtype=np.int64),
                      np.asarray([local[anchors[target]]], dtype=np.int64),
                      np.asarray([local[anchors[b]] for b in behaviors], dtype=np.int64),
                      np.zeros(len(behaviors), dtype=np.int64))


@dataclass
class ProfileBatch:
    user_sparse: np.ndarray
    user_dense: np.ndarray
    item_sparse: np.ndarray
    item_dense: np.ndarray


def profile_batch(samples: Sequence[Sample], users: ProfileTable, items: ProfileTable,
                  stats: DenseStats) -> ProfileBatch:
    u = np.asarray([s.user for s in samples], dtype=np.int64)
    i = np.asarray([s.item for s in samples], dtype=np.int64)
    return ProfileBatch(users.sparse[u], standardize(users.dense[u], stats.user_mean, stats.user_std),
                        items.sparse[i], standardize(items.dense[i], stats.item_mean, stats.item_std))


# layers ---------------------------------------------------------------------------------

def embed_profile(tape: Tape, side: str, sparse_ids: np.ndarray, dense: np.ndarray,
                  n_sparse_vocab: Sequence[int]) -> int | None:
    """Concatenated sparse-feature embeddings followed by standardized dense values.

    ``dense`` must already be standardized (see :func:`data.standardize`).
    Returns ``None`` for a side with no features.
    """
    parts = []
    sparse_ids = np.asarray(sparse_ids, dtype=np.int64)
    for j, vocab in enumerate(n_sparse_vocab):
        col = sparse_ids[:, j]
        if len(col) and (col.min() < 0 or col.max() >= vocab):
            raise UnknownIdError(f"{side} sparse feature {j} id outside vocabulary of {vocab}")
        parts.append(tape.gather(tape.param(f"{side}_emb/{j}"), col))
    if np.asarray(dense).shape[-1]:
        parts.append(tape.const(dense))
    if not parts:
        return None
    return parts[0] if len(parts) == 1 else tape.concat(*parts)


def extractor_layer(tape: Tape, graph: GraphBatch, state: int, layer: int, cfg: ModelConfig,
                    trace: dict | None = None) -> int:
    """One relational aggregation step: ``x_h <- x_h (+) sum_t alpha(h,r,t) x_t``.

    Nodes without neighbours receive a zero message.
    """
    n = graph.n_nodes
    width = tape.value(state).shape[1]
    if width != cfg.d * 2 ** layer:
        raise ShapeError(f"layer {layer} expects width {cfg.d * 2 ** layer}, got {width}")
    pre = f"layer{layer}/"
    src, dst = graph.edge_src, graph.edge_dst
    tails = tape.gather(state, dst)
    agg = cfg.aggregator

    if agg in ("relation", "self_attention"):
        heads = tape.gather(state, src)
        if agg == "relation":
            f = tape.tanh(tape.affine(tape.concat(heads, tails), tape.param(pre + "f_w"), tape.param(pre + "f_b")))
            if cfg.use_ram:
                query = tape.affine(tape.gather(tape.param("relation_emb"), graph.edge_rel),
                                    tape.param(pre + "w_alpha"))
                logits = tape.rowdot(query, f)
            else:
                logits = tape.reshape(tape.affine(f, tape.param(pre + "score_w")), (len(src),))
        else:
            logits = tape.rowdot(tape.affine(heads, tape.param(pre + "sa_w")), tails)
        alpha = tape.segment_softmax(logits, src, n)
        if trace is not None:
            trace.setdefault("alpha", []).append(alpha)
        message = tape.weighted_sum(tails, alpha, src, n)
    elif agg == "sum":
        message = tape.weighted_sum(tails, None, src, n)
    else:
        has = np.unique(src)
        if agg == "nonlinear":
            pooled = tape.gather(tape.weighted_sum(tails, None, src, n), has)
            mixed = tape.tanh(tape.affine(pooled, tape.param(pre + "nl_w"), tape.param(pre + "nl_b")))
        else:  # concat
            k = cfg.concat_k
            slots = graph.edge_slots()
            keep = slots < k
            padded = tape.weighted_sum(tape.gather(state, dst[keep]), None, src[keep] * k + slots[keep], n * k)
            flat = tape.gather(tape.reshape(padded, (n, k * width)), has)
            mixed = tape.tanh(tape.affine(flat, tape.param(pre + "cat_w"), tape.param(pre + "cat_b")))
        message = tape.weighted_sum(mixed, None, has, n)
    return tape.concat(state, message)


def activation_layer(tape: Tape, behavior_repr: int, target_repr: int, behavior_sample: np.ndarray,
                     n_samples: int, use_ral: bool = True, trace: dict | None = None) -> int:
    """User representation: target-keyed attention over behavior representations.

    Samples without behaviors get a zero vector.
    """
    if use_ral:
        keys = tape.gather(target_repr, behavior_sample)
        logits = tape.rowdot(tape.affine(behavior_repr, tape.param("w_beta")), keys)
        beta = tape.segment_softmax(logits, behavior_sample, n_samples)
        if trace is not None:
            trace["beta"] = beta
        return tape.weighted_sum(behavior_repr, beta, behavior_sample, n_samples)
    return tape.mean(behavior_repr, segments=behavior_sample, n=n_samples)


@dataclass
class Forward:
    tape: Tape
    prob: int
    target_repr: int
    user_repr: int
    behavior_repr: int
    trace: dict = field(default_factory=dict)

    def loss(self, labels) -> int:
        return self.tape.bce(self.prob, np.asarray(labels, dtype=np.float64))


def relational_states(tape: Tape, graph: GraphBatch, cfg: ModelConfig, trace: dict | None = None) -> int:
    state = tape.gather(tape.param("entity_emb"), graph.node_entity)
    for l in range(cfg.layers):
        state = extractor_layer(tape, graph, state, l, cfg, trace)
    return state


def forward(store: ParameterStore, cfg: ModelConfig, schema: Schema, graph: GraphBatch,
            profiles: ProfileBatch) -> Forward:
    """Click probabilities for one batch."""
    tape = Tape(store)
    trace: dict = {}
    if cfg.model == "atbrg":
        state = relational_states(tape, graph, cfg, trace)
    else:
        state = tape.gather(tape.param("entity_emb"), graph.node_entity)
    target = tape.gather(state, graph.target_node)
    behaviors = tape.gather(state, graph.behavior_node)
    if cfg.model == "atbrg":
        user = activation_layer(tape, behaviors, target, graph.behavior_sample, graph.n_samples,
                                cfg.use_ral, trace)
    else:
        user = tape.mean(behaviors, segments=graph.behavior_sample, n=graph.n_samples)

    parts = [embed_profile(tape, "user", profiles.user_sparse, profiles.user_dense, schema.user.sparse),
             embed_profile(tape, "item", profiles.item_sparse, profiles.item_dense, schema.item.sparse),
             user, target]
    z = tape.concat(*(p for p in parts if p is not None))
    act = tape.tanh if cfg.mlp_activation == "tanh" else tape.sigmoid
    for k in range(len(cfg.mlp_dims)):
        z = act(tape.affine(z, tape.param(f"mlp{k}/w"), tape.param(f"mlp{k}/b")))
    logit = tape.affine(z, tape.param("out/w"), tape.param("out/b"))
    prob = tape.sigmoid(tape.reshape(logit, (graph.n_samples,)))
    return Forward(tape, prob, target, user, behaviors, trace)


def relational_repr(sub: RelationalSubgraph, cfg: ModelConfig, store: ParameterStore):
    """Layer-L representations of the target item and of each behavior item."""
    tape = Tape(store)
    graph = graph_batch([sub], cfg.max_behaviors)
    state = relational_states(tape, graph, cfg)
    out = tape.value(state)
    return out[graph.target_node[0]], out[graph.behavior_node]


def predict(store: ParameterStore, cfg: ModelConfig, schema: Schema, graph: GraphBatch,
            profiles: ProfileBatch) -> np.ndarray:
    fwd = forward(store, cfg, schema, graph, profiles)
    return fwd.tape.value(fwd.prob)


def batch_loss(predictions, labels) -> float:
    """Mean clamped binary cross-entropy of plain arrays."""
    p = np.asarray(predictions, dtype=np.float64)
    if len(p) == 0:
        raise ContractError("empty batch")
    tape = Tape()
    return float(tape.value(tape.bce(tape.const(p), np.asarray(labels, dtype=np.float64))))
