"""Graph encoding: GIN message passing, cross-graph attention, attentive pooling.

Both graphs of a document are encoded independently by the same layer shape,
then every syntactic node attends over topic nodes and absorbs their context;
a learned attentive pool turns the fused node matrix into one document vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensors as T
from .graphio import DualGraphDocument, SyntacticGraph, TopicGraph, syntactic_init, topic_init
from .tensors import ContractError, Tensor


@dataclass
class AdapterParams:
    """Affine map from a graph's init dimension to the shared hidden dimension."""

    W: Tensor
    b: Tensor


@dataclass
class GinLayer:
    """One GIN layer: learnable eps, a d->d->d MLP with tanh between, and a
    per-layer relation embedding table added to neighbor messages."""

    eps: Tensor
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor
    rel_table: Tensor


@dataclass
class FusionParams:
    """Query/key projections for syntactic-over-topic cross attention."""

    Wq: Tensor
    Wk: Tensor


@dataclass
class PoolParams:
    """Attentive pooling: score s_i = w . tanh(Wa h_i + ba), weights softmax(s)."""

    Wa: Tensor
    ba: Tensor
    w: Tensor


@dataclass
class EncodedDocument:
    """All encoder outputs for one document, kept for interpretability export."""

    H_S: Tensor
    H_T: Tensor
    H_F: Tensor
    z: Tensor
    alpha: Tensor
    beta: Tensor


@dataclass(frozen=True)
class EdgeArrays:
    """Flat directed-edge arrays as consumed by gin_layer.

    dst receives the message from src; weight multiplies the neighbor
    message (1.0 for syntactic edges, the co-occurrence weight for topic
    edges unless disabled); rel indexes the layer's relation table.
    """

    src: tuple[int, ...]
    dst: tuple[int, ...]
    rel: tuple[int, ...]
    weight: tuple[float, ...]

    @classmethod
    def from_syntactic(cls, graph: SyntacticGraph, add_reversed: bool) -> "EdgeArrays":
        src, dst, rel, weight = [], [], [], []
        for (head, dep), r in zip(graph.edges, graph.edge_rel_rows):
            src.append(head)
            dst.append(dep)
            rel.append(r)
            weight.append(1.0)
            if add_reversed:
                src.append(dep)
                dst.append(head)
                rel.append(r)
                weight.append(1.0)
        return cls(tuple(src), tuple(dst), tuple(rel), tuple(weight))

    @classmethod
    def from_topic(cls, graph: TopicGraph, use_weights: bool) -> "EdgeArrays":
        src, dst, rel, weight = [], [], [], []
        for (k, l), w in zip(graph.edges, graph.weights):
            value = w if use_weights else 1.0
            src.extend((k, l))
            dst.extend((l, k))
            rel.extend((0, 0))
            weight.extend((value, value))
        return cls(tuple(src), tuple(dst), tuple(rel), tuple(weight))


def input_adapter(x0: Tensor, adapter: AdapterParams) -> Tensor:
    """Project node-init vectors to the shared hidden dimension."""
    if x0.data.ndim != 2 or x0.shape[1] != adapter.W.shape[0]:
        raise ContractError(
            f"adapter expects width {adapter.W.shape[0]}, got init shape {x0.shape}"
        )
    return T.add_rows(T.matmul(x0, adapter.W), adapter.b)


def gin_aggregate(h: Tensor, edges: EdgeArrays, eps: Tensor, rel_table: Tensor) -> Tensor:
    """The GIN aggregation: (1+eps) h_i + sum over in-neighbors of
    weight * (h_j + rel_embedding)."""
    one_plus_eps = T.add(eps, Tensor(1.0))
    scaled_self = T.mul(one_plus_eps, h)
    if not edges.src:
        return scaled_self
    msg = T.add(T.take_rows(h, edges.src), T.take_rows(rel_table, edges.rel))
    msg = T.scale_rows(msg, edges.weight)
    return T.add(scaled_self, T.scatter_rows(msg, edges.dst, h.shape[0]))


def gin_layer(h: Tensor, edges: EdgeArrays, layer: GinLayer) -> Tensor:
    """One full GIN update: the aggregation followed by the layer's MLP."""
    pre = gin_aggregate(h, edges, layer.eps, layer.rel_table)
    hidden = T.tanh(T.add_rows(T.matmul(pre, layer.W1), layer.b1))
    return T.add_rows(T.matmul(hidden, layer.W2), layer.b2)


def encode_graph(
    x0: Tensor,
    edges: EdgeArrays,
    adapter: AdapterParams,
    layers: list[GinLayer],
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tensor:
    """Adapter, then L GIN layers with layer norm after each MLP and dropout
    between layers in training mode."""
    if not layers:
        raise ContractError("encode_graph needs at least one GIN layer")
    h = input_adapter(x0, adapter)
    last = len(layers) - 1
    for i, layer in enumerate(layers):
        h = gin_layer(h, edges, layer)
        h = T.layer_norm_rows(h)
        if training and dropout > 0.0 and i < last:
            h = T.dropout(h, dropout, rng)
    return h


def cross_fuse(H_S: Tensor, H_T: Tensor, fusion: FusionParams) -> tuple[Tensor, Tensor]:
    """Fuse topic context into each syntactic node via scaled dot attention.

    Returns (H_F, alpha). With no topic nodes the fusion passes H_S through
    and alpha is an empty [n x 0] matrix.
    """
    if H_S.data.ndim != 2 or H_T.data.ndim != 2 or (H_T.shape[0] and H_S.shape[1] != H_T.shape[1]):
        raise ContractError(f"cross_fuse widths differ: {H_S.shape} vs {H_T.shape}")
    if H_T.shape[0] == 0:
        return H_S, Tensor(np.zeros((H_S.shape[0], 0)))
    d = H_S.shape[1]
    q = T.matmul(H_S, fusion.Wq)
    k = T.matmul(H_T, fusion.Wk)
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d))
    alpha = T.softmax_rows(scores)
    fused = T.add(H_S, T.matmul(alpha, H_T))
    return fused, alpha


def attentive_pool(H_F: Tensor, pool: PoolParams) -> tuple[Tensor, Tensor]:
    """Pool fused node features into one vector; returns (z, beta)."""
    n = H_F.shape[0]
    if n == 0:
        raise ContractError("cannot pool an empty document (zero nodes)")
    d = pool.w.shape[0]
    hidden = T.tanh(T.add_rows(T.matmul(H_F, pool.Wa), pool.ba))
    scores = T.reshape(T.matmul(hidden, T.reshape(pool.w, (d, 1))), (n,))
    beta = T.softmax(scores)
    z = T.reshape(T.matmul(T.reshape(beta, (1, n)), H_F), (H_F.shape[1],))
    return z, beta


def encode_document(
    doc: DualGraphDocument,
    params,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> EncodedDocument:
    """Run the full encoder over one document.

    params is a ModelParams-shaped object (tables, adapters, GIN stacks,
    fusion, pool, config). Dropout fires only in train mode and needs rng.
    """
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    training = mode == "train"
    cfg = params.config
    if training and cfg.dropout > 0.0 and rng is None:
        raise ContractError("train-mode encoding with dropout needs an rng")

    x0 = syntactic_init(doc.syntactic, params.tables)
    syn_edges = EdgeArrays.from_syntactic(doc.syntactic, cfg.reversed_edges)
    H_S = encode_graph(
        x0, syn_edges, params.syn_adapter, params.syn_gin,
        dropout=cfg.dropout, rng=rng, training=training,
    )

    if doc.topic.node_count > 0:
        y0 = topic_init(doc.topic, params.tables)
        top_edges = EdgeArrays.from_topic(doc.topic, cfg.use_topic_edge_weights)
        H_T = encode_graph(
            y0, top_edges, params.top_adapter, params.top_gin,
            dropout=cfg.dropout, rng=rng, training=training,
        )
    else:
        H_T = Tensor(np.zeros((0, cfg.d)))

    H_F, alpha = cross_fuse(H_S, H_T, params.fusion)
    if training and cfg.dropout > 0.0:
        H_F = T.dropout(H_F, cfg.dropout, rng)
    z, beta = attentive_pool(H_F, params.pool)
    return EncodedDocument(H_S=H_S, H_T=H_T, H_F=H_F, z=z, alpha=alpha, beta=beta)
