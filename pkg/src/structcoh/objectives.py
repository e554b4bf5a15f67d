"""Hierarchical contrastive objectives.

Node-level InfoNCE over aligned token pairs, graph-level InfoNCE over pooled
document vectors with mined hard negatives, and the weighted total. Both
losses are non-negative by construction: the positive term appears in its
own denominator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensors as T
from .graphio import CONTENT_UPOS, DualGraphDocument
from .tensors import ContractError, Tensor


@dataclass
class NodeAlignment:
    """Aligned node pairs (index in A, index in B) defining node-level positives."""

    pairs: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass
class ContrastConfig:
    """Temperatures, mining parameters, and loss weights."""

    tau_node: float = 0.1
    tau_graph: float = 0.1
    gamma: float = 0.5
    top_k: int = 4
    lambda_node: float = 0.5
    lambda_graph: float = 1.0

    def __post_init__(self) -> None:
        if self.tau_node <= 0.0 or self.tau_graph <= 0.0:
            raise ContractError("temperatures must be strictly positive")
        if not -1.0 < self.gamma < 1.0:
            raise ContractError(f"mining threshold must lie in (-1, 1), got {self.gamma}")
        if self.top_k < 0:
            raise ContractError(f"top_k must be >= 0, got {self.top_k}")
        if self.lambda_node < 0.0 or self.lambda_graph < 0.0:
            raise ContractError("loss weights must be non-negative")
        if self.lambda_node == 0.0 and self.lambda_graph == 0.0:
            raise ContractError("at least one loss weight must be positive")


def align_nodes(a: DualGraphDocument, b: DualGraphDocument) -> NodeAlignment:
    """Lemma string match over content tokens.

    Repeated lemmas pair up in occurrence order; surplus mentions on either
    side stay unpaired.
    """
    available: dict[str, list[int]] = {}
    for j, tok in enumerate(b.tokens):
        if tok.upos in CONTENT_UPOS:
            available.setdefault(tok.lemma, []).append(j)
    cursor: dict[str, int] = {}
    pairs: list[tuple[int, int]] = []
    for i, tok in enumerate(a.tokens):
        if tok.upos not in CONTENT_UPOS:
            continue
        slots = available.get(tok.lemma)
        if not slots:
            continue
        used = cursor.get(tok.lemma, 0)
        if used < len(slots):
            pairs.append((i, slots[used]))
            cursor[tok.lemma] = used + 1
    return NodeAlignment(pairs=pairs)


def node_contrast_loss(
    H_A: Tensor,
    H_B: Tensor,
    alignment: NodeAlignment,
    tau_n: float,
    pool: Sequence[int],
) -> Tensor:
    """InfoNCE over aligned nodes with cosine similarity at temperature tau_n.

    For each aligned pair the positive competes against every candidate node
    of B in the pool. Empty alignments contribute a zero loss (the trainer
    counts them).
    """
    if tau_n <= 0.0:
        raise ContractError(f"tau_n must be positive, got {tau_n}")
    if not alignment.pairs:
        return Tensor(0.0)
    pool = list(pool)
    pool_set = set(pool)
    for _, jstar in alignment.pairs:
        if jstar not in pool_set:
            raise ContractError(f"positive candidate {jstar} missing from pool")
    sims = T.scale(
        T.matmul(T.normalize_rows(H_A), T.transpose(T.normalize_rows(H_B))),
        1.0 / tau_n,
    )
    n_b = H_B.shape[0]
    total: Tensor | None = None
    for i, jstar in alignment.pairs:
        row = T.reshape(T.take_rows(sims, [i]), (n_b,))
        denom = T.logsumexp(T.take(row, pool))
        positive = T.reshape(T.take(row, [jstar]), ())
        term = T.sub(denom, positive)
        total = term if total is None else T.add(total, term)
    return T.scale(total, 1.0 / len(alignment.pairs))


def graph_contrast_loss(
    z_a: Tensor,
    z_b: Tensor,
    negatives: Sequence[Tensor],
    tau_g: float,
) -> Tensor:
    """Graph-level InfoNCE: the matched pair against mined negatives.

    Exactly zero when the negative set is empty.
    """
    if tau_g <= 0.0:
        raise ContractError(f"tau_g must be positive, got {tau_g}")
    sims = [T.cosine(z_a, z_b)] + [T.cosine(z_a, z_n) for z_n in negatives]
    logits = T.scale(T.stack_scalars(sims), 1.0 / tau_g)
    positive = T.reshape(T.take(logits, [0]), ())
    return T.sub(T.logsumexp(logits), positive)


def mine_hard_negatives(
    anchor: Tensor,
    batch: Sequence[tuple[Tensor, int]],
    gamma: float,
    top_k: int,
) -> list[int]:
    """Select hard negatives from a batch of (embedding, match-label) entries.

    Primary rule: every non-match with cosine above gamma, in batch order.
    If none clears the threshold, fall back to the top_k most similar
    non-matches (ties keep batch order). Matches are never returned.
    """
    anchor_data = anchor.data
    sims: list[float] = []
    eligible: list[int] = []
    for idx, (z, label) in enumerate(batch):
        zd = z.data
        na = float(np.linalg.norm(anchor_data))
        nb = float(np.linalg.norm(zd))
        if na == 0.0 or nb == 0.0:
            raise T.DomainError("mine_hard_negatives: zero-norm embedding")
        sims.append(float(np.dot(anchor_data, zd) / (na * nb)))
        if label == 0:
            eligible.append(idx)
    hits = [i for i in eligible if sims[i] > gamma]
    if hits:
        return hits
    ranked = sorted(eligible, key=lambda i: -sims[i])  # stable: ties keep batch order
    return ranked[:top_k]


def total_loss(node_loss: Tensor, graph_loss: Tensor, cfg: ContrastConfig) -> Tensor:
    """Weighted sum of the two levels."""
    if not np.isfinite(node_loss.data) or not np.isfinite(graph_loss.data):
        raise ContractError("total_loss requires finite component losses")
    return T.add(T.scale(node_loss, cfg.lambda_node), T.scale(graph_loss, cfg.lambda_graph))
