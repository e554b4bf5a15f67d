"""Mini-batch contrastive training with Adam, validation, and checkpoints.

One trainer thread owns the parameters. Every batch encodes its documents on
a fresh tape, mines hard negatives per anchor among the batch documents,
backpropagates the weighted hierarchical loss, clips gradients, and applies
one bias-corrected Adam step.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensors as T
from .encoder import (
    AdapterParams,
    FusionParams,
    GinLayer,
    PoolParams,
    encode_document,
)
from .graphio import Corpus, EmbeddingTables, PairExample, UPOS_TAGS
from .objectives import (
    ContrastConfig,
    NodeAlignment,
    align_nodes,
    graph_contrast_loss,
    mine_hard_negatives,
    node_contrast_loss,
    total_loss,
)
from .tensors import ContractError, Tensor, Tape, backward


class ConfigError(Exception):
    """A config file entry could not be understood; the message names the key."""


class CheckpointError(Exception):
    """A checkpoint file is unreadable or inconsistent with its config."""


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


@dataclass
class TrainConfig:
    """Every knob of the pipeline, exposed as flat dotted config keys."""

    d: int = 24
    d_tok: int = 16
    d_pos: int = 8
    d_type: int = 8
    layers: int = 2
    token_table_rows: int = 4096
    max_positions: int = 512
    relation_table_rows: int = 64
    dropout: float = 0.1
    use_topic_edge_weights: bool = True
    reversed_edges: bool = True
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 150
    seed: int = 42
    validation_every: int = 10
    grad_clip: float = 5.0
    tau_node: float = 0.1
    tau_graph: float = 0.1
    gamma: float = 0.5
    top_k: int = 4
    lambda_node: float = 0.5
    lambda_graph: float = 1.0
    min_freq: int = 2
    threshold: float = 0.5

    def __post_init__(self) -> None:
        for name in ("d", "d_tok", "d_pos", "d_type", "layers", "token_table_rows",
                     "max_positions", "relation_table_rows"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be a positive integer")
        if self.batch_size < 2:
            raise ContractError("batch_size must be >= 2 (mining needs in-batch candidates)")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.epochs < 0 or self.validation_every < 1 or self.min_freq < 1:
            raise ContractError("epochs >= 0, validation_every >= 1, min_freq >= 1 required")
        if self.learning_rate <= 0.0 or self.grad_clip <= 0.0:
            raise ContractError("learning_rate and grad_clip must be positive")
        self.contrast()  # validates temperatures, gamma, weights

    def contrast(self) -> ContrastConfig:
        return ContrastConfig(
            tau_node=self.tau_node, tau_graph=self.tau_graph, gamma=self.gamma,
            top_k=self.top_k, lambda_node=self.lambda_node, lambda_graph=self.lambda_graph,
        )


# dotted config key -> (field name, parser); also fixes the canonical order
# of to_text() output and of the shipped default config file.
CONFIG_KEYS: dict[str, tuple[str, Callable[[str], object]]] = {
    "model.d": ("d", int),
    "model.d_tok": ("d_tok", int),
    "model.d_pos": ("d_pos", int),
    "model.d_type": ("d_type", int),
    "model.layers": ("layers", int),
    "model.token_table_rows": ("token_table_rows", int),
    "model.max_positions": ("max_positions", int),
    "model.relation_table_rows": ("relation_table_rows", int),
    "model.dropout": ("dropout", float),
    "model.use_topic_edge_weights": ("use_topic_edge_weights", _parse_bool),
    "model.reversed_edges": ("reversed_edges", _parse_bool),
    "train.learning_rate": ("learning_rate", float),
    "train.adam_beta1": ("adam_beta1", float),
    "train.adam_beta2": ("adam_beta2", float),
    "train.adam_eps": ("adam_eps", float),
    "train.batch_size": ("batch_size", int),
    "train.epochs": ("epochs", int),
    "train.seed": ("seed", int),
    "train.validation_every": ("validation_every", int),
    "train.grad_clip": ("grad_clip", float),
    "loss.tau_node": ("tau_node", float),
    "loss.tau_graph": ("tau_graph", float),
    "loss.gamma": ("gamma", float),
    "loss.top_k": ("top_k", int),
    "loss.lambda_node": ("lambda_node", float),
    "loss.lambda_graph": ("lambda_graph", float),
    "topics.min_freq": ("min_freq", int),
    "score.threshold": ("threshold", float),
}

_FIELD_TO_KEY = {spec[0]: key for key, spec in CONFIG_KEYS.items()}


def config_to_text(cfg: TrainConfig) -> str:
    lines = []
    for key, (name, parser) in CONFIG_KEYS.items():
        value = getattr(cfg, name)
        if parser is _parse_bool:
            rendered = "true" if value else "false"
        else:
            rendered = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> TrainConfig:
    """Parse flat dotted key=value lines; '#' starts a comment."""
    values: dict[str, object] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw!r}")
        key, _, rendered = line.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {line_no}: unknown config key {key!r}")
        name, parser = CONFIG_KEYS[key]
        try:
            values[name] = parser(rendered.strip())
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    try:
        return TrainConfig(**values)
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc


def config_from_file(path: str | Path) -> TrainConfig:
    return config_from_text(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# model parameters
# ---------------------------------------------------------------------------


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, (fan_in, fan_out))


class ModelParams:
    """All learnable tensors, with a stable name order for serialization.

    The manifest order is: embedding tables, the two input adapters, the
    syntactic then topic GIN stacks (eps, W1, b1, W2, b2, rel per layer),
    fusion projections, pooling parameters.
    """

    def __init__(self, config: TrainConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        d = config.d
        self.tables = EmbeddingTables.init(
            config.token_table_rows, config.max_positions,
            config.d_tok, config.d_pos, config.d_type, rng,
        )
        syn_in = config.d_tok + config.d_pos + config.d_type
        self.syn_adapter = AdapterParams(
            W=Tensor(_xavier(rng, syn_in, d), requires_grad=True),
            b=Tensor(np.zeros(d), requires_grad=True),
        )
        self.top_adapter = AdapterParams(
            W=Tensor(_xavier(rng, config.d_tok, d), requires_grad=True),
            b=Tensor(np.zeros(d), requires_grad=True),
        )
        self.syn_gin = [self._init_gin(rng, d, config.relation_table_rows)
                        for _ in range(config.layers)]
        self.top_gin = [self._init_gin(rng, d, 1) for _ in range(config.layers)]
        self.fusion = FusionParams(
            Wq=Tensor(_xavier(rng, d, d), requires_grad=True),
            Wk=Tensor(_xavier(rng, d, d), requires_grad=True),
        )
        self.pool = PoolParams(
            Wa=Tensor(_xavier(rng, d, d), requires_grad=True),
            ba=Tensor(np.zeros(d), requires_grad=True),
            w=Tensor(rng.normal(0.0, 1.0, d), requires_grad=True),
        )

    @staticmethod
    def _init_gin(rng: np.random.Generator, d: int, rel_rows: int) -> GinLayer:
        return GinLayer(
            eps=Tensor(0.0, requires_grad=True),
            W1=Tensor(_xavier(rng, d, d), requires_grad=True),
            b1=Tensor(np.zeros(d), requires_grad=True),
            W2=Tensor(_xavier(rng, d, d), requires_grad=True),
            b2=Tensor(np.zeros(d), requires_grad=True),
            rel_table=Tensor(rng.normal(0.0, 0.1, (rel_rows, d)), requires_grad=True),
        )

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = [
            ("token_table", self.tables.token),
            ("position_table", self.tables.position),
            ("upos_table", self.tables.upos),
            ("syn_adapter.W", self.syn_adapter.W),
            ("syn_adapter.b", self.syn_adapter.b),
            ("top_adapter.W", self.top_adapter.W),
            ("top_adapter.b", self.top_adapter.b),
        ]
        for prefix, stack in (("syn_gin", self.syn_gin), ("top_gin", self.top_gin)):
            for i, layer in enumerate(stack):
                out.extend(
                    (
                        (f"{prefix}.{i}.eps", layer.eps),
                        (f"{prefix}.{i}.W1", layer.W1),
                        (f"{prefix}.{i}.b1", layer.b1),
                        (f"{prefix}.{i}.W2", layer.W2),
                        (f"{prefix}.{i}.b2", layer.b2),
                        (f"{prefix}.{i}.rel", layer.rel_table),
                    )
                )
        out.extend(
            (
                ("fusion.Wq", self.fusion.Wq),
                ("fusion.Wk", self.fusion.Wk),
                ("pool.Wa", self.pool.Wa),
                ("pool.ba", self.pool.ba),
                ("pool.w", self.pool.w),
            )
        )
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def manifest_lines(self) -> list[str]:
        lines = []
        for name, t in self.named_parameters():
            shape = "x".join(str(s) for s in t.shape) if t.shape else "()"
            lines.append(f"{name} {shape}")
        return lines

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.named_parameters():
            arr = state[name]
            if arr.shape != t.data.shape:
                raise CheckpointError(f"{name}: expected shape {t.data.shape}, found {arr.shape}")
            t.data = arr.astype(np.float64, copy=True)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class AdamState:
    """First/second moment buffers and the shared step counter."""

    def __init__(self, params: ModelParams):
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.named_parameters()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.named_parameters()}


def adam_step(
    params: ModelParams,
    state: AdamState,
    lr: float,
    betas: tuple[float, float],
    eps: float,
) -> None:
    """Bias-corrected Adam update over every parameter, then zero the grads."""
    named = params.named_parameters()
    for name, p in named:
        if p.grad is None:
            raise ContractError(f"adam_step before backward: no gradient for {name}")
    state.t += 1
    b1, b2 = betas
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    for name, p in named:
        g = p.grad
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        p.data = p.data - lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        p.zero_grad()


def clip_gradients(params: ModelParams, max_norm: float) -> float:
    """Global-norm gradient clipping; returns the pre-clip norm."""
    total_sq = 0.0
    grads = [p.grad for p in params.parameters() if p.grad is not None]
    for g in grads:
        total_sq += float(np.sum(g * g))
    norm = float(np.sqrt(total_sq))
    if norm > max_norm:
        factor = max_norm / norm
        for p in params.parameters():
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    mean_total: float
    mean_node: float
    mean_graph: float
    mined_negatives: int
    empty_alignments: int
    anchors: int


@dataclass
class ValidationMetrics:
    accuracy: float
    mean_matched: float
    mean_mismatched: float

    @property
    def separation(self) -> float:
        return self.mean_matched - self.mean_mismatched


def positive_pair_keys(pairs: Sequence[PairExample]) -> set[frozenset]:
    return {frozenset((p.doc_a, p.doc_b)) for p in pairs if p.label == 1}


def batch_loss(
    corpus: Corpus,
    batch_pairs: Sequence[PairExample],
    params: ModelParams,
    cfg: TrainConfig,
    *,
    rng: np.random.Generator | None = None,
    training: bool = True,
    positive_keys: set[frozenset] | None = None,
    alignment_cache: dict[tuple[str, str], NodeAlignment] | None = None,
    stats: dict | None = None,
    frozen_negatives: dict[tuple[str, str], list[str]] | None = None,
) -> Tensor | None:
    """Mean hierarchical loss over the batch's anchors, or None without anchors.

    Anchors are the batch's positive pairs; the other batch documents form
    the mining pool, labeled non-match unless the corpus holds a positive
    pair with the anchor. frozen_negatives bypasses mining (gradient checks
    need the selection fixed while parameters are perturbed).
    """
    if positive_keys is None:
        positive_keys = positive_pair_keys(corpus.pairs)
    if alignment_cache is None:
        alignment_cache = {}
    contrast = cfg.contrast()

    doc_ids: list[str] = []
    for p in batch_pairs:
        for doc_id in (p.doc_a, p.doc_b):
            if doc_id not in doc_ids:
                doc_ids.append(doc_id)
    mode = "train" if training else "eval"
    encoded = {
        doc_id: encode_document(corpus.documents[doc_id], params, mode=mode, rng=rng)
        for doc_id in doc_ids
    }

    anchor_terms: list[Tensor] = []
    for pair in batch_pairs:
        if pair.label != 1:
            continue
        enc_a, enc_b = encoded[pair.doc_a], encoded[pair.doc_b]

        if frozen_negatives is not None:
            chosen = frozen_negatives.get((pair.doc_a, pair.doc_b), [])
        else:
            pool_ids = [i for i in doc_ids if i not in (pair.doc_a, pair.doc_b)]
            batch_entries = [
                (encoded[i].z, 1 if frozenset((pair.doc_a, i)) in positive_keys else 0)
                for i in pool_ids
            ]
            picked = mine_hard_negatives(enc_a.z, batch_entries, contrast.gamma, contrast.top_k)
            chosen = [pool_ids[i] for i in picked]
        negatives = [encoded[i].z for i in chosen]
        g_loss = graph_contrast_loss(enc_a.z, enc_b.z, negatives, contrast.tau_graph)

        key = (pair.doc_a, pair.doc_b)
        alignment = alignment_cache.get(key)
        if alignment is None:
            alignment = align_nodes(corpus.documents[pair.doc_a], corpus.documents[pair.doc_b])
            alignment_cache[key] = alignment
        if alignment.pairs:
            n_loss = node_contrast_loss(
                enc_a.H_F, enc_b.H_F, alignment, contrast.tau_node,
                range(enc_b.H_F.shape[0]),
            )
        else:
            n_loss = Tensor(0.0)
            if stats is not None:
                stats["empty_alignments"] = stats.get("empty_alignments", 0) + 1
        term = total_loss(n_loss, g_loss, contrast)
        anchor_terms.append(term)
        if stats is not None:
            stats["node_sum"] = stats.get("node_sum", 0.0) + n_loss.item()
            stats["graph_sum"] = stats.get("graph_sum", 0.0) + g_loss.item()
            stats["total_sum"] = stats.get("total_sum", 0.0) + term.item()
            stats["anchors"] = stats.get("anchors", 0) + 1
            stats["mined"] = stats.get("mined", 0) + len(negatives)

    if not anchor_terms:
        return None
    total = anchor_terms[0]
    for term in anchor_terms[1:]:
        total = T.add(total, term)
    return T.scale(total, 1.0 / len(anchor_terms))


def train_epoch(
    corpus: Corpus,
    params: ModelParams,
    cfg: TrainConfig,
    rng: np.random.Generator,
    adam_state: AdamState,
    *,
    epoch: int = 0,
    positive_keys: set[frozenset] | None = None,
    alignment_cache: dict | None = None,
) -> EpochStats:
    """One pass over the shuffled pairs; one Adam step per batch with anchors."""
    if not any(p.label == 1 for p in corpus.pairs):
        raise ContractError("training needs at least one positive pair")
    if positive_keys is None:
        positive_keys = positive_pair_keys(corpus.pairs)
    if alignment_cache is None:
        alignment_cache = {}
    order = rng.permutation(len(corpus.pairs))
    stats: dict = {}
    for start in range(0, len(order), cfg.batch_size):
        batch = [corpus.pairs[i] for i in order[start:start + cfg.batch_size]]
        params.zero_grad()
        with Tape():
            loss = batch_loss(
                corpus, batch, params, cfg,
                rng=rng, training=True,
                positive_keys=positive_keys,
                alignment_cache=alignment_cache,
                stats=stats,
            )
            if loss is None:
                continue
            backward(loss)
        clip_gradients(params, cfg.grad_clip)
        adam_step(params, adam_state, cfg.learning_rate,
                  (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps)
    anchors = stats.get("anchors", 0)
    denom = max(anchors, 1)
    return EpochStats(
        epoch=epoch,
        mean_total=stats.get("total_sum", 0.0) / denom,
        mean_node=stats.get("node_sum", 0.0) / denom,
        mean_graph=stats.get("graph_sum", 0.0) / denom,
        mined_negatives=stats.get("mined", 0),
        empty_alignments=stats.get("empty_alignments", 0),
        anchors=anchors,
    )


def validate(
    corpus: Corpus,
    params: ModelParams,
    pairs: Sequence[PairExample] | None = None,
) -> ValidationMetrics:
    """Score every pair in eval mode and report threshold accuracy.

    Predicted label is 1 iff cosine(z_A, z_B) exceeds the configured
    decision threshold.
    """
    pairs = list(corpus.pairs if pairs is None else pairs)
    if not pairs:
        raise ContractError("empty validation split")
    needed: list[str] = []
    for p in pairs:
        for doc_id in (p.doc_a, p.doc_b):
            if doc_id not in needed:
                needed.append(doc_id)
    z = {doc_id: encode_document(corpus.documents[doc_id], params, mode="eval").z
         for doc_id in needed}
    threshold = params.config.threshold
    correct = 0
    matched: list[float] = []
    mismatched: list[float] = []
    for p in pairs:
        s = T.cosine(z[p.doc_a], z[p.doc_b]).item()
        predicted = 1 if s > threshold else 0
        correct += int(predicted == p.label)
        (matched if p.label == 1 else mismatched).append(s)
    return ValidationMetrics(
        accuracy=correct / len(pairs),
        mean_matched=sum(matched) / len(matched) if matched else 0.0,
        mean_mismatched=sum(mismatched) / len(mismatched) if mismatched else 0.0,
    )


@dataclass
class TrainResult:
    params: ModelParams
    best_state: dict[str, np.ndarray]
    best_epoch: int
    best_metric: float
    history: list[dict] = field(default_factory=list)


def train(
    corpus: Corpus,
    cfg: TrainConfig,
    on_event: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Full training run: epochs, periodic validation, best-checkpoint tracking.

    The best state is the latest parameter snapshot whose validation accuracy
    ties or beats every earlier one, so the logged best metric never
    decreases.
    """
    params = ModelParams(cfg)
    adam = AdamState(params)
    rng = np.random.default_rng(cfg.seed)
    positive_keys = positive_pair_keys(corpus.pairs)
    alignment_cache: dict = {}
    history: list[dict] = []

    def emit(event: dict) -> None:
        history.append(event)
        if on_event is not None:
            on_event(event)

    def validation_event(epoch: int, metrics: ValidationMetrics, best: float) -> dict:
        return {
            "event": "validation", "epoch": epoch,
            "accuracy": metrics.accuracy,
            "matched_sim": metrics.mean_matched,
            "mismatched_sim": metrics.mean_mismatched,
            "separation": metrics.separation,
            "best_accuracy": best,
        }

    metrics = validate(corpus, params)
    best_metric = metrics.accuracy
    best_epoch = 0
    best_state = params.state_arrays()
    emit(validation_event(0, metrics, best_metric))

    for epoch in range(1, cfg.epochs + 1):
        stats = train_epoch(
            corpus, params, cfg, rng, adam,
            epoch=epoch, positive_keys=positive_keys, alignment_cache=alignment_cache,
        )
        emit({
            "event": "epoch", "epoch": epoch,
            "total_loss": stats.mean_total, "node_loss": stats.mean_node,
            "graph_loss": stats.mean_graph, "mined_negatives": stats.mined_negatives,
            "empty_alignments": stats.empty_alignments, "anchors": stats.anchors,
        })
        if epoch % cfg.validation_every == 0 or epoch == cfg.epochs:
            metrics = validate(corpus, params)
            if metrics.accuracy >= best_metric:
                best_metric = metrics.accuracy
                best_epoch = epoch
                best_state = params.state_arrays()
            emit(validation_event(epoch, metrics, best_metric))

    return TrainResult(
        params=params, best_state=best_state,
        best_epoch=best_epoch, best_metric=best_metric, history=history,
    )


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"SCOH1"


@dataclass
class Checkpoint:
    params: ModelParams
    epoch: int
    metric: float

    @property
    def config(self) -> TrainConfig:
        return self.params.config


def save_checkpoint(path: str | Path, params: ModelParams, epoch: int, metric: float) -> None:
    """Write magic, config text, dimension manifest, then raw LE doubles."""
    config_blob = config_to_text(params.config).encode("utf-8")
    manifest_blob = "\n".join(params.manifest_lines()).encode("utf-8")
    chunks = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", len(config_blob)), config_blob,
        struct.pack("<I", len(manifest_blob)), manifest_blob,
        struct.pack("<Q", epoch),
        struct.pack("<d", metric),
    ]
    for _, t in params.named_parameters():
        chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> Checkpoint:
    blob = Path(path).read_bytes()
    view = memoryview(blob)
    offset = 0

    def read(n: int, what: str) -> memoryview:
        nonlocal offset
        if offset + n > len(view):
            raise CheckpointError(f"truncated checkpoint: expected {what}")
        chunk = view[offset:offset + n]
        offset += n
        return chunk

    if bytes(read(len(CHECKPOINT_MAGIC), "magic")) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes: not a checkpoint file")
    config_len = struct.unpack("<I", read(4, "config length"))[0]
    try:
        cfg = config_from_text(bytes(read(config_len, "config block")).decode("utf-8"))
    except ConfigError as exc:
        raise CheckpointError(f"embedded config invalid: {exc}") from exc
    manifest_len = struct.unpack("<I", read(4, "manifest length"))[0]
    stored_manifest = bytes(read(manifest_len, "manifest block")).decode("utf-8").splitlines()
    epoch = struct.unpack("<Q", read(8, "epoch"))[0]
    metric = struct.unpack("<d", read(8, "metric"))[0]

    params = ModelParams(cfg)
    expected_manifest = params.manifest_lines()
    if stored_manifest != expected_manifest:
        stored_set, expected_set = set(stored_manifest), set(expected_manifest)
        diff = ["manifest mismatch between checkpoint and config:"]
        diff += [f"  expected: {line}" for line in expected_manifest if line not in stored_set]
        diff += [f"  found:    {line}" for line in stored_manifest if line not in expected_set]
        raise CheckpointError("\n".join(diff))

    for name, t in params.named_parameters():
        n_bytes = t.data.size * 8
        chunk = read(n_bytes, f"values of {name}")
        t.data = np.frombuffer(chunk, dtype="<f8").reshape(t.data.shape).astype(np.float64)
    if offset != len(view):
        raise CheckpointError(f"trailing bytes after parameters: {len(view) - offset}")
    return Checkpoint(params=params, epoch=epoch, metric=metric)
