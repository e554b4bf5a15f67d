"""CoNLL-U ingestion and dual-graph construction.

A document becomes two graphs: a syntactic dependency graph whose node-init
vectors concatenate token, position, and POS embeddings, and a topic
interaction graph over frequent content lemmas whose nodes average their
mentions' token embeddings and whose edges carry normalized co-occurrence
weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensors as T
from .tensors import ContractError, Tensor

UPOS_TAGS = (
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM",
    "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X",
)
UPOS_UNK_ROW = len(UPOS_TAGS)
CONTENT_UPOS = frozenset({"NOUN", "PROPN", "VERB", "ADJ"})


class ParseError(Exception):
    """Malformed CoNLL-U input; the message cites the offending line."""


class CorpusError(Exception):
    """A corpus directory is inconsistent (missing docs, bad pairs file)."""


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of the UTF-8 encoding of text."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


# ---------------------------------------------------------------------------
# CoNLL-U parsing
# ---------------------------------------------------------------------------


@dataclass
class TokenRecord:
    """One syntactic token; head == 0 marks the sentence root."""

    index: int
    form: str
    lemma: str
    upos: str
    head: int
    deprel: str
    xpos: str = "_"
    feats: str = "_"
    deps: str = "_"
    misc: str = "_"

    def to_conllu(self) -> str:
        return "\t".join(
            (
                str(self.index), self.form, self.lemma, self.upos, self.xpos,
                self.feats, str(self.head), self.deprel, self.deps, self.misc,
            )
        )


def parse_conllu(text: str) -> list[list[TokenRecord]]:
    """Parse CoNLL-U text into sentences of token records.

    Comment lines and blank separators follow the standard format;
    multiword-token ranges ("1-2") and empty nodes ("1.1") are skipped.
    Structural problems raise ParseError naming the offending line.
    """
    sentences: list[list[TokenRecord]] = []
    current: list[TokenRecord] = []
    token_lines: list[int] = []

    def finish(boundary_line: int) -> None:
        if not current:
            return
        roots = [(tok, ln) for tok, ln in zip(current, token_lines) if tok.head == 0]
        if not roots:
            raise ParseError(f"line {boundary_line}: sentence has no root token")
        if len(roots) > 1:
            raise ParseError(f"line {roots[1][1]}: sentence has multiple root tokens")
        n = len(current)
        for tok, ln in zip(current, token_lines):
            if tok.head != 0 and not 1 <= tok.head <= n:
                raise ParseError(f"line {ln}: head {tok.head} out of range for {n} tokens")
            if tok.head == tok.index:
                raise ParseError(f"line {ln}: token is its own head")
        sentences.append(list(current))
        current.clear()
        token_lines.clear()

    line_no = 0
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if line.strip() == "":
            finish(line_no)
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ParseError(f"line {line_no}: expected 10 tab-separated columns, got {len(cols)}")
        ident = cols[0]
        if "-" in ident or "." in ident:
            continue  # multiword range or empty node
        try:
            index = int(ident)
        except ValueError as exc:
            raise ParseError(f"line {line_no}: non-numeric token index {ident!r}") from exc
        if index != len(current) + 1:
            raise ParseError(f"line {line_no}: token index {index} breaks 1-based sequence")
        try:
            head = int(cols[6])
        except ValueError as exc:
            raise ParseError(f"line {line_no}: non-numeric head {cols[6]!r}") from exc
        current.append(
            TokenRecord(
                index=index, form=cols[1], lemma=cols[2], upos=cols[3], xpos=cols[4],
                feats=cols[5], head=head, deprel=cols[7], deps=cols[8], misc=cols[9],
            )
        )
        token_lines.append(line_no)
    finish(line_no + 1)
    return sentences


def serialize_tokens(sentences: Iterable[Sequence[TokenRecord]]) -> str:
    """Render sentences back to 10-column CoNLL-U rows."""
    blocks = ["\n".join(tok.to_conllu() for tok in sent) for sent in sentences]
    return "\n\n".join(blocks) + ("\n" if blocks else "")


# ---------------------------------------------------------------------------
# embedding tables
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingTables:
    """Learnable lookup tables for token, position, and POS embeddings.

    Lemmas hash into a fixed number of rows (open vocabulary); positions
    clamp at the last row; unknown POS tags fall back to a reserved row.
    """

    token: Tensor
    position: Tensor
    upos: Tensor

    # token rows start small relative to the structural embeddings so an
    # untrained encoder is driven by shared structure, not lexical identity;
    # Adam grows the lexical signal as the contrastive losses demand it.
    @classmethod
    def init(
        cls,
        token_rows: int,
        max_positions: int,
        d_tok: int,
        d_pos: int,
        d_type: int,
        rng: np.random.Generator,
    ) -> "EmbeddingTables":
        return cls(
            token=Tensor(rng.normal(0.0, 0.05, (token_rows, d_tok)), requires_grad=True),
            position=Tensor(rng.normal(0.0, 0.5, (max_positions, d_pos)), requires_grad=True),
            upos=Tensor(rng.normal(0.0, 0.5, (len(UPOS_TAGS) + 1, d_type)), requires_grad=True),
        )

    @property
    def token_rows(self) -> int:
        return self.token.shape[0]

    @property
    def max_positions(self) -> int:
        return self.position.shape[0]

    def token_row(self, lemma: str) -> int:
        return fnv1a64(lemma) % self.token_rows

    def position_row(self, position: int) -> int:
        return min(position, self.max_positions - 1)

    def upos_row(self, tag: str) -> int:
        try:
            return UPOS_TAGS.index(tag)
        except ValueError:
            return UPOS_UNK_ROW


def token_embedding(lemma: str, tables: EmbeddingTables) -> Tensor:
    """Look up a lemma's learnable embedding row (hashed, so always resolvable)."""
    row = tables.token_row(lemma)
    return T.reshape(T.take_rows(tables.token, [row]), (tables.token.shape[1],))


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------


@dataclass
class SyntacticGraph:
    """Dependency graph over all tokens of a document.

    Nodes are document-global token positions; per sentence, edges form the
    dependency tree (head -> dependent), so across the document they form a
    forest. Node init vectors are materialized on demand from the tables.
    """

    token_rows: list[int]
    position_rows: list[int]
    upos_rows: list[int]
    edges: list[tuple[int, int]]
    edge_rel_rows: list[int]
    n_sentences: int
    unk_upos_count: int = 0

    @property
    def node_count(self) -> int:
        return len(self.token_rows)

    @property
    def edge_count(self) -> int:
        return len(self.edges)


@dataclass
class TopicGraph:
    """Topic interaction graph: frequent content lemmas and their mentions."""

    lemmas: list[str]
    mentions: list[list[int]]
    mention_rows: list[list[int]]
    edges: list[tuple[int, int]]
    weights: list[float]

    @property
    def node_count(self) -> int:
        return len(self.lemmas)


@dataclass
class DualGraphDocument:
    """One document: flat token list plus its two graphs."""

    doc_id: str
    tokens: list[TokenRecord]
    sentence_bounds: list[tuple[int, int]]
    syntactic: SyntacticGraph
    topic: TopicGraph


def relation_row(deprel: str, relation_rows: int) -> int:
    return fnv1a64(deprel) % relation_rows


def build_syntactic_graph(
    sentences: Sequence[Sequence[TokenRecord]],
    tables: EmbeddingTables,
    relation_rows: int,
) -> SyntacticGraph:
    """Assemble the dependency graph: one node per token, one edge per non-root."""
    token_rows: list[int] = []
    position_rows: list[int] = []
    upos_rows: list[int] = []
    edges: list[tuple[int, int]] = []
    edge_rel_rows: list[int] = []
    unk = 0
    offset = 0
    for sent in sentences:
        for tok in sent:
            token_rows.append(tables.token_row(tok.lemma))
            position_rows.append(tables.position_row(offset + tok.index - 1))
            row = tables.upos_row(tok.upos)
            if row == UPOS_UNK_ROW:
                unk += 1
            upos_rows.append(row)
        for tok in sent:
            if tok.head != 0:
                edges.append((offset + tok.head - 1, offset + tok.index - 1))
                edge_rel_rows.append(relation_row(tok.deprel, relation_rows))
        offset += len(sent)
    return SyntacticGraph(
        token_rows=token_rows,
        position_rows=position_rows,
        upos_rows=upos_rows,
        edges=edges,
        edge_rel_rows=edge_rel_rows,
        n_sentences=len(sentences),
        unk_upos_count=unk,
    )


def extract_topics(
    sentences: Sequence[Sequence[TokenRecord]],
    min_freq: int = 2,
    content_upos: frozenset[str] = CONTENT_UPOS,
) -> list[tuple[str, list[int]]]:
    """Frequent-content-lemma topic extraction.

    One topic per distinct content lemma occurring at least min_freq times;
    mention sets are document-global token positions. Output is sorted by
    lemma so extraction is order-deterministic.
    """
    if min_freq < 1:
        raise ContractError(f"min_freq must be >= 1, got {min_freq}")
    positions: dict[str, list[int]] = {}
    offset = 0
    for sent in sentences:
        for tok in sent:
            if tok.upos in content_upos:
                positions.setdefault(tok.lemma, []).append(offset + tok.index - 1)
        offset += len(sent)
    return [(lemma, positions[lemma]) for lemma in sorted(positions) if len(positions[lemma]) >= min_freq]


def edge_weight(co_occur: int, freq_k: int, freq_l: int) -> float:
    """Normalized co-occurrence weight: co / sqrt(freq_k * freq_l)."""
    if freq_k < 1 or freq_l < 1:
        raise ContractError(f"topic frequencies must be >= 1, got ({freq_k}, {freq_l})")
    if co_occur < 0:
        raise ContractError(f"co-occurrence count must be >= 0, got {co_occur}")
    return co_occur / math.sqrt(freq_k * freq_l)


def build_topic_graph(
    sentences: Sequence[Sequence[TokenRecord]],
    topics: Sequence[tuple[str, list[int]]],
    tables: EmbeddingTables,
) -> TopicGraph:
    """Build topic nodes and weighted co-occurrence edges.

    Co-occurrence counts sentences where both lemmas appear; frequency is a
    topic's total mention count. Zero-weight edges are dropped.
    """
    lemmas = [lemma for lemma, _ in topics]
    mentions = [list(m) for _, m in topics]
    mention_rows = [[tables.token_row(lemma)] * len(m) for (lemma, m) in topics]

    # map document-global token position -> sentence index
    sent_of: list[int] = []
    for s_idx, sent in enumerate(sentences):
        sent_of.extend([s_idx] * len(sent))

    topic_sents = [set(sent_of[pos] for pos in m) for m in mentions]
    edges: list[tuple[int, int]] = []
    weights: list[float] = []
    for k in range(len(lemmas)):
        for l in range(k + 1, len(lemmas)):
            co = len(topic_sents[k] & topic_sents[l])
            w = edge_weight(co, len(mentions[k]), len(mentions[l]))
            if w > 0.0:
                edges.append((k, l))
                weights.append(w)
    return TopicGraph(
        lemmas=lemmas, mentions=mentions, mention_rows=mention_rows,
        edges=edges, weights=weights,
    )


def build_document(
    doc_id: str,
    sentences: Sequence[Sequence[TokenRecord]],
    tables: EmbeddingTables,
    relation_rows: int,
    min_freq: int = 2,
) -> DualGraphDocument:
    tokens: list[TokenRecord] = []
    bounds: list[tuple[int, int]] = []
    for sent in sentences:
        start = len(tokens)
        tokens.extend(sent)
        bounds.append((start, len(tokens)))
    syntactic = build_syntactic_graph(sentences, tables, relation_rows)
    topics = extract_topics(sentences, min_freq=min_freq)
    topic = build_topic_graph(sentences, topics, tables)
    return DualGraphDocument(
        doc_id=doc_id, tokens=tokens, sentence_bounds=bounds,
        syntactic=syntactic, topic=topic,
    )


# node-init materialization; recorded on the active tape so gradients reach
# the tables during training.

def syntactic_init(graph: SyntacticGraph, tables: EmbeddingTables) -> Tensor:
    """Node-init matrix: each row is token || position || POS embedding."""
    tok = T.take_rows(tables.token, graph.token_rows)
    pos = T.take_rows(tables.position, graph.position_rows)
    typ = T.take_rows(tables.upos, graph.upos_rows)
    return T.concat_cols([tok, pos, typ])


def topic_init(graph: TopicGraph, tables: EmbeddingTables) -> Tensor:
    """Topic-init matrix: each row is the mean of its mentions' token embeddings."""
    d_tok = tables.token.shape[1]
    if graph.node_count == 0:
        return Tensor(np.zeros((0, d_tok)))
    flat_rows = [r for rows in graph.mention_rows for r in rows]
    averaging = np.zeros((graph.node_count, len(flat_rows)))
    col = 0
    for k, rows in enumerate(graph.mention_rows):
        averaging[k, col:col + len(rows)] = 1.0 / len(rows)
        col += len(rows)
    return T.matmul(Tensor(averaging), T.take_rows(tables.token, flat_rows))


# ---------------------------------------------------------------------------
# corpus loading
# ---------------------------------------------------------------------------


@dataclass
class PairExample:
    """A supervision pair: two document ids and a binary match label."""

    doc_a: str
    doc_b: str
    label: int


@dataclass
class Corpus:
    documents: dict[str, DualGraphDocument]
    pairs: list[PairExample] = field(default_factory=list)


def load_pairs(path: Path) -> list[PairExample]:
    pairs: list[PairExample] = []
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path.name} line {line_no}: malformed JSON ({exc.msg})") from exc
        if not isinstance(obj, dict) or not {"a", "b", "label"} <= obj.keys():
            raise CorpusError(f"{path.name} line {line_no}: expected keys a, b, label")
        label = obj["label"]
        if label not in (0, 1):
            raise CorpusError(f"{path.name} line {line_no}: label must be 0 or 1, got {label!r}")
        pairs.append(PairExample(doc_a=str(obj["a"]), doc_b=str(obj["b"]), label=int(label)))
    return pairs


def load_corpus(
    directory: str | Path,
    tables: EmbeddingTables,
    relation_rows: int,
    min_freq: int = 2,
) -> Corpus:
    """Load every .conllu document plus pairs.jsonl from a directory.

    Document ids are file stems. Every pair must reference loaded documents.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {directory}")
    documents: dict[str, DualGraphDocument] = {}
    for path in sorted(directory.glob("*.conllu")):
        try:
            sentences = parse_conllu(path.read_text(encoding="utf-8"))
        except ParseError as exc:
            raise CorpusError(f"{path.name}: {exc}") from exc
        documents[path.stem] = build_document(
            path.stem, sentences, tables, relation_rows, min_freq=min_freq
        )
    pairs_path = directory / "pairs.jsonl"
    if not pairs_path.is_file():
        raise CorpusError(f"missing pairs file: {pairs_path}")
    pairs = load_pairs(pairs_path)
    missing = sorted(
        {p.doc_a for p in pairs if p.doc_a not in documents}
        | {p.doc_b for p in pairs if p.doc_b not in documents}
    )
    if missing:
        raise CorpusError(f"pairs reference missing documents: {', '.join(missing)}")
    return Corpus(documents=documents, pairs=pairs)
