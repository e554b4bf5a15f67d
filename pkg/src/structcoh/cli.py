"""Command-line surface: inspect, train, score, gradcheck.

Machine-readable output is line-delimited JSON on stdout; diagnostics go to
stderr. Exit codes: 0 success, 1 usage/content error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensors as T
from .encoder import encode_document
from .graphio import (
    CorpusError,
    EmbeddingTables,
    ParseError,
    build_document,
    load_corpus,
    parse_conllu,
)
from .objectives import mine_hard_negatives
from .tensors import Tape, backward
from .trainer import (
    CheckpointError,
    ConfigError,
    ModelParams,
    TrainConfig,
    batch_loss,
    config_from_file,
    load_checkpoint,
    positive_pair_keys,
    save_checkpoint,
    train,
)
from .graphio import Corpus, PairExample

logger = logging.getLogger("structcoh")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("STRUCTCOH_LOG", "error").lower(), logging.ERROR)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(level)


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve 2 for I/O."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fail(code: int, message: str) -> int:
    print(message, file=sys.stderr)
    return code


def _emit(obj: dict) -> None:
    print(json.dumps(obj), flush=True)


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------


def cmd_inspect(args: argparse.Namespace) -> int:
    directory = Path(args.corpus)
    if not directory.is_dir():
        return _fail(2, f"corpus directory not found: {directory}")
    try:
        cfg = config_from_file(args.config) if args.config else TrainConfig()
    except FileNotFoundError as exc:
        return _fail(2, str(exc))
    except ConfigError as exc:
        return _fail(1, f"config error: {exc}")
    tables = EmbeddingTables.init(
        cfg.token_table_rows, cfg.max_positions, cfg.d_tok, cfg.d_pos, cfg.d_type,
        np.random.default_rng(cfg.seed),
    )
    try:
        corpus = load_corpus(directory, tables, cfg.relation_table_rows, cfg.min_freq)
    except FileNotFoundError as exc:
        return _fail(2, str(exc))
    except CorpusError as exc:
        return _fail(1, str(exc))
    logger.info("loaded %d documents from %s", len(corpus.documents), directory)
    positives = sum(1 for p in corpus.pairs if p.label == 1)
    negatives = len(corpus.pairs) - positives
    print(
        f"{len(corpus.documents)} documents, {len(corpus.pairs)} pairs "
        f"({positives} pos/{negatives} neg)"
    )
    for doc_id, doc in corpus.documents.items():
        print(
            f"{doc_id}: {doc.syntactic.node_count} nodes, {doc.syntactic.edge_count} edges, "
            f"{doc.topic.node_count} topics, {len(doc.topic.edges)} topic edges"
        )
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    directory = Path(args.corpus)
    if not directory.is_dir():
        return _fail(2, f"corpus directory not found: {directory}")
    if not Path(args.config).is_file():
        return _fail(2, f"config file not found: {args.config}")
    try:
        cfg = config_from_file(args.config)
    except ConfigError as exc:
        return _fail(1, f"config error: {exc}")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    tables = EmbeddingTables.init(
        cfg.token_table_rows, cfg.max_positions, cfg.d_tok, cfg.d_pos, cfg.d_type,
        np.random.default_rng(cfg.seed),
    )
    try:
        corpus = load_corpus(directory, tables, cfg.relation_table_rows, cfg.min_freq)
    except CorpusError as exc:
        return _fail(1, str(exc))

    if cfg.epochs == 0:
        print("warning: epochs=0, checkpoint holds initialized parameters", file=sys.stderr)
    logger.info("training on %d pairs for %d epochs (seed %d)",
                len(corpus.pairs), cfg.epochs, cfg.seed)

    last_validation: dict = {}

    def on_event(event: dict) -> None:
        if event.get("event") == "validation":
            last_validation.update(event)
        _emit(event)

    result = train(corpus, cfg, on_event=on_event)
    result.params.load_state(result.best_state)
    save_checkpoint(args.out, result.params, result.best_epoch, result.best_metric)
    logger.info("wrote best checkpoint (epoch %d, accuracy %.3f) to %s",
                result.best_epoch, result.best_metric, args.out)
    _emit({
        "event": "final",
        "best_epoch": result.best_epoch,
        "best_accuracy": result.best_metric,
        "separation": last_validation.get("separation"),
        "checkpoint": str(args.out),
    })
    return 0


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------


def _cosine_matrix(a: np.ndarray, b: np.ndarray) -> list[list[float]]:
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    sims = np.clip((a / na) @ (b / nb).T, -1.0, 1.0)
    return [[float(x) for x in row] for row in sims]


def cmd_score(args: argparse.Namespace) -> int:
    for path in (args.checkpoint, args.doc_a, args.doc_b):
        if not Path(path).is_file():
            return _fail(2, f"file not found: {path}")
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        return _fail(1, str(exc))
    cfg = ckpt.config
    params = ckpt.params
    docs = []
    for path in (args.doc_a, args.doc_b):
        path = Path(path)
        try:
            sentences = parse_conllu(path.read_text(encoding="utf-8"))
        except ParseError as exc:
            return _fail(1, f"{path.name}: {exc}")
        docs.append(build_document(
            path.stem, sentences, params.tables, cfg.relation_table_rows, min_freq=cfg.min_freq,
        ))
    doc_a, doc_b = docs
    logger.debug("scoring %s (%d nodes) against %s (%d nodes)",
                 doc_a.doc_id, doc_a.syntactic.node_count,
                 doc_b.doc_id, doc_b.syntactic.node_count)
    enc_a = encode_document(doc_a, params, mode="eval")
    enc_b = encode_document(doc_b, params, mode="eval")
    similarity = T.cosine(enc_a.z, enc_b.z).item()
    threshold = cfg.threshold if args.threshold is None else args.threshold
    report: dict = {
        "doc_a": doc_a.doc_id,
        "doc_b": doc_b.doc_id,
        "similarity": similarity,
        "predicted": 1 if similarity > threshold else 0,
        "threshold": threshold,
    }
    if args.matrix:
        report["node_similarity"] = _cosine_matrix(enc_a.H_F.data, enc_b.H_F.data)
    if args.attn:
        report["attention"] = {
            "a": {"alpha": enc_a.alpha.data.tolist(), "beta": enc_a.beta.data.tolist()},
            "b": {"alpha": enc_b.alpha.data.tolist(), "beta": enc_b.beta.data.tolist()},
        }
    _emit(report)
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

_GRADCHECK_DOCS = {
    "alpha": (
        "1\tmela\tmela\tNOUN\t_\t_\t2\tnsubj\t_\t_\n"
        "2\tdovu\tdovu\tVERB\t_\t_\t0\troot\t_\t_\n"
        "3\trani\trani\tNOUN\t_\t_\t2\tobj\t_\t_\n"
        "\n"
        "1\trani\trani\tNOUN\t_\t_\t2\tnsubj\t_\t_\n"
        "2\tdovu\tdovu\tVERB\t_\t_\t0\troot\t_\t_\n"
    ),
    "bravo": (
        "1\trani\trani\tNOUN\t_\t_\t2\tnsubj\t_\t_\n"
        "2\tdovu\tdovu\tVERB\t_\t_\t0\troot\t_\t_\n"
        "3\tmela\tmela\tNOUN\t_\t_\t2\tobj\t_\t_\n"
        "\n"
        "1\tmela\tmela\tNOUN\t_\t_\t2\tnsubj\t_\t_\n"
        "2\tdovu\tdovu\tVERB\t_\t_\t0\troot\t_\t_\n"
    ),
    "carol": (
        "1\tsefo\tsefo\tNOUN\t_\t_\t2\tnsubj\t_\t_\n"
        "2\tgani\tgani\tVERB\t_\t_\t0\troot\t_\t_\n"
        "3\tlupo\tlupo\tNOUN\t_\t_\t2\tobj\t_\t_\n"
        "\n"
        "1\tlupo\tlupo\tNOUN\t_\t_\t2\tnsubj\t_\t_\n"
        "2\tgani\tgani\tVERB\t_\t_\t0\troot\t_\t_\n"
    ),
    "delta": (
        "1\tlupo\tlupo\tNOUN\t_\t_\t2\tnsubj\t_\t_\n"
        "2\tgani\tgani\tVERB\t_\t_\t0\troot\t_\t_\n"
        "3\tsefo\tsefo\tNOUN\t_\t_\t2\tobj\t_\t_\n"
        "\n"
        "1\tsefo\tsefo\tNOUN\t_\t_\t2\tnsubj\t_\t_\n"
        "2\tgani\tgani\tVERB\t_\t_\t0\troot\t_\t_\n"
    ),
}


def gradcheck_fixture() -> tuple[Corpus, ModelParams, TrainConfig]:
    """A tiny deterministic two-pair setup exercising every parameter block."""
    cfg = TrainConfig(
        d=6, d_tok=4, d_pos=3, d_type=3, layers=1,
        token_table_rows=12, max_positions=8, relation_table_rows=6,
        dropout=0.0, batch_size=2, epochs=1, min_freq=1, seed=7,
    )
    params = ModelParams(cfg)
    documents = {
        doc_id: build_document(
            doc_id, parse_conllu(text), params.tables,
            cfg.relation_table_rows, min_freq=cfg.min_freq,
        )
        for doc_id, text in _GRADCHECK_DOCS.items()
    }
    pairs = [
        PairExample("alpha", "bravo", 1),
        PairExample("carol", "delta", 1),
    ]
    return Corpus(documents=documents, pairs=pairs), params, cfg


@dataclass
class BlockReport:
    name: str
    max_rel_error: float
    checked: int
    failed: int
    failures: list[tuple[tuple[int, ...], float, float, float]] = field(default_factory=list)


def model_gradcheck(h: float = 1e-5, tol: float = 1e-4) -> list[BlockReport]:
    """Central-difference check of the composite loss gradient, per block.

    Hard negatives are mined once up front and frozen so the discrete
    selection cannot flip while coordinates are perturbed.
    """
    corpus, params, cfg = gradcheck_fixture()
    keys = positive_pair_keys(corpus.pairs)

    encoded = {
        doc_id: encode_document(doc, params, mode="eval")
        for doc_id, doc in corpus.documents.items()
    }
    doc_ids = list(corpus.documents)
    frozen: dict[tuple[str, str], list[str]] = {}
    contrast = cfg.contrast()
    for pair in corpus.pairs:
        pool_ids = [i for i in doc_ids if i not in (pair.doc_a, pair.doc_b)]
        entries = [
            (encoded[i].z, 1 if frozenset((pair.doc_a, i)) in keys else 0)
            for i in pool_ids
        ]
        picked = mine_hard_negatives(encoded[pair.doc_a].z, entries, contrast.gamma, contrast.top_k)
        frozen[(pair.doc_a, pair.doc_b)] = [pool_ids[i] for i in picked]

    def loss_value() -> float:
        loss = batch_loss(
            corpus, corpus.pairs, params, cfg,
            training=False, positive_keys=keys, frozen_negatives=frozen,
        )
        return loss.item()

    params.zero_grad()
    with Tape():
        loss = batch_loss(
            corpus, corpus.pairs, params, cfg,
            training=False, positive_keys=keys, frozen_negatives=frozen,
        )
        backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.named_parameters()}

    reports: list[BlockReport] = []
    for name, p in params.named_parameters():
        max_rel = 0.0
        failures: list[tuple[tuple[int, ...], float, float, float]] = []
        for idx in np.ndindex(p.data.shape):
            orig = p.data[idx]
            p.data[idx] = orig + h
            fp = loss_value()
            p.data[idx] = orig - h
            fm = loss_value()
            p.data[idx] = orig
            numeric = (fp - fm) / (2.0 * h)
            ana = float(analytic[name][idx])
            denom = max(abs(ana), abs(numeric), 1e-8)
            rel = abs(ana - numeric) / denom
            max_rel = max(max_rel, rel)
            if rel >= tol:
                failures.append((idx, ana, numeric, rel))
        reports.append(BlockReport(
            name=name, max_rel_error=max_rel,
            checked=int(p.data.size), failed=len(failures), failures=failures,
        ))
    return reports


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.inject_bug:
        T._grad_corruption[args.inject_bug] = 1.01
        print(f"injected gradient corruption into op '{args.inject_bug}'", file=sys.stderr)
    try:
        reports = model_gradcheck()
    finally:
        T._grad_corruption.clear()
    passed = True
    for report in reports:
        _emit({
            "block": report.name,
            "max_rel_error": report.max_rel_error,
            "checked": report.checked,
            "failed": report.failed,
        })
        if report.failed:
            passed = False
            worst = report.failures[0]
            print(
                f"gradcheck failure in block {report.name} at {worst[0]}: "
                f"analytic {worst[1]:.6g} vs numeric {worst[2]:.6g}",
                file=sys.stderr,
            )
    _emit({"event": "gradcheck", "passed": passed})
    return 0 if passed else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="structcoh", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_inspect = sub.add_parser("inspect", help="summarize a corpus directory")
    p_inspect.add_argument("corpus")
    p_inspect.add_argument("--config", default=None)
    p_inspect.set_defaults(func=cmd_inspect)

    p_train = sub.add_parser("train", help="train and write the best checkpoint")
    p_train.add_argument("corpus")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_score = sub.add_parser("score", help="score a document pair")
    p_score.add_argument("checkpoint")
    p_score.add_argument("doc_a")
    p_score.add_argument("doc_b")
    p_score.add_argument("--matrix", action="store_true")
    p_score.add_argument("--attn", action="store_true")
    p_score.add_argument("--threshold", type=float, default=None)
    p_score.set_defaults(func=cmd_score)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p_grad.add_argument("--inject-bug", default=None, metavar="OP",
                        help="testing aid: corrupt the named op's backward rule")
    p_grad.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
