"""Deterministic synthetic corpus: paraphrase pairs built by construction.

Every document mixes a large shared vocabulary (global nouns, verbs,
adjectives, and the determiner) with two theme nouns and a few one-off noise
words. A theme yields two documents over the same theme lemmas through
reshuffled slots and sentence order, giving one positive pair; negative
pairs cross neighboring themes, so they share everything except the theme
nouns. The output is plain CoNLL-U plus pairs.jsonl.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_CONSONANTS = "bdfglmnprstvz"
_VOWELS = "aeiou"

# per document: how often each theme noun is mentioned, how many unique
# noise nouns appear, and how many distinct global nouns exist corpus-wide
_THEME_MENTIONS = (0, 0, 1, 1)
_NOISE_PER_DOC = 3
_GLOBAL_NOUNS = 4
_NOUN_SLOTS = 11

Row = tuple[str, str, int, str]  # form/lemma, upos, head, deprel


def _pseudoword(rng: np.random.Generator, used: set[str]) -> str:
    while True:
        n_syll = int(rng.integers(2, 4))
        word = "".join(
            _CONSONANTS[int(rng.integers(len(_CONSONANTS)))]
            + _VOWELS[int(rng.integers(len(_VOWELS)))]
            for _ in range(n_syll)
        )
        if word != "the" and word not in used:
            used.add(word)
            return word


def _t_det_nsubj_v_det_obj(n1: str, v: str, n2: str) -> list[Row]:
    return [
        ("the", "DET", 2, "det"), (n1, "NOUN", 3, "nsubj"), (v, "VERB", 0, "root"),
        ("the", "DET", 5, "det"), (n2, "NOUN", 3, "obj"),
    ]


def _t_nsubj_v_amod_obj(n1: str, v: str, adj: str, n2: str) -> list[Row]:
    return [
        (n1, "NOUN", 2, "nsubj"), (v, "VERB", 0, "root"),
        (adj, "ADJ", 4, "amod"), (n2, "NOUN", 2, "obj"),
    ]


def _t_det_amod_nsubj_v(adj: str, n: str, v: str) -> list[Row]:
    return [
        ("the", "DET", 3, "det"), (adj, "ADJ", 3, "amod"),
        (n, "NOUN", 4, "nsubj"), (v, "VERB", 0, "root"),
    ]


def _t_nsubj_v_det_obj(n1: str, v: str, n2: str) -> list[Row]:
    return [
        (n1, "NOUN", 2, "nsubj"), (v, "VERB", 0, "root"),
        ("the", "DET", 4, "det"), (n2, "NOUN", 2, "obj"),
    ]


def _render(doc_id: str, sentences: list[list[Row]]) -> str:
    blocks = [f"# doc_id = {doc_id}"]
    for rows in sentences:
        lines = [
            f"{i}\t{form}\t{form}\t{upos}\t_\t_\t{head}\t{rel}\t_\t_"
            for i, (form, upos, head, rel) in enumerate(rows, start=1)
        ]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def _build_document(
    rng: np.random.Generator,
    theme: list[str],
    global_nouns: list[str],
    verbs: list[str],
    adjectives: list[str],
    used: set[str],
) -> list[list[Row]]:
    noise = [_pseudoword(rng, used) for _ in range(_NOISE_PER_DOC)]
    fill = _NOUN_SLOTS - len(_THEME_MENTIONS) - _NOISE_PER_DOC
    nouns = (
        [theme[i] for i in _THEME_MENTIONS]
        + [global_nouns[int(rng.integers(len(global_nouns)))] for _ in range(fill)]
        + noise
    )
    verb_slots = [verbs[0], verbs[0], verbs[1], verbs[1], verbs[2], verbs[2]]
    adj_slots = list(adjectives)
    rng.shuffle(nouns)
    rng.shuffle(verb_slots)
    rng.shuffle(adj_slots)
    n, v, a = nouns, verb_slots, adj_slots
    sentences = [
        _t_det_nsubj_v_det_obj(n[0], v[0], n[1]),
        _t_nsubj_v_amod_obj(n[2], v[1], a[0], n[3]),
        _t_nsubj_v_det_obj(n[4], v[2], n[5]),
        _t_det_nsubj_v_det_obj(n[6], v[3], n[7]),
        _t_det_amod_nsubj_v(a[1], n[8], v[4]),
        _t_nsubj_v_det_obj(n[9], v[5], n[10]),
    ]
    order = rng.permutation(len(sentences))
    return [sentences[i] for i in order]


def generate_corpus(directory: str | Path, seed: int = 42, themes: int = 20) -> list[str]:
    """Write the corpus; returns the generated document ids.

    themes positive pairs (the two documents of one theme) and the same
    number of negative pairs (one theme's first document against the next
    theme's second).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    used: set[str] = set()
    global_nouns = [_pseudoword(rng, used) for _ in range(_GLOBAL_NOUNS)]
    verbs = [_pseudoword(rng, used) for _ in range(3)]
    adjectives = [_pseudoword(rng, used) for _ in range(2)]

    doc_ids: list[str] = []
    pairs: list[dict] = []
    for t in range(themes):
        theme = [_pseudoword(rng, used), _pseudoword(rng, used)]
        for suffix in "ab":
            doc_id = f"theme{t:02d}{suffix}"
            sentences = _build_document(rng, theme, global_nouns, verbs, adjectives, used)
            (directory / f"{doc_id}.conllu").write_text(_render(doc_id, sentences), encoding="utf-8")
            doc_ids.append(doc_id)
        pairs.append({"a": f"theme{t:02d}a", "b": f"theme{t:02d}b", "label": 1})
    for t in range(themes):
        other = (t + 1) % themes
        pairs.append({"a": f"theme{t:02d}a", "b": f"theme{other:02d}b", "label": 0})
    lines = [json.dumps(p) for p in pairs]
    (directory / "pairs.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return doc_ids


if __name__ == "__main__":
    import sys

    target = sys.argv[1] if len(sys.argv) > 1 else "data/synthetic"
    ids = generate_corpus(target)
    print(f"wrote {len(ids)} documents to {target}")
