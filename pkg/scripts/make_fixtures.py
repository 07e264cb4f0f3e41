"""Regenerate the bundled synthetic fixture set under fixtures/.

Deterministic: running it twice produces byte-identical files. The toy
tokenizer merges a handful of common words into single tokens (with and
without the word-start marker) and leaves everything else char-level, so
some natural words split and some do not.
"""
from __future__ import annotations

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from tokpen.embed import save_embeddings
from tokpen.logprob import save_logprob_file, LogProbSequence
from tokpen.tokenizer import MergeTable, Vocabulary, encode

OUT = os.path.join(os.path.dirname(__file__), "..", "fixtures")
MARKER = "▁"

# order matters: a later word's first merge pair must not be outranked by
# an inner pair contributed earlier ("ran" must precede "and", or the
# lower-rank (a, n) rule fires first and strands the "r")
MERGED_WORDS = ["the", "ran", "and", "cat", "dog", "sat", "on", "mat", "big", "red"]
# words that stay char-level and therefore split
HARD_WORDS = ["ostrich", "bury", "quartz", "fjord", "waltz", "nymph", "vexing"]


def build_tokenizer() -> tuple[list[str], list[tuple[str, str]]]:
    tokens = [chr(c) for c in range(32, 127)]  # printable ASCII incl. space
    tokens.append(MARKER)
    merges: list[tuple[str, str]] = []
    seen = set(tokens)

    def add_token(t: str):
        if t not in seen:
            seen.add(t)
            tokens.append(t)

    for word in MERGED_WORDS:
        prefix = word[0]
        for ch in word[1:]:
            pair = (prefix, ch)
            if pair not in merges:
                merges.append(pair)
            prefix += ch
            add_token(prefix)
        pair = (MARKER, word)
        if pair not in merges:
            merges.append(pair)
        add_token(MARKER + word)
    return tokens, merges


def main() -> None:
    os.makedirs(OUT, exist_ok=True)
    tokens, merges = build_tokenizer()

    with open(os.path.join(OUT, "vocab.jsonl"), "w", encoding="utf-8") as fh:
        for i, tok in enumerate(tokens):
            fh.write(json.dumps({"id": i, "token": tok}, ensure_ascii=False) + "\n")
    with open(os.path.join(OUT, "merges.txt"), "w", encoding="utf-8") as fh:
        for left, right in merges:
            fh.write(f"{left} {right}\n")

    vocab = Vocabulary(tokens=tuple(tokens), boundary_marker=MARKER)
    table = MergeTable(merges=tuple(merges))
    for word in MERGED_WORDS:
        assert len(encode(word, vocab, table)) == 1, word
        assert len(encode(" " + word, vocab, table)) == 1, word

    rng = np.random.default_rng(20240817)
    dim = 16
    emb = rng.normal(0.0, 1.0, size=(len(tokens), dim)).astype(np.float32)
    save_embeddings(os.path.join(OUT, "embeddings.tpemb"), emb)

    # rarely-used punctuation tokens double as the "unused" set
    unused_ids = [tokens.index(ch) for ch in ["~", "`", "^", "|", "\\"]]
    with open(os.path.join(OUT, "unused.json"), "w", encoding="utf-8") as fh:
        json.dump(unused_ids, fh)
        fh.write("\n")

    # dataset: sentences mixing merged (1-token) and hard (split) words;
    # correctness anti-correlates with the number of hard words
    records = []
    sequences = {}
    pool_easy = MERGED_WORDS
    pool_hard = HARD_WORDS
    for i in range(48):
        n_hard = int(rng.integers(0, 4))
        n_easy = int(rng.integers(2, 6))
        words = list(rng.choice(pool_easy, size=n_easy))
        words += list(rng.choice(pool_hard, size=n_hard))
        rng.shuffle(words)
        text = " ".join(words) + "."
        p_correct = 0.9 - 0.25 * n_hard
        correct = bool(rng.random() < p_correct)
        rec_id = f"inst-{i:03d}"
        records.append({"id": rec_id, "text": text, "correct": correct})

        spans = encode(text, vocab, table)
        ids = [s.token_id for s in spans]
        lps = [None] + [float(-abs(rng.normal(0.6, 0.4))) for _ in ids[1:]]
        sequences[rec_id] = LogProbSequence(token_ids=tuple(ids), logprobs=tuple(lps))

    # one annotated instance exercising the external words/POS path
    annotated_text = "the dog ran fast."
    records.append({
        "id": "inst-annotated",
        "text": annotated_text,
        "correct": True,
        "words": [
            {"text": "the", "start": 0, "end": 3, "pos": "DET"},
            {"text": "dog", "start": 4, "end": 7, "pos": "NOUN"},
            {"text": "ran", "start": 8, "end": 11, "pos": "VERB"},
            {"text": "fast", "start": 12, "end": 16, "pos": "ADV"},
        ],
    })
    spans = encode(annotated_text, vocab, table)
    ids = [s.token_id for s in spans]
    sequences["inst-annotated"] = LogProbSequence(
        token_ids=tuple(ids),
        logprobs=tuple([None] + [-0.5] * (len(ids) - 1)),
    )

    with open(os.path.join(OUT, "dataset.jsonl"), "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    save_logprob_file(os.path.join(OUT, "logprobs.jsonl"), sequences)

    with open(os.path.join(OUT, "config.toml"), "w", encoding="utf-8") as fh:
        fh.write(
            '# Fixture pipeline config; run from the repository root.\n'
            '[paths]\n'
            'dataset = "fixtures/dataset.jsonl"\n'
            'vocab = "fixtures/vocab.jsonl"\n'
            'merges = "fixtures/merges.txt"\n'
            'embeddings = "fixtures/embeddings.tpemb"\n'
            'unused = "fixtures/unused.json"\n'
            'logprobs = "fixtures/logprobs.jsonl"\n'
            '\n'
            '[iforest]\n'
            'psi = 64\n'
            'trees = 50\n'
            '\n'
            '[run]\n'
            'dataset_name = "fixture"\n'
            'model_name = "toy"\n'
            'output_dir = "out"\n'
            'seed = 7\n'
        )
    print(f"fixtures written to {os.path.abspath(OUT)}")


if __name__ == "__main__":
    main()
