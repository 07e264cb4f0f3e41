"""Per-word tokenization penalties and per-instance aggregates.

Only split words (k >= 2 tokens) incur a penalty; a text in which every
natural word maps to one token scores zero under every function and
aggregation. Four functions:

* AS — mean normalized isolation-forest anomaly score of the word's tokens.
* UT — mean cosine *similarity* of the word's tokens to the mean unused-token
  embedding (under-trained tokens sit near that centroid). Range [-1, 1],
  deliberately unclamped.
* PD — mean cosine distance between consecutive tokens of the word.
* CP — POS-weighted mean improbability of the word's tokens given their
  left context: (wt/k) * sum(1 - p_i). Weight 2 for VERB/NOUN/ADJ/ADV,
  else 1.

Aggregations over a text: sum, avg, max, top_K (mean of the K largest).
Baselines: B1 = total token count, B2 = split-word count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .corpus import InstanceRecord, effective_words
from .embed import EmbeddingMatrix, UnusedTokenSet, cosine_distance
from .errors import AssetError, ConfigError
from .iforest import AnomalyScores
from .logprob import LogProbSequence, clamp_probability, probability_at
from .tokenizer import MergeTable, TokenSpan, Vocabulary, WordTokenization, align, encode

PENALTY_FUNCTIONS = ("AS", "UT", "PD", "CP")
AGGREGATIONS = ("sum", "avg", "max", "top_k")
CONTENT_POS = frozenset({"VERB", "NOUN", "ADJ", "ADV"})


@dataclass(frozen=True)
class PenaltyConfig:
    functions: tuple[str, ...] = PENALTY_FUNCTIONS
    aggregations: tuple[str, ...] = AGGREGATIONS
    top_k: int = 3
    pos_weights: bool = True
    first_token_policy: str = "zero"  # "zero" | "skip"
    use_raw_anomaly: bool = False

    def __post_init__(self):
        for fn in self.functions:
            if fn not in PENALTY_FUNCTIONS:
                raise ConfigError(f"unknown penalty function {fn!r}")
        for agg in self.aggregations:
            if agg not in AGGREGATIONS:
                raise ConfigError(f"unknown aggregation {agg!r}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")

    def column(self, agg: str) -> str:
        return f"top{self.top_k}" if agg == "top_k" else agg


@dataclass(frozen=True)
class WordPenalty:
    word_tok: WordTokenization
    values: dict[str, float]
    pos_weight: int


@dataclass(frozen=True)
class InstancePenalties:
    instance_id: str
    correct: bool
    word_penalties: tuple[WordPenalty, ...]
    aggregates: dict[str, float]  # e.g. {"AS_sum": ..., "CP_top3": ...}
    b1: int
    b2: int
    perplexity: Optional[float]
    word_token_count: int  # tokens covering natural words (fertility numerator)
    word_count: int        # natural words (fertility denominator)
    omitted: tuple[str, ...] = ()  # functions skipped for missing assets


def pos_importance_weight(pos: Optional[str], enabled: bool = True) -> int:
    if enabled and pos in CONTENT_POS:
        return 2
    return 1


def penalty_as(
    word_tok: WordTokenization,
    scores: Union[AnomalyScores, np.ndarray],
    use_raw: bool = False,
) -> float:
    values = scores.raw if (isinstance(scores, AnomalyScores) and use_raw) else (
        scores.normalized if isinstance(scores, AnomalyScores) else np.asarray(scores)
    )
    total = 0.0
    for span in word_tok.tokens:
        if span.token_id >= len(values):
            raise AssetError(f"no anomaly score for token id {span.token_id}")
        total += float(values[span.token_id])
    return total / word_tok.k


def penalty_ut(
    word_tok: WordTokenization,
    embeddings: EmbeddingMatrix,
    unused: UnusedTokenSet,
) -> float:
    total = 0.0
    for span in word_tok.tokens:
        total += 1.0 - cosine_distance(embeddings.row(span.token_id), unused.mean_vector)
    return total / word_tok.k


def penalty_pd(word_tok: WordTokenization, embeddings: EmbeddingMatrix) -> float:
    spans = word_tok.tokens
    total = 0.0
    for a, b in zip(spans, spans[1:]):
        total += cosine_distance(embeddings.row(a.token_id), embeddings.row(b.token_id))
    return total / (word_tok.k - 1)


def penalty_cp(
    word_tok: WordTokenization,
    seq: LogProbSequence,
    pos_weight: int,
    first_token_policy: str = "zero",
) -> float:
    total = 0.0
    used = 0
    for span in word_tok.tokens:
        if span.position >= len(seq):
            raise AssetError(
                f"token position {span.position} not covered by the logprob "
                f"sequence (length {len(seq)})"
            )
        if seq.token_ids[span.position] != span.token_id:
            raise AssetError(
                f"logprob sequence disagrees with tokenization at position "
                f"{span.position}: id {seq.token_ids[span.position]} vs {span.token_id}"
            )
        p = probability_at(seq, span.position, first_token_policy)
        if p is None:
            continue  # "skip" policy: position has no left context
        total += 1.0 - clamp_probability(p)
        used += 1
    if used == 0:
        return 0.0
    return (pos_weight / used) * total


def aggregate(values: Sequence[float], how: str, k: int = 3) -> float:
    """Aggregate word penalties; an empty list (no split words) is 0."""
    if how not in AGGREGATIONS:
        raise ConfigError(f"unknown aggregation {how!r}")
    if not values:
        return 0.0
    if how == "sum":
        return float(sum(values))
    if how == "avg":
        return float(sum(values) / len(values))
    if how == "max":
        return float(max(values))
    if k < 1:
        raise ConfigError(f"top_k requires K >= 1, got {k}")
    top = sorted(values, reverse=True)[:k]
    return float(sum(top) / len(top))


def baselines(
    instance_tokens: Sequence[TokenSpan],
    word_toks: Sequence[WordTokenization],
) -> tuple[int, int]:
    b1 = len(instance_tokens)
    b2 = sum(1 for wt in word_toks if wt.is_split)
    return b1, b2


def perplexity(seq: LogProbSequence) -> float:
    """exp of the mean negative logprob over all present positions."""
    present = [lp for lp in seq.logprobs if lp is not None]
    if not present:
        raise AssetError("perplexity needs at least one present logprob")
    return math.exp(-sum(present) / len(present))


def score_instance(
    record: InstanceRecord,
    vocab: Vocabulary,
    merges: MergeTable,
    embeddings: Optional[EmbeddingMatrix] = None,
    anomaly_scores: Optional[AnomalyScores] = None,
    unused: Optional[UnusedTokenSet] = None,
    logprob_seq: Optional[LogProbSequence] = None,
    config: PenaltyConfig = PenaltyConfig(),
) -> InstancePenalties:
    """Full per-instance penalty report.

    Functions whose assets are unavailable are omitted (reported in
    ``omitted``) rather than failing the run; genuinely inconsistent
    assets still raise.
    """
    if embeddings is not None and embeddings.rows != vocab.size:
        raise AssetError(
            f"vocabulary has {vocab.size} tokens but embedding matrix has "
            f"{embeddings.rows} rows"
        )
    if anomaly_scores is not None and len(anomaly_scores.raw) != vocab.size:
        raise AssetError(
            f"vocabulary has {vocab.size} tokens but {len(anomaly_scores.raw)} "
            f"anomaly scores are cached"
        )
    words = effective_words(record)
    tokens = encode(record.text, vocab, merges)
    word_toks = align(words, tokens, vocab)
    split = [wt for wt in word_toks if wt.is_split]

    available = {
        "AS": anomaly_scores is not None,
        "UT": embeddings is not None and unused is not None,
        "PD": embeddings is not None,
        "CP": logprob_seq is not None,
    }
    active = [fn for fn in config.functions if available[fn]]
    omitted = tuple(fn for fn in config.functions if not available[fn])

    word_penalties: list[WordPenalty] = []
    for wt in split:
        weight = pos_importance_weight(wt.word.pos, config.pos_weights)
        values: dict[str, float] = {}
        for fn in active:
            if fn == "AS":
                values[fn] = penalty_as(wt, anomaly_scores, config.use_raw_anomaly)
            elif fn == "UT":
                values[fn] = penalty_ut(wt, embeddings, unused)
            elif fn == "PD":
                values[fn] = penalty_pd(wt, embeddings)
            else:
                values[fn] = penalty_cp(wt, logprob_seq, weight, config.first_token_policy)
        word_penalties.append(WordPenalty(word_tok=wt, values=values, pos_weight=weight))

    aggregates: dict[str, float] = {}
    for fn in active:
        per_word = [wp.values[fn] for wp in word_penalties]
        for agg in config.aggregations:
            aggregates[f"{fn}_{config.column(agg)}"] = aggregate(per_word, agg, config.top_k)

    b1, b2 = baselines(tokens, word_toks)
    ppl = None
    if logprob_seq is not None:
        if tuple(t.token_id for t in tokens) != logprob_seq.token_ids:
            raise AssetError(
                f"instance {record.id!r}: logprob sequence token ids do not match "
                f"the instance tokenization"
            )
        ppl = perplexity(logprob_seq)

    return InstancePenalties(
        instance_id=record.id,
        correct=record.correct,
        word_penalties=tuple(word_penalties),
        aggregates=aggregates,
        b1=b1,
        b2=b2,
        perplexity=ppl,
        word_token_count=sum(wt.k for wt in word_toks),
        word_count=len(word_toks),
        omitted=omitted,
    )
