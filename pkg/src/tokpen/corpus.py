"""Dataset ingestion and natural-word segmentation.

A "natural word" is a maximal run of ASCII letters (``[A-Za-z]+``).
Digits, punctuation, whitespace and non-ASCII letters never belong to a
natural word; hyphenated forms like "x-ray" therefore split into two
words. All offsets are UTF-8 byte offsets into the instance text.

Datasets are JSON-lines, one instance per line:
    {"id": str, "text": str, "correct": bool,
     "words": [{"text","start","end","pos"}, ...]?,   # optional annotation
     "logprob_ref": str?}
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Optional

from .errors import AssetError

NATURAL_WORD_RE = re.compile(r"^[A-Za-z]+$")
_ALPHA_RUN = re.compile(rb"[A-Za-z]+")

# Universal POS tag inventory (17 tags).
UPOS_TAGS = frozenset({
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM",
    "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X",
})


@dataclass(frozen=True)
class NaturalWord:
    text: str
    start: int  # byte offset, inclusive
    end: int    # byte offset, exclusive
    pos: Optional[str] = None


@dataclass(frozen=True)
class InstanceRecord:
    id: str
    text: str
    correct: bool
    words: Optional[tuple[NaturalWord, ...]] = None
    logprob_ref: Optional[str] = None


def segment_words(text: str) -> list[NaturalWord]:
    """Return maximal ASCII-alphabetic runs with their byte offsets."""
    data = text.encode("utf-8")
    return [
        NaturalWord(text=m.group().decode("ascii"), start=m.start(), end=m.end())
        for m in _ALPHA_RUN.finditer(data)
    ]


def _parse_word(obj: dict, line_no: int) -> NaturalWord:
    try:
        pos = obj.get("pos")
        if pos is not None and pos not in UPOS_TAGS:
            raise AssetError(f"line {line_no}: unknown POS tag {pos!r}")
        return NaturalWord(
            text=obj["text"], start=int(obj["start"]), end=int(obj["end"]), pos=pos
        )
    except KeyError as exc:
        raise AssetError(f"line {line_no}: word annotation missing key {exc}") from exc


def load_dataset(path: str) -> list[InstanceRecord]:
    """Load a JSON-lines dataset, preserving file order.

    Raises AssetError naming the offending line on malformed input, and
    naming the id on duplicates.
    """
    records: list[InstanceRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AssetError(f"{path}: malformed JSON on line {line_no}: {exc}") from exc
            try:
                rec_id = obj["id"]
                text = obj["text"]
                correct = obj["correct"]
            except KeyError as exc:
                raise AssetError(f"{path}: line {line_no} missing required key {exc}") from exc
            if not isinstance(rec_id, str) or not isinstance(text, str) or not isinstance(correct, bool):
                raise AssetError(f"{path}: line {line_no} has wrongly typed id/text/correct")
            if rec_id in seen:
                raise AssetError(f"{path}: duplicate instance id {rec_id!r}")
            seen.add(rec_id)
            words = None
            if obj.get("words") is not None:
                words = tuple(_parse_word(w, line_no) for w in obj["words"])
            records.append(InstanceRecord(
                id=rec_id, text=text, correct=correct, words=words,
                logprob_ref=obj.get("logprob_ref"),
            ))
    return records


def effective_words(record: InstanceRecord) -> list[NaturalWord]:
    """Words to score for this instance.

    External annotations, when present, are filtered down to valid natural
    words (their POS tags pass through). Otherwise the built-in segmenter
    runs over the instance text.
    """
    if record.words is None:
        return segment_words(record.text)
    data = record.text.encode("utf-8")
    out: list[NaturalWord] = []
    for word in record.words:
        if word.start < 0 or word.end > len(data) or word.start >= word.end:
            raise AssetError(
                f"instance {record.id!r}: word {word.text!r} offsets "
                f"[{word.start},{word.end}) fall outside the text"
            )
        if data[word.start:word.end].decode("utf-8", errors="replace") != word.text:
            raise AssetError(
                f"instance {record.id!r}: annotation text {word.text!r} does not "
                f"match the slice at [{word.start},{word.end})"
            )
        if NATURAL_WORD_RE.match(word.text):
            out.append(word)
    out.sort(key=lambda w: w.start)
    for prev, cur in zip(out, out[1:]):
        if cur.start < prev.end:
            raise AssetError(
                f"instance {record.id!r}: overlapping word annotations "
                f"{prev.text!r} and {cur.text!r}"
            )
    return out
