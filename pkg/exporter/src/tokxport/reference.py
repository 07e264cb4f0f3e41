"""Independent replay of the consumer's BPE inference rules, used to
verify that the model tokenizer's output is what the analysis pipeline
will reconstruct from the exported vocab/merges files.

Rules (mirroring the consumer):
* pretokens are maximal non-whitespace runs;
* a pretoken immediately preceded by a single space starts with the
  boundary marker, which stands for that space; a pretoken at text start
  or after tab/newline has no marker; other whitespace characters are
  standalone single-character tokens;
* within a pretoken, repeatedly merge the adjacent pair with the lowest
  merge rank (leftmost on a tie) until no rule applies.

ASCII only: the exporter rejects non-ASCII instances rather than guessing
at byte-fallback conventions.
"""
from __future__ import annotations

from typing import Sequence


class ReferenceMismatch(Exception):
    def __init__(self, position: int, detail: str):
        super().__init__(f"position {position}: {detail}")
        self.position = position


def reference_encode(
    text: str,
    vocab: dict[str, int],
    merges: Sequence[tuple[str, str]],
    marker: str = "Ġ",
) -> list[int]:
    if not text.isascii():
        bad = next(i for i, ch in enumerate(text) if not ch.isascii())
        raise ReferenceMismatch(bad, f"non-ASCII character {text[bad]!r}")
    rank = {pair: r for r, pair in enumerate(merges)}
    groups: list[list[str]] = []
    chars = list(text)
    i, n = 0, len(chars)
    while i < n:
        ch = chars[i]
        if ch.isspace():
            if ch == " " and i + 1 < n and not chars[i + 1].isspace():
                j = i + 1
                while j < n and not chars[j].isspace():
                    j += 1
                groups.append([marker] + chars[i + 1:j])
                i = j
            else:
                groups.append([ch])
                i += 1
        else:
            j = i
            while j < n and not chars[j].isspace():
                j += 1
            groups.append(chars[i:j])
            i = j

    ids: list[int] = []
    pos = 0
    for group in groups:
        while True:
            best = None
            for k in range(len(group) - 1):
                r = rank.get((group[k], group[k + 1]))
                if r is not None and (best is None or r < best[0]):
                    best = (r, k)
            if best is None:
                break
            _, k = best
            group[k:k + 2] = [group[k] + group[k + 1]]
        for sym in group:
            if sym not in vocab:
                raise ReferenceMismatch(pos, f"symbol {sym!r} not in the exported vocabulary")
            ids.append(vocab[sym])
            pos += 1
    return ids


def first_divergence(expected: Sequence[int], got: Sequence[int]) -> int:
    for i in range(min(len(expected), len(got))):
        if expected[i] != got[i]:
            return i
    return min(len(expected), len(got))
