"""BPE tokenizer: vocabulary/merge loading, encoding with byte offsets,
and alignment of tokens to natural words.

Encoding semantics (fixed here, since BPE training only defines the merge
order, not inference):

* The text is pre-tokenized into maximal non-whitespace runs. Merges are
  replayed within each run independently, by ascending rank; a rule is
  applied left-to-right until it no longer matches before moving to the
  next rank. This is equivalent to repeatedly merging the lowest-rank
  adjacent pair (leftmost on equal rank).
* A run immediately preceded by a single space ``' '`` starts with the
  boundary-marker symbol, and that marker *is* the space: its span covers
  the space byte, and decoding turns it back into ``' '``. A run at the
  start of the text, or after a tab/newline, carries no marker, which is
  what makes ``decode(encode(t)) == t`` hold exactly.
* Whitespace characters not absorbed by a marker become standalone
  single-character tokens and never participate in merges.
* In byte-level mode, a character missing from the vocabulary is broken
  into its UTF-8 bytes, each looked up as a latin-1 single-character token
  string; token strings are interpreted as latin-1 byte sequences when
  decoding.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from .corpus import NaturalWord
from .errors import AssetError


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    boundary_marker: str = "▁"  # "lower one eighth block", SentencePiece-style
    byte_level: bool = False

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __post_init__(self):
        if not self.tokens:
            raise AssetError("vocabulary is empty")
        if len(set(self.tokens)) != len(self.tokens):
            dupe = _first_duplicate(self.tokens)
            raise AssetError(f"duplicate token string {dupe!r} in vocabulary")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def id_of(self, token: str) -> Optional[int]:
        return self._index.get(token)


@dataclass(frozen=True)
class MergeTable:
    merges: tuple[tuple[str, str], ...]  # rank = list position

    def __post_init__(self):
        if len(set(self.merges)) != len(self.merges):
            dupe = _first_duplicate(self.merges)
            raise AssetError(f"duplicate merge pair {dupe!r}")
        object.__setattr__(self, "_rank", {pair: r for r, pair in enumerate(self.merges)})

    def rank_of(self, left: str, right: str) -> Optional[int]:
        return self._rank.get((left, right))


@dataclass(frozen=True)
class TokenSpan:
    token_id: int
    start: int  # byte offset, inclusive
    end: int    # byte offset, exclusive
    position: int  # index in the instance token sequence


@dataclass(frozen=True)
class WordTokenization:
    word: NaturalWord
    tokens: tuple[TokenSpan, ...]

    @property
    def k(self) -> int:
        return len(self.tokens)

    @property
    def is_split(self) -> bool:
        return self.k >= 2


def _first_duplicate(items: Iterable) -> object:
    seen = set()
    for it in items:
        if it in seen:
            return it
        seen.add(it)
    return None


def load_tokenizer(
    vocab_path: str,
    merges_path: str,
    boundary_marker: str = "▁",
    byte_level: bool = False,
) -> tuple[Vocabulary, MergeTable]:
    """Load and cross-validate a vocabulary (JSONL ``{"id","token"}``, ids
    dense from 0) and a merges file (one ``LEFT RIGHT`` pair per line,
    rank = 0-based line number)."""
    entries: dict[int, str] = {}
    with open(vocab_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                tok_id, tok = int(obj["id"]), obj["token"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise AssetError(f"{vocab_path}: bad vocab entry on line {line_no}: {exc}") from exc
            if tok_id in entries:
                raise AssetError(f"{vocab_path}: duplicate token id {tok_id}")
            entries[tok_id] = tok
    if sorted(entries) != list(range(len(entries))):
        raise AssetError(f"{vocab_path}: token ids are not dense in [0, {len(entries)})")
    vocab = Vocabulary(
        tokens=tuple(entries[i] for i in range(len(entries))),
        boundary_marker=boundary_marker,
        byte_level=byte_level,
    )

    merges: list[tuple[str, str]] = []
    with open(merges_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 2:
                raise AssetError(f"{merges_path}: line {line_no} is not 'LEFT RIGHT'")
            merges.append((parts[0], parts[1]))
    table = MergeTable(merges=tuple(merges))
    for left, right in table.merges:
        if vocab.id_of(left + right) is None:
            raise AssetError(
                f"merge ({left!r}, {right!r}) produces {left + right!r} "
                f"which is not in the vocabulary"
            )
    return vocab, table


# ---------------------------------------------------------------------------
# Encoding

@dataclass
class _Symbol:
    text: str
    start: int
    end: int


def _char_symbols(chars: Sequence[tuple[str, int, int]], vocab: Vocabulary) -> list[_Symbol]:
    """Map characters to initial symbols, with byte-level fallback."""
    out: list[_Symbol] = []
    for ch, start, end in chars:
        if vocab.id_of(ch) is not None:
            out.append(_Symbol(ch, start, end))
        elif vocab.byte_level:
            raw = ch.encode("utf-8")
            for i, b in enumerate(raw):
                bs = bytes([b]).decode("latin-1")
                if vocab.id_of(bs) is None:
                    raise AssetError(
                        f"byte 0x{b:02x} at offset {start + i} has no vocabulary entry"
                    )
                out.append(_Symbol(bs, start + i, start + i + 1))
        else:
            raise AssetError(f"symbol {ch!r} at byte offset {start} is not in the vocabulary")
    return out


def _merge_pretoken(symbols: list[_Symbol], merges: MergeTable) -> list[_Symbol]:
    """Repeatedly merge the lowest-rank adjacent pair (leftmost on a rank
    tie) until no merge rule applies. Merging may expose a lower-rank pair,
    so a single rank-ordered pass would not be equivalent."""
    while True:
        best_rank = None
        best_i = -1
        for i in range(len(symbols) - 1):
            rank = merges.rank_of(symbols[i].text, symbols[i + 1].text)
            if rank is not None and (best_rank is None or rank < best_rank):
                best_rank, best_i = rank, i
        if best_rank is None:
            return symbols
        left, right = symbols[best_i], symbols[best_i + 1]
        symbols[best_i] = _Symbol(left.text + right.text, left.start, right.end)
        del symbols[best_i + 1]


def encode(text: str, vocab: Vocabulary, merges: MergeTable) -> list[TokenSpan]:
    """BPE-encode ``text``, returning token spans over UTF-8 byte offsets."""
    marker = vocab.boundary_marker
    # (char, byte_start, byte_end) stream
    chars: list[tuple[str, int, int]] = []
    pos = 0
    for ch in text:
        width = len(ch.encode("utf-8"))
        chars.append((ch, pos, pos + width))
        pos += width

    spans: list[TokenSpan] = []

    def emit(symbols: list[_Symbol]):
        for sym in symbols:
            tok_id = vocab.id_of(sym.text)
            if tok_id is None:
                raise AssetError(
                    f"merged symbol {sym.text!r} at byte offset {sym.start} "
                    f"is not in the vocabulary"
                )
            spans.append(TokenSpan(tok_id, sym.start, sym.end, position=len(spans)))

    i = 0
    n = len(chars)
    while i < n:
        ch, start, end = chars[i]
        if ch.isspace():
            absorbed = (
                ch == " "
                and i + 1 < n
                and not chars[i + 1][0].isspace()
            )
            if not absorbed:
                emit(_char_symbols([chars[i]], vocab))
                i += 1
                continue
            # space absorbed by the next pretoken's marker
            j = i + 1
            while j < n and not chars[j][0].isspace():
                j += 1
            if vocab.id_of(marker) is None:
                raise AssetError(
                    f"boundary marker {marker!r} is required at byte offset {start} "
                    f"but is not in the vocabulary"
                )
            symbols = [_Symbol(marker, start, start + 1)]
            symbols += _char_symbols(chars[i + 1:j], vocab)
            emit(_merge_pretoken(symbols, merges))
            i = j
        else:
            # pretoken with no preceding space: no marker
            j = i
            while j < n and not chars[j][0].isspace():
                j += 1
            symbols = _char_symbols(chars[i:j], vocab)
            emit(_merge_pretoken(symbols, merges))
            i = j
    return spans


def token_bytes(token: str, vocab: Vocabulary) -> bytes:
    """The raw text bytes a vocabulary token stands for."""
    marker = vocab.boundary_marker
    if token.startswith(marker):
        rest = token[len(marker):]
        return b" " + (rest.encode("latin-1") if vocab.byte_level else rest.encode("utf-8"))
    return token.encode("latin-1") if vocab.byte_level else token.encode("utf-8")


def decode(tokens: Sequence[Union[TokenSpan, int]], vocab: Vocabulary) -> str:
    """Inverse of :func:`encode`: token ids (or spans) back to text."""
    out = bytearray()
    for tok in tokens:
        tok_id = tok.token_id if isinstance(tok, TokenSpan) else tok
        if not 0 <= tok_id < vocab.size:
            raise AssetError(f"invalid token id {tok_id} (vocabulary size {vocab.size})")
        out += token_bytes(vocab.tokens[tok_id], vocab)
    return out.decode("utf-8")


# ---------------------------------------------------------------------------
# Word alignment

def _marker_width(span: TokenSpan, vocab: Vocabulary) -> int:
    """Bytes at the front of the span that belong to the boundary marker."""
    return 1 if vocab.tokens[span.token_id].startswith(vocab.boundary_marker) else 0


def align(
    words: Sequence[NaturalWord],
    tokens: Sequence[TokenSpan],
    vocab: Vocabulary,
) -> list[WordTokenization]:
    """Assign to each word every token whose span intersects it.

    The boundary-marker byte (the absorbed space) does not count toward
    intersection; a word is "split" iff at least two tokens intersect it.
    A single token may legitimately belong to several words.
    """
    out: list[WordTokenization] = []
    for word in words:
        covering = tuple(
            span for span in tokens
            if max(span.start + _marker_width(span, vocab), word.start) < min(span.end, word.end)
        )
        if not covering:
            raise AssetError(
                f"word {word.text!r} at [{word.start},{word.end}) is not covered "
                f"by any token; tokens do not encode the same text"
            )
        out.append(WordTokenization(word=word, tokens=covering))
    return out
