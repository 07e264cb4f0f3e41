"""Output-embedding matrix I/O and the vector operations used by the
under-trained-token and pairwise-distance penalties.

File format (TPEMB1, bit-exact): magic ``b"TPEMB1\\n"``, then uint32-LE
row count, uint32-LE dimension, then rows*dim IEEE-754 LE float32 values,
row-major. No padding, no footer.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import AssetError
from .tokenizer import Vocabulary

MAGIC = b"TPEMB1\n"

# Count of cosine-distance calls that hit a zero-norm vector (distance is
# defined as 1 in that case instead of propagating NaN).
zero_norm_events = 0


@dataclass(frozen=True)
class EmbeddingMatrix:
    data: np.ndarray  # float32, shape (rows, dim)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def row(self, token_id: int) -> np.ndarray:
        if not 0 <= token_id < self.rows:
            raise AssetError(f"no embedding row for token id {token_id}")
        return self.data[token_id]


@dataclass(frozen=True)
class UnusedTokenSet:
    ids: frozenset[int]
    mean_vector: np.ndarray  # float64


def load_embeddings(path: str) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise AssetError(f"{path}: bad magic, not a TPEMB1 file")
    header_end = len(MAGIC) + 8
    if len(blob) < header_end:
        raise AssetError(f"{path}: truncated header")
    rows, dim = struct.unpack_from("<II", blob, len(MAGIC))
    if dim < 1:
        raise AssetError(f"{path}: embedding dimension must be >= 1, got {dim}")
    expected = header_end + rows * dim * 4
    if len(blob) != expected:
        raise AssetError(
            f"{path}: truncated payload, expected {expected} bytes, got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=header_end).reshape(rows, dim)
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        r, c = bad[0]
        raise AssetError(f"{path}: non-finite embedding entry at ({r}, {c})")
    return EmbeddingMatrix(data=np.ascontiguousarray(data))


def save_embeddings(path: str, data: np.ndarray) -> None:
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim != 2:
        raise AssetError("embedding matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cos(a, b), clamped to [0, 2]. Zero-norm inputs yield 1
    (maximal uncertainty) and bump the zero_norm_events counter."""
    global zero_norm_events
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    if a64.shape != b64.shape:
        raise AssetError(f"dimension mismatch: {a64.shape} vs {b64.shape}")
    na = np.linalg.norm(a64)
    nb = np.linalg.norm(b64)
    if na == 0.0 or nb == 0.0:
        zero_norm_events += 1
        return 1.0
    dist = 1.0 - float(np.dot(a64, b64)) / (na * nb)
    return min(2.0, max(0.0, dist))


def unused_token_set(
    vocab: Vocabulary,
    embeddings: EmbeddingMatrix,
    declared: Optional[Sequence[int]] = None,
    corpus_ids: Optional[set[int]] = None,
) -> UnusedTokenSet:
    """Mean embedding of the "unused" tokens.

    The primary path is an explicit id list shipped with the model assets;
    the fallback treats every vocabulary id absent from ``corpus_ids`` as
    unused.
    """
    if declared is not None:
        ids = set(int(i) for i in declared)
        for i in ids:
            if not 0 <= i < vocab.size:
                raise AssetError(f"declared unused token id {i} outside vocabulary")
    elif corpus_ids is not None:
        ids = set(range(vocab.size)) - set(corpus_ids)
    else:
        ids = set()
    if not ids:
        raise AssetError(
            "unused-token set is empty; supply an explicit id list "
            "(or a reference corpus that leaves some tokens unused)"
        )
    rows = embeddings.data[sorted(ids)].astype(np.float64)
    return UnusedTokenSet(ids=frozenset(ids), mean_vector=rows.mean(axis=0))
