"""Writers for the consumer's file formats.

All formats are defined by the analysis pipeline that reads them:

* vocab JSONL: one ``{"id": int, "token": str}`` per line, ids dense from 0
* merges: one ``LEFT RIGHT`` pair per line, rank = 0-based line number
* TPEMB1: magic ``b"TPEMB1\\n"``, uint32-LE rows, uint32-LE dim, then
  rows*dim little-endian float32 values, row-major
* logprob JSONL: ``{"id": str, "token_ids": [int], "logprobs": [float|null]}``
  with null permitted only at position 0
* unused-token list: a JSON array of token ids

Writes are atomic: content goes to a temp file in the target directory and
is renamed into place.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from typing import Optional, Sequence

import numpy as np

TPEMB_MAGIC = b"TPEMB1\n"


def atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tokxport-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_vocab(path: str, tokens: Sequence[str]) -> None:
    lines = [
        json.dumps({"id": i, "token": t}, ensure_ascii=False)
        for i, t in enumerate(tokens)
    ]
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def write_merges(path: str, merges: Sequence[tuple[str, str]]) -> None:
    lines = [f"{left} {right}" for left, right in merges]
    atomic_write(path, ("\n".join(lines) + "\n" if lines else "").encode("utf-8"))


def write_tpemb(path: str, matrix: np.ndarray) -> None:
    arr = np.ascontiguousarray(matrix, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("embedding matrix must be 2-D")
    blob = TPEMB_MAGIC + struct.pack("<II", arr.shape[0], arr.shape[1]) + arr.tobytes()
    atomic_write(path, blob)


def write_unused(path: str, ids: Sequence[int]) -> None:
    atomic_write(path, (json.dumps(sorted(int(i) for i in ids)) + "\n").encode("utf-8"))


def write_logprobs(
    path: str,
    sequences: Sequence[tuple[str, Sequence[int], Sequence[Optional[float]]]],
) -> None:
    lines = []
    for seq_id, token_ids, logprobs in sequences:
        if len(token_ids) != len(logprobs):
            raise ValueError(f"{seq_id}: token/logprob length mismatch")
        for i, lp in enumerate(logprobs):
            if lp is None and i != 0:
                raise ValueError(f"{seq_id}: null logprob at position {i}")
            if lp is not None and lp > 0:
                raise ValueError(f"{seq_id}: positive logprob at position {i}")
        lines.append(json.dumps({
            "id": seq_id,
            "token_ids": [int(t) for t in token_ids],
            "logprobs": [None if lp is None else float(lp) for lp in logprobs],
        }))
    atomic_write(path, ("\n".join(lines) + "\n" if lines else "").encode("utf-8"))


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
