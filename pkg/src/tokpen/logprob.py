"""Next-token probabilities for instance token sequences.

Two providers: a JSON-lines file of precomputed sequences, and an
OpenAI-style completions endpoint queried with prompt echo + logprobs.

File format: one object per line,
    {"id": str, "token_ids": [int, ...], "logprobs": [float|null, ...]}
Position 0 may be null (no left context). A null may also mean the
sequence was produced without a prompt prefix; reports should record
which conditioning was used.
"""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import requests

from .errors import AssetError, ConfigError, ProviderError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LogProbSequence:
    token_ids: tuple[int, ...]
    logprobs: tuple[Optional[float], ...]  # natural log; None = absent

    def __post_init__(self):
        if len(self.token_ids) != len(self.logprobs):
            raise AssetError(
                f"token_ids length {len(self.token_ids)} != logprobs length {len(self.logprobs)}"
            )
        for i, lp in enumerate(self.logprobs):
            if lp is None:
                if i != 0:
                    raise AssetError(f"absent logprob at position {i}; only position 0 may be absent")
            elif lp > 0:
                raise AssetError(f"positive logprob {lp} at position {i}")

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class ProviderConfig:
    mode: str = "file"  # "file" | "http"
    endpoint: str = ""
    model: str = ""
    auth_env: str = "TOKPEN_API_TOKEN"
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.mode not in ("file", "http"):
            raise ConfigError(f"unknown provider mode {self.mode!r}")
        if self.mode == "http" and (not self.endpoint or not self.model):
            raise ConfigError("http provider requires both endpoint and model")


def load_logprob_file(path: str) -> dict[str, LogProbSequence]:
    out: dict[str, LogProbSequence] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                seq_id = obj["id"]
                token_ids = tuple(int(t) for t in obj["token_ids"])
                logprobs = tuple(
                    None if lp is None else float(lp) for lp in obj["logprobs"]
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise AssetError(f"{path}: bad logprob entry on line {line_no}: {exc}") from exc
            if seq_id in out:
                raise AssetError(f"{path}: duplicate sequence id {seq_id!r}")
            try:
                out[seq_id] = LogProbSequence(token_ids=token_ids, logprobs=logprobs)
            except AssetError as exc:
                raise AssetError(f"{path}: line {line_no}: {exc}") from exc
    return out


def save_logprob_file(path: str, sequences: dict[str, LogProbSequence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq_id, seq in sequences.items():
            fh.write(json.dumps({
                "id": seq_id,
                "token_ids": list(seq.token_ids),
                "logprobs": list(seq.logprobs),
            }) + "\n")


def fetch_logprobs(
    cfg: ProviderConfig,
    text: str,
    expected_token_ids: Sequence[int],
    session=None,
) -> LogProbSequence:
    """Fetch echo logprobs for ``text`` and verify the provider tokenized
    it exactly as ``expected_token_ids``; mismatch is an error, never a
    silent realignment. Transport/5xx failures retry with exponential
    backoff up to ``max_retries``."""
    if cfg.mode != "http":
        raise ConfigError("fetch_logprobs requires an http provider configuration")
    if session is None:
        session = requests.Session()
    headers = {}
    token = os.environ.get(cfg.auth_env, "")
    if token:
        headers["Authorization"] = f"Bearer {token}"
    payload = {
        "model": cfg.model,
        "prompt": text,
        "max_tokens": 0,
        "echo": True,
        "logprobs": 1,
    }
    url = cfg.endpoint.rstrip("/") + "/completions"

    last_err: Optional[str] = None
    for attempt in range(cfg.max_retries + 1):
        if attempt:
            time.sleep(cfg.backoff_base * 2 ** (attempt - 1))
        try:
            resp = session.post(url, json=payload, headers=headers, timeout=cfg.timeout)
        except requests.RequestException as exc:
            last_err = f"transport error: {exc}"
            continue
        if 500 <= resp.status_code < 600:
            last_err = f"HTTP {resp.status_code}: {resp.text[:200]}"
            continue
        if resp.status_code != 200:
            raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        return _parse_response(resp.json(), expected_token_ids)
    raise ProviderError(
        f"provider failed after {cfg.max_retries} retries; last error: {last_err}"
    )


def _parse_response(body: dict, expected_token_ids: Sequence[int]) -> LogProbSequence:
    try:
        lp = body["choices"][0]["logprobs"]
        tokens = lp["tokens"]
        token_logprobs = lp["token_logprobs"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ProviderError(f"malformed completions response: missing {exc}") from exc
    expected = list(int(t) for t in expected_token_ids)
    got = list(tokens)
    for i in range(min(len(expected), len(got))):
        if not isinstance(got[i], int) or got[i] != expected[i]:
            raise ProviderError(
                f"tokenization mismatch at position {i}: expected id {expected[i]}, "
                f"provider returned {got[i]!r}"
            )
    if len(got) != len(expected):
        pos = min(len(expected), len(got))
        raise ProviderError(
            f"tokenization mismatch at position {pos}: expected {len(expected)} tokens, "
            f"provider returned {len(got)}"
        )
    logprobs = tuple(None if v is None else float(v) for v in token_logprobs)
    if len(logprobs) != len(got):
        raise ProviderError(
            f"provider returned {len(logprobs)} logprobs for {len(got)} tokens"
        )
    return LogProbSequence(token_ids=tuple(expected), logprobs=logprobs)


def probability_at(
    seq: LogProbSequence,
    position: int,
    first_token_policy: str = "zero",
) -> Optional[float]:
    """exp(logprob) at ``position``, in [0, 1].

    An absent entry (position 0, no left context) resolves per policy:
    "zero" treats the token as maximally surprising (probability 0);
    "skip" returns None so callers drop the position.
    """
    if not 0 <= position < len(seq):
        raise AssetError(f"position {position} out of range for sequence of length {len(seq)}")
    lp = seq.logprobs[position]
    if lp is None:
        if first_token_policy == "skip":
            return None
        return 0.0
    return min(1.0, math.exp(lp))


def clamp_probability(p: float) -> float:
    """Clamp to [PROB_FLOOR, 1] before downstream use."""
    return min(1.0, max(PROB_FLOOR, p))
