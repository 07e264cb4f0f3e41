"""Export operations: model assets, teacher-forced logprobs, unused-token
lists, and (optionally) POS annotations."""
from __future__ import annotations

import json
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import ExportError
from .formats import (
    atomic_write,
    sha256_file,
    write_logprobs,
    write_merges,
    write_tpemb,
    write_unused,
    write_vocab,
)
from .reference import ReferenceMismatch, first_divergence, reference_encode

DEFAULT_MARKER = "Ġ"  # GPT-2 style word-boundary symbol


@dataclass
class ExportManifest:
    model_id: str
    vocab_size: int
    embedding_dim: int
    tied_embeddings: bool
    files: dict = field(default_factory=dict)  # name -> {"path", "sha256"}
    created: str = ""
    logprob_conditioning: str = ""

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"


def extract_tokenizer(tokenizer) -> tuple[list[str], list[tuple[str, str]]]:
    """Token strings (dense by id) and the ranked merge list from a fast
    BPE tokenizer."""
    vocab = tokenizer.get_vocab()
    if sorted(vocab.values()) != list(range(len(vocab))):
        raise ExportError("tokenizer vocabulary ids are not dense from 0")
    tokens = [""] * len(vocab)
    for tok, idx in vocab.items():
        tokens[idx] = tok

    backend = getattr(tokenizer, "backend_tokenizer", None)
    if backend is None:
        raise ExportError("tokenizer has no fast backend; merges cannot be recovered")
    with tempfile.TemporaryDirectory() as tmp:
        paths = backend.model.save(tmp)
        merges_path = next((p for p in paths if p.endswith("merges.txt")), None)
        if merges_path is None:
            raise ExportError("tokenizer backend is not BPE (no merges file)")
        merges: list[tuple[str, str]] = []
        with open(merges_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line or line.startswith("#version"):
                    continue
                parts = line.split(" ")
                if len(parts) != 2:
                    raise ExportError(f"unparseable merge line {line!r}")
                merges.append((parts[0], parts[1]))
    return tokens, merges


def output_embedding_matrix(model) -> tuple[np.ndarray, bool]:
    """The LM-head weight matrix, falling back to the input embeddings for
    tied-weight models. Returns (matrix, tied flag)."""
    head = model.get_output_embeddings()
    inp = model.get_input_embeddings()
    if head is None:
        if inp is None:
            raise ExportError("model exposes neither output nor input embeddings")
        return inp.weight.detach().cpu().numpy(), True
    tied = inp is not None and head.weight.data_ptr() == inp.weight.data_ptr()
    return head.weight.detach().cpu().numpy(), tied


def export_assets(model, tokenizer, out_dir: str, model_id: str) -> ExportManifest:
    os.makedirs(out_dir, exist_ok=True)
    tokens, merges = extract_tokenizer(tokenizer)
    matrix, tied = output_embedding_matrix(model)
    if matrix.shape[0] != len(tokens):
        raise ExportError(
            f"embedding matrix has {matrix.shape[0]} rows but the vocabulary "
            f"has {len(tokens)} tokens; refusing to export misaligned assets"
        )

    paths = {
        "vocab": os.path.join(out_dir, "vocab.jsonl"),
        "merges": os.path.join(out_dir, "merges.txt"),
        "embeddings": os.path.join(out_dir, "embeddings.tpemb"),
    }
    write_vocab(paths["vocab"], tokens)
    write_merges(paths["merges"], merges)
    write_tpemb(paths["embeddings"], matrix)

    manifest = ExportManifest(
        model_id=model_id,
        vocab_size=len(tokens),
        embedding_dim=int(matrix.shape[1]),
        tied_embeddings=bool(tied),
        files={name: {"path": p, "sha256": sha256_file(p)} for name, p in paths.items()},
        created=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    )
    atomic_write(os.path.join(out_dir, "manifest.json"), manifest.to_json().encode("utf-8"))
    return manifest


def load_instances(dataset_path: str) -> list[tuple[str, str]]:
    out = []
    with open(dataset_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append((str(obj["id"]), str(obj["text"])))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ExportError(f"{dataset_path}: bad instance on line {line_no}: {exc}") from exc
    return out


def export_logprobs(
    model,
    tokenizer,
    dataset_path: str,
    out_path: str,
    mode: str = "bare",
    prompt: str = "",
    marker: str = DEFAULT_MARKER,
    rejects_path: str | None = None,
) -> dict:
    """Teacher-forced per-token logprobs for every dataset instance.

    Every instance's model tokenization is checked against an independent
    replay of the consumer's BPE rules over the exported vocab/merges;
    divergent instances go to the rejects file, never silently realigned.
    ``mode`` is "bare" (no left context at position 0, logprob null) or
    "prompt" (texts conditioned on ``prompt``, position 0 present).
    """
    if mode not in ("bare", "prompt"):
        raise ExportError(f"unknown conditioning mode {mode!r}")
    tokens, merges = extract_tokenizer(tokenizer)
    vocab = {t: i for i, t in enumerate(tokens)}

    prompt_ids: list[int] = []
    if mode == "prompt":
        prompt_ids = list(tokenizer.encode(prompt, add_special_tokens=False))
        if not prompt_ids:
            raise ExportError("prompt-conditioned mode needs a non-empty prompt")

    sequences = []
    rejects = []
    model.eval()
    with torch.no_grad():
        for inst_id, text in load_instances(dataset_path):
            ids = list(tokenizer.encode(text, add_special_tokens=False))
            try:
                ref = reference_encode(text, vocab, merges, marker=marker)
            except ReferenceMismatch as exc:
                rejects.append({"id": inst_id, "position": exc.position, "detail": str(exc)})
                continue
            if ids != ref:
                pos = first_divergence(ref, ids)
                rejects.append({
                    "id": inst_id, "position": pos,
                    "detail": f"model tokenizer diverges from the exported "
                              f"vocab/merges replay at position {pos}",
                })
                continue
            if not ids:
                sequences.append((inst_id, [], []))
                continue
            full = prompt_ids + ids
            logits = model(torch.tensor([full])).logits[0]
            logp = torch.log_softmax(logits.float(), dim=-1)
            offset = len(prompt_ids)
            lps = []
            for i, tid in enumerate(ids):
                ctx = offset + i - 1
                lps.append(None if ctx < 0 else min(0.0, float(logp[ctx, tid])))
            sequences.append((inst_id, ids, lps))

    write_logprobs(out_path, sequences)
    if rejects_path is None:
        rejects_path = os.path.join(os.path.dirname(os.path.abspath(out_path)), "rejects.jsonl")
    atomic_write(
        rejects_path,
        ("\n".join(json.dumps(r) for r in rejects) + "\n" if rejects else "").encode("utf-8"),
    )
    return {
        "exported": len(sequences),
        "rejected": len(rejects),
        "conditioning": mode,
        "logprobs": out_path,
        "rejects": rejects_path,
    }


def export_unused(tokenizer, dataset_path: str, out_path: str) -> list[int]:
    """Token ids never produced when encoding the dataset texts."""
    used: set[int] = set()
    for _, text in load_instances(dataset_path):
        used.update(tokenizer.encode(text, add_special_tokens=False))
    unused = sorted(set(range(len(tokenizer.get_vocab()))) - used)
    if not unused:
        raise ExportError("every vocabulary token occurs in the dataset; "
                          "no unused-token list to export")
    write_unused(out_path, unused)
    return unused


def annotate_dataset(dataset_path: str, out_path: str, spacy_model: str = "en_core_web_sm") -> int:
    """Fill each instance's ``words`` field with POS-tagged alphabetic
    words using spaCy. Optional: requires the ``pos`` extra."""
    try:
        import spacy
    except ImportError as exc:
        raise ExportError("POS annotation requires spacy (install the 'pos' extra)") from exc
    nlp = spacy.load(spacy_model)

    lines = []
    count = 0
    with open(dataset_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            text = obj["text"]
            doc = nlp(text)
            words = []
            for tok in doc:
                if not tok.text.isascii() or not tok.text.isalpha():
                    continue
                start = len(text[:tok.idx].encode("utf-8"))
                words.append({
                    "text": tok.text,
                    "start": start,
                    "end": start + len(tok.text.encode("utf-8")),
                    "pos": tok.pos_,
                })
            obj["words"] = words
            lines.append(json.dumps(obj, ensure_ascii=False))
            count += 1
    atomic_write(out_path, ("\n".join(lines) + "\n" if lines else "").encode("utf-8"))
    return count
