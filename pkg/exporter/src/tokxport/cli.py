"""tokxport command line: load a causal LM + fast tokenizer and dump
assets, logprobs, unused-token lists, or POS annotations."""
from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from . import ExportError
from .export import (
    DEFAULT_MARKER,
    annotate_dataset,
    export_assets,
    export_logprobs,
    export_unused,
)


def load_model_and_tokenizer(model_id: str):
    from transformers import AutoModelForCausalLM, AutoTokenizer
    tokenizer = AutoTokenizer.from_pretrained(model_id)
    model = AutoModelForCausalLM.from_pretrained(model_id)
    return model, tokenizer


def _cmd_assets(args) -> int:
    model, tokenizer = load_model_and_tokenizer(args.model)
    manifest = export_assets(model, tokenizer, args.out, model_id=args.model)
    print(json.dumps({"vocab_size": manifest.vocab_size,
                      "embedding_dim": manifest.embedding_dim,
                      "tied_embeddings": manifest.tied_embeddings}))
    return 0


def _cmd_logprobs(args) -> int:
    model, tokenizer = load_model_and_tokenizer(args.model)
    summary = export_logprobs(
        model, tokenizer, args.dataset, args.out,
        mode=args.mode, prompt=args.prompt, marker=args.marker,
    )
    print(json.dumps(summary))
    return 0


def _cmd_unused(args) -> int:
    _, tokenizer = load_model_and_tokenizer(args.model)
    unused = export_unused(tokenizer, args.dataset, args.out)
    print(f"wrote {args.out} ({len(unused)} unused tokens)")
    return 0


def _cmd_annotate(args) -> int:
    n = annotate_dataset(args.dataset, args.out, spacy_model=args.spacy_model)
    print(f"annotated {n} instances -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokxport",
        description="Export model assets in the tokenization-analysis file formats",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assets", help="vocab + merges + TPEMB1 embeddings + manifest")
    p.add_argument("--model", required=True, help="model name or local path")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_assets)

    p = sub.add_parser("logprobs", help="teacher-forced logprob JSONL")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True, help="dataset JSONL with id/text")
    p.add_argument("--out", required=True, help="output logprob JSONL path")
    p.add_argument("--mode", choices=("bare", "prompt"), default="bare")
    p.add_argument("--prompt", default="", help="left context for --mode prompt")
    p.add_argument("--marker", default=DEFAULT_MARKER)
    p.set_defaults(fn=_cmd_logprobs)

    p = sub.add_parser("unused", help="unused-token id list from a reference dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_unused)

    p = sub.add_parser("annotate", help="fill words/POS via spaCy (optional extra)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--spacy-model", default="en_core_web_sm")
    p.set_defaults(fn=_cmd_annotate)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
