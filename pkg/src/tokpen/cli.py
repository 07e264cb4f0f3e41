"""Command-line pipeline: load assets, score instances, run the
statistical grid, and emit reports.

Subcommands:
  score      compute per-instance penalties -> penalties.jsonl
  test       run the t-test / MWU grid over a penalty dump -> results.tsv
  run        score + test + deciles + fertility + manifest
  synth      generate a synthetic penalty dump (closed-loop testing)
  fertility  average tokens per natural word from a penalty dump

Configuration comes from an optional TOML file plus flags; flags win.
Exit codes: 0 ok, 2 config error, 3 asset error, 4 provider error,
5 internal error.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__, embed, iforest, logprob, penalty, stats
from .corpus import InstanceRecord, load_dataset
from .errors import AssetError, ConfigError, ProviderError, TokpenError
from .penalty import InstancePenalties, PenaltyConfig
from .tokenizer import encode, load_tokenizer

log = logging.getLogger("tokpen")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSET = 3
EXIT_PROVIDER = 4
EXIT_INTERNAL = 5


@dataclass
class RunConfig:
    dataset: Optional[str] = None
    vocab: Optional[str] = None
    merges: Optional[str] = None
    embeddings: Optional[str] = None
    unused: Optional[str] = None          # JSON file: list of token ids
    logprobs: Optional[str] = None        # logprob JSONL
    score_cache: Optional[str] = None     # anomaly score cache JSONL
    boundary_marker: str = "▁"
    byte_level: bool = False
    functions: tuple[str, ...] = penalty.PENALTY_FUNCTIONS
    aggregations: tuple[str, ...] = penalty.AGGREGATIONS
    top_k: int = 3
    pos_weights: bool = True
    first_token_policy: str = "zero"
    if_psi: int = iforest.DEFAULT_SUBSAMPLE
    if_trees: int = iforest.DEFAULT_TREES
    if_raw: bool = False
    welch: bool = False
    provider_mode: str = "file"
    provider_endpoint: str = ""
    provider_model: str = ""
    provider_auth_env: str = "TOKPEN_API_TOKEN"
    dataset_name: str = "dataset"
    model_name: str = "model"
    output_dir: str = "out"
    seed: int = 0

    def penalty_config(self) -> PenaltyConfig:
        return PenaltyConfig(
            functions=tuple(self.functions),
            aggregations=tuple(self.aggregations),
            top_k=self.top_k,
            pos_weights=self.pos_weights,
            first_token_policy=self.first_token_policy,
            use_raw_anomaly=self.if_raw,
        )

    def validate_for_score(self) -> None:
        for name in ("dataset", "vocab", "merges"):
            if getattr(self, name) is None:
                raise ConfigError(f"--{name} is required for scoring")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if "CP" in self.functions:
            sources = []
            if self.logprobs:
                sources.append("file")
            if self.provider_mode == "http":
                sources.append("http")
            if len(sources) != 1:
                raise ConfigError(
                    "CP needs exactly one logprob source (a logprob file or an "
                    f"http provider); found {len(sources)}"
                )
        for name in ("dataset", "vocab", "merges", "embeddings", "unused",
                     "logprobs"):
            path = getattr(self, name)
            if path is not None and not os.path.exists(path):
                raise ConfigError(f"{name} path does not exist: {path}")


_CONFIG_KEYS = {
    ("paths", "dataset"): "dataset",
    ("paths", "vocab"): "vocab",
    ("paths", "merges"): "merges",
    ("paths", "embeddings"): "embeddings",
    ("paths", "unused"): "unused",
    ("paths", "logprobs"): "logprobs",
    ("paths", "score_cache"): "score_cache",
    ("tokenizer", "boundary_marker"): "boundary_marker",
    ("tokenizer", "byte_level"): "byte_level",
    ("penalty", "functions"): "functions",
    ("penalty", "aggregations"): "aggregations",
    ("penalty", "top_k"): "top_k",
    ("penalty", "pos_weights"): "pos_weights",
    ("penalty", "first_token_policy"): "first_token_policy",
    ("iforest", "psi"): "if_psi",
    ("iforest", "trees"): "if_trees",
    ("iforest", "raw"): "if_raw",
    ("stats", "welch"): "welch",
    ("provider", "mode"): "provider_mode",
    ("provider", "endpoint"): "provider_endpoint",
    ("provider", "model"): "provider_model",
    ("provider", "auth_env"): "provider_auth_env",
    ("run", "dataset_name"): "dataset_name",
    ("run", "model_name"): "model_name",
    ("run", "output_dir"): "output_dir",
    ("run", "seed"): "seed",
}


def load_config(path: Optional[str], overrides: dict) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from exc
        for (section, key), attr in _CONFIG_KEYS.items():
            if section in doc and key in doc[section]:
                value = doc[section][key]
                if attr in ("functions", "aggregations"):
                    value = tuple(value)
                setattr(cfg, attr, value)
    for attr, value in overrides.items():
        if value is not None:
            setattr(cfg, attr, value)
    return cfg


# ---------------------------------------------------------------------------
# Scoring

def _load_unused_ids(path: str) -> list[int]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            ids = json.load(fh)
        except json.JSONDecodeError as exc:
            raise AssetError(f"{path}: unused-token list is not valid JSON: {exc}") from exc
    if not isinstance(ids, list):
        raise AssetError(f"{path}: unused-token list must be a JSON array of ids")
    return [int(i) for i in ids]


def run_score(cfg: RunConfig) -> list[InstancePenalties]:
    cfg.validate_for_score()
    records = load_dataset(cfg.dataset)
    vocab, merges = load_tokenizer(
        cfg.vocab, cfg.merges,
        boundary_marker=cfg.boundary_marker, byte_level=cfg.byte_level,
    )

    embeddings = embed.load_embeddings(cfg.embeddings) if cfg.embeddings else None
    if embeddings is not None and embeddings.rows != vocab.size:
        raise AssetError(
            f"vocabulary has {vocab.size} tokens but embedding matrix has "
            f"{embeddings.rows} rows"
        )

    anomaly_scores = None
    if "AS" in cfg.functions:
        if cfg.score_cache and os.path.exists(cfg.score_cache):
            anomaly_scores = iforest.load_scores(cfg.score_cache)
        elif embeddings is not None:
            model = iforest.fit(
                embeddings, subsample_size=min(cfg.if_psi, embeddings.rows),
                tree_count=cfg.if_trees, seed=cfg.seed,
            )
            anomaly_scores = iforest.score_vocabulary(model, embeddings)
            if cfg.score_cache:
                iforest.save_scores(cfg.score_cache, anomaly_scores)

    unused = None
    if cfg.unused and embeddings is not None:
        unused = embed.unused_token_set(vocab, embeddings, declared=_load_unused_ids(cfg.unused))

    logprob_map: dict[str, logprob.LogProbSequence] = {}
    provider = None
    if "CP" in cfg.functions:
        if cfg.logprobs:
            logprob_map = logprob.load_logprob_file(cfg.logprobs)
        else:
            provider = logprob.ProviderConfig(
                mode="http", endpoint=cfg.provider_endpoint,
                model=cfg.provider_model, auth_env=cfg.provider_auth_env,
            )

    pconfig = cfg.penalty_config()
    results: list[InstancePenalties] = []
    omitted_seen: set[str] = set()
    for record in records:
        seq = None
        if "CP" in cfg.functions:
            key = record.logprob_ref or record.id
            if provider is not None:
                expected = [t.token_id for t in encode(record.text, vocab, merges)]
                seq = logprob.fetch_logprobs(provider, record.text, expected)
            elif key in logprob_map:
                seq = logprob_map[key]
            else:
                raise AssetError(
                    f"instance {record.id!r}: no logprob sequence under key {key!r}"
                )
        try:
            inst = penalty.score_instance(
                record, vocab, merges,
                embeddings=embeddings, anomaly_scores=anomaly_scores,
                unused=unused, logprob_seq=seq, config=pconfig,
            )
        except TokpenError as exc:
            raise type(exc)(f"penalty: instance {record.id!r}: {exc}") from exc
        for fn in inst.omitted:
            if fn not in omitted_seen:
                omitted_seen.add(fn)
                log.warning("penalty function %s omitted: required assets not loaded", fn)
        results.append(inst)
    results.sort(key=lambda r: r.instance_id)
    return results


def write_penalty_dump(path: str, results: list[InstancePenalties]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps({
                "id": r.instance_id,
                "correct": r.correct,
                "aggregates": {k: r.aggregates[k] for k in sorted(r.aggregates)},
                "b1": r.b1,
                "b2": r.b2,
                "ppl": r.perplexity,
                "word_tokens": r.word_token_count,
                "words": r.word_count,
            }, sort_keys=True) + "\n")


def load_penalty_dump(path: str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                obj["id"], obj["correct"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise AssetError(f"{path}: bad dump entry on line {line_no}: {exc}") from exc
            rows.append(obj)
    if not rows:
        raise AssetError(f"{path}: penalty dump is empty")
    return rows


# ---------------------------------------------------------------------------
# Statistical grid

def _dump_columns(rows: list[dict]) -> dict[str, list[tuple[float, bool]]]:
    """Penalty columns -> [(value, correct)] with stable input order."""
    columns: dict[str, list[tuple[float, bool]]] = {}
    for row in rows:
        correct = bool(row["correct"])
        cells = dict(row.get("aggregates") or {})
        if row.get("b1") is not None:
            cells["B1"] = row["b1"]
        if row.get("b2") is not None:
            cells["B2"] = row["b2"]
        if row.get("ppl") is not None:
            cells["PPL"] = row["ppl"]
        for name, value in cells.items():
            columns.setdefault(name, []).append((float(value), correct))
    return columns


def _split_column(name: str) -> tuple[str, str]:
    if "_" in name:
        fn, agg = name.split("_", 1)
        return fn, agg
    return name, "-"


def run_tests(rows: list[dict], welch: bool = False) -> list[dict]:
    """One grid cell per penalty column: both tests plus sample sizes."""
    columns = _dump_columns(rows)
    n_total = len(rows)
    n_correct_total = sum(1 for r in rows if r["correct"])
    out = []
    for name in sorted(columns):
        pairs = columns[name]
        split = stats.SampleSplit(
            correct=tuple(v for v, ok in pairs if ok),
            incorrect=tuple(v for v, ok in pairs if not ok),
        )
        cell: dict = {"column": name, "accuracy": n_correct_total / n_total}
        cell["function"], cell["aggregation"] = _split_column(name)
        try:
            t = stats.t_test_one_sided(split, welch=welch)
            cell["t"] = t
        except AssetError as exc:
            cell["t_error"] = str(exc)
        try:
            u = stats.mwu_one_sided(split)
            cell["mwu"] = u
        except AssetError as exc:
            cell["mwu_error"] = str(exc)
        out.append(cell)
    return out


def _fmt(x: float) -> str:
    return format(x, ".10g")


def write_results_tsv(path: str, cells: list[dict], dataset: str, model: str) -> None:
    header = [
        "dataset", "model", "function", "aggregation", "accuracy",
        "n_correct", "n_incorrect",
        "t_stat", "t_p", "t_sig05", "t_sig10",
        "mwu_method", "mwu_stat", "mwu_p", "mwu_sig05", "mwu_sig10",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for cell in cells:
            t = cell.get("t")
            u = cell.get("mwu")
            any_result = t or u
            row = [
                dataset, model, cell["function"], cell["aggregation"],
                _fmt(cell["accuracy"]),
                str(any_result.n_correct) if any_result else "-",
                str(any_result.n_incorrect) if any_result else "-",
                _fmt(t.statistic) if t else "-",
                _fmt(t.p_value) if t else "-",
                ("*" if t.significant_05 else ".") if t else "-",
                ("*" if t.significant_10 else ".") if t else "-",
                u.method if u else "-",
                _fmt(u.statistic) if u else "-",
                _fmt(u.p_value) if u else "-",
                ("*" if u.significant_05 else ".") if u else "-",
                ("*" if u.significant_10 else ".") if u else "-",
            ]
            fh.write("\t".join(row) + "\n")


def write_decile_csv(path: str, rows: list[dict]) -> None:
    columns = _dump_columns(rows)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("column,acc_top,acc_bottom,diff\n")
        for name in sorted(columns):
            try:
                acc_top, acc_bottom, diff = stats.decile_analysis(columns[name])
            except AssetError:
                continue
            fh.write(f"{name},{_fmt(acc_top)},{_fmt(acc_bottom)},{_fmt(diff)}\n")


def write_fertility_summary(path: str, rows: list[dict]) -> Optional[float]:
    terms = [
        (int(r["word_tokens"]), int(r["words"]))
        for r in rows
        if r.get("word_tokens") is not None and r.get("words") is not None
    ]
    if not terms or sum(w for _, w in terms) == 0:
        return None
    value = stats.fertility(terms)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"tokens\t{sum(t for t, _ in terms)}\n")
        fh.write(f"words\t{sum(w for _, w in terms)}\n")
        fh.write(f"fertility\t{_fmt(value)}\n")
    return value


# ---------------------------------------------------------------------------
# Synthetic fixtures

def synth_generate(
    n_correct: int,
    n_incorrect: int,
    shift: float,
    seed: int,
    out_path: str,
    sigma: float = 1.0,
) -> None:
    """Penalty dump with correct ~ N(0, sigma^2) and incorrect ~
    N(shift * sigma, sigma^2), for closed-loop testing of the stats grid."""
    if n_correct < 1 or n_incorrect < 1:
        raise ConfigError("synth needs at least one instance per group")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    correct_vals = rng.normal(0.0, sigma, size=n_correct)
    incorrect_vals = rng.normal(shift * sigma, sigma, size=n_incorrect)
    with open(out_path, "w", encoding="utf-8") as fh:
        for i, v in enumerate(correct_vals):
            fh.write(json.dumps(
                {"id": f"synth-c-{i:05d}", "correct": True,
                 "aggregates": {"synthetic": float(v)}}, sort_keys=True) + "\n")
        for i, v in enumerate(incorrect_vals):
            fh.write(json.dumps(
                {"id": f"synth-i-{i:05d}", "correct": False,
                 "aggregates": {"synthetic": float(v)}}, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Manifest

def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path: str, cfg: RunConfig, outputs: list[str]) -> None:
    cfg_dict = dataclasses.asdict(cfg)
    cfg_json = json.dumps(cfg_dict, sort_keys=True)
    assets = {}
    for name in ("dataset", "vocab", "merges", "embeddings", "unused", "logprobs"):
        p = getattr(cfg, name)
        if p and os.path.exists(p):
            assets[name] = {"path": p, "sha256": _sha256(p)}
    manifest = {
        "tool": "tokpen",
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config": cfg_dict,
        "config_sha256": hashlib.sha256(cfg_json.encode()).hexdigest(),
        "seed": cfg.seed,
        "assets": assets,
        "outputs": {
            os.path.basename(p): {"sha256": _sha256(p)} for p in outputs if os.path.exists(p)
        },
        "notes": {
            "decile_tie_break": "stable input order among equal penalties",
            "logprob_conditioning": "as recorded in the logprob file (bare text "
                                    "unless produced with a prompt prefix)",
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Entry points

def _add_asset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file; flags override it")
    p.add_argument("--dataset")
    p.add_argument("--vocab")
    p.add_argument("--merges")
    p.add_argument("--embeddings")
    p.add_argument("--unused")
    p.add_argument("--logprobs")
    p.add_argument("--score-cache", dest="score_cache")
    p.add_argument("--boundary-marker", dest="boundary_marker")
    p.add_argument("--byte-level", dest="byte_level", action="store_const", const=True)
    p.add_argument("--functions", help="comma-separated subset of AS,UT,PD,CP")
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--no-pos-weights", dest="pos_weights", action="store_const", const=False)
    p.add_argument("--if-psi", dest="if_psi", type=int)
    p.add_argument("--if-trees", dest="if_trees", type=int)
    p.add_argument("--if-seed", dest="seed", type=int)
    p.add_argument("--if-raw", dest="if_raw", action="store_const", const=True)
    p.add_argument("--welch", dest="welch", action="store_const", const=True)
    p.add_argument("--dataset-name", dest="dataset_name")
    p.add_argument("--model-name", dest="model_name")
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--seed", dest="seed", type=int)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {
        attr: getattr(args, attr, None)
        for attr in (f.name for f in dataclasses.fields(RunConfig))
    }
    if getattr(args, "functions", None):
        overrides["functions"] = tuple(args.functions.split(","))
    cfg = load_config(getattr(args, "config", None), overrides)
    return cfg


def _cmd_score(args) -> int:
    cfg = _config_from_args(args)
    os.makedirs(cfg.output_dir, exist_ok=True)
    results = run_score(cfg)
    dump = os.path.join(cfg.output_dir, "penalties.jsonl")
    write_penalty_dump(dump, results)
    print(f"wrote {dump} ({len(results)} instances)")
    return EXIT_OK


def _cmd_test(args) -> int:
    cfg = _config_from_args(args)
    os.makedirs(cfg.output_dir, exist_ok=True)
    rows = load_penalty_dump(args.dump)
    cells = run_tests(rows, welch=cfg.welch)
    results_path = os.path.join(cfg.output_dir, "results.tsv")
    write_results_tsv(results_path, cells, cfg.dataset_name, cfg.model_name)
    decile_path = os.path.join(cfg.output_dir, "deciles.csv")
    write_decile_csv(decile_path, rows)
    print(f"wrote {results_path}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _config_from_args(args)
    os.makedirs(cfg.output_dir, exist_ok=True)
    results = run_score(cfg)
    dump = os.path.join(cfg.output_dir, "penalties.jsonl")
    write_penalty_dump(dump, results)
    rows = load_penalty_dump(dump)
    cells = run_tests(rows, welch=cfg.welch)
    results_path = os.path.join(cfg.output_dir, "results.tsv")
    write_results_tsv(results_path, cells, cfg.dataset_name, cfg.model_name)
    decile_path = os.path.join(cfg.output_dir, "deciles.csv")
    write_decile_csv(decile_path, rows)
    fertility_path = os.path.join(cfg.output_dir, "fertility.tsv")
    write_fertility_summary(fertility_path, rows)
    outputs = [dump, results_path, decile_path, fertility_path]
    manifest_path = os.path.join(cfg.output_dir, "manifest.json")
    write_manifest(manifest_path, cfg, outputs)
    print(f"run complete; outputs in {cfg.output_dir}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    synth_generate(args.n_correct, args.n_incorrect, args.delta, args.seed, args.out_path)
    print(f"wrote {args.out_path}")
    return EXIT_OK


def _cmd_fertility(args) -> int:
    cfg = _config_from_args(args)
    rows = load_penalty_dump(args.dump)
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, "fertility.tsv")
    value = write_fertility_summary(path, rows)
    if value is None:
        raise AssetError("penalty dump carries no fertility terms")
    print(f"fertility\t{_fmt(value)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokpen",
        description="Tokenization penalties and their correlation with model errors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="compute per-instance penalties")
    _add_asset_flags(p)
    p.set_defaults(fn=_cmd_score)

    p = sub.add_parser("test", help="statistical grid over a penalty dump")
    _add_asset_flags(p)
    p.add_argument("--dump", required=True)
    p.set_defaults(fn=_cmd_test)

    p = sub.add_parser("run", help="full pipeline")
    _add_asset_flags(p)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("synth", help="generate a synthetic penalty dump")
    p.add_argument("--n-correct", type=int, required=True)
    p.add_argument("--n-incorrect", type=int, required=True)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", dest="out_path", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("fertility", help="fertility from a penalty dump")
    _add_asset_flags(p)
    p.add_argument("--dump", required=True)
    p.set_defaults(fn=_cmd_fertility)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    except AssetError as exc:
        log.error("asset: %s", exc)
        return EXIT_ASSET
    except ProviderError as exc:
        log.error("provider: %s", exc)
        return EXIT_PROVIDER
    except TokpenError as exc:
        log.error("%s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
