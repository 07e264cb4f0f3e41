import json
import os

import pytest

from tokpen.cli import (
    EXIT_ASSET,
    EXIT_CONFIG,
    EXIT_OK,
    load_config,
    load_penalty_dump,
    main,
    run_tests,
    synth_generate,
)


def fx(fixtures_dir, name):
    return os.path.join(fixtures_dir, name)


def base_args(fixtures_dir, out_dir):
    return [
        "--dataset", fx(fixtures_dir, "dataset.jsonl"),
        "--vocab", fx(fixtures_dir, "vocab.jsonl"),
        "--merges", fx(fixtures_dir, "merges.txt"),
        "--embeddings", fx(fixtures_dir, "embeddings.tpemb"),
        "--unused", fx(fixtures_dir, "unused.json"),
        "--logprobs", fx(fixtures_dir, "logprobs.jsonl"),
        "--if-psi", "32", "--if-trees", "20", "--seed", "7",
        "--out", str(out_dir),
    ]


# ---------------------------------------------------------------------------
# Configuration

def test_config_file_with_flag_override(tmp_path):
    cfg_path = tmp_path / "c.toml"
    cfg_path.write_text('[run]\nseed = 3\nmodel_name = "m1"\n')
    cfg = load_config(str(cfg_path), {"seed": 9})
    assert cfg.seed == 9           # flag wins
    assert cfg.model_name == "m1"  # file value survives


def test_config_bad_toml(tmp_path):
    cfg_path = tmp_path / "c.toml"
    cfg_path.write_text("[run\n")
    assert main(["run", "--config", str(cfg_path)]) == EXIT_CONFIG


def test_missing_required_paths_is_config_error(tmp_path):
    assert main(["score", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_nonexistent_dataset_is_config_error(tmp_path, fixtures_dir):
    args = base_args(fixtures_dir, tmp_path)
    args[1] = str(tmp_path / "missing.jsonl")
    assert main(["score"] + args) == EXIT_CONFIG


def test_cp_without_logprob_source_is_config_error(tmp_path, fixtures_dir):
    args = base_args(fixtures_dir, tmp_path)
    del args[args.index("--logprobs"):args.index("--logprobs") + 2]
    assert main(["score"] + args) == EXIT_CONFIG


def test_corrupt_vocab_is_asset_error(tmp_path, fixtures_dir):
    bad = tmp_path / "vocab.jsonl"
    bad.write_text('{"id": 0, "token": "a"}\n{"id": 5, "token": "b"}\n')
    args = base_args(fixtures_dir, tmp_path)
    args[3] = str(bad)
    assert main(["score"] + args) == EXIT_ASSET


# ---------------------------------------------------------------------------
# Full pipeline on the bundled fixtures

def test_run_pipeline_outputs(tmp_path, fixtures_dir):
    out = tmp_path / "out"
    assert main(["run"] + base_args(fixtures_dir, out)) == EXIT_OK
    for name in ("penalties.jsonl", "results.tsv", "deciles.csv",
                 "fertility.tsv", "manifest.json"):
        assert (out / name).exists(), name

    rows = load_penalty_dump(str(out / "penalties.jsonl"))
    assert len(rows) == 49
    assert rows == sorted(rows, key=lambda r: r["id"])

    lines = (out / "results.tsv").read_text().splitlines()
    header = lines[0].split("\t")
    assert header[:5] == ["dataset", "model", "function", "aggregation", "accuracy"]
    body = [ln.split("\t") for ln in lines[1:]]
    functions = {row[2] for row in body}
    assert functions == {"AS", "UT", "PD", "CP", "B1", "B2", "PPL"}
    # the fixture set is built so fragmentation tracks errors
    as_sum = next(r for r in body if r[2] == "AS" and r[3] == "sum")
    assert float(as_sum[8]) < 0.05  # t-test p-value

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["tool"] == "tokpen"
    assert set(manifest["assets"]) == {
        "dataset", "vocab", "merges", "embeddings", "unused", "logprobs"
    }
    assert all(len(a["sha256"]) == 64 for a in manifest["assets"].values())
    assert "results.tsv" in manifest["outputs"]

    fert = dict(
        ln.split("\t") for ln in (out / "fertility.tsv").read_text().splitlines()
    )
    assert float(fert["fertility"]) > 1.0


def test_rerun_is_byte_identical(tmp_path, fixtures_dir):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run"] + base_args(fixtures_dir, out1)) == EXIT_OK
    assert main(["run"] + base_args(fixtures_dir, out2)) == EXIT_OK
    for name in ("penalties.jsonl", "results.tsv", "deciles.csv", "fertility.tsv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_score_cache_reused(tmp_path, fixtures_dir):
    cache = tmp_path / "scores.jsonl"
    args = base_args(fixtures_dir, tmp_path / "o1") + ["--score-cache", str(cache)]
    assert main(["score"] + args) == EXIT_OK
    assert cache.exists()
    stamp = cache.read_bytes()
    args2 = base_args(fixtures_dir, tmp_path / "o2") + ["--score-cache", str(cache)]
    assert main(["score"] + args2) == EXIT_OK
    assert cache.read_bytes() == stamp


def test_partial_assets_degrade_gracefully(tmp_path, fixtures_dir):
    # no embeddings: AS/UT/PD are omitted with a warning, CP still runs
    args = base_args(fixtures_dir, tmp_path)
    del args[args.index("--embeddings"):args.index("--embeddings") + 2]
    del args[args.index("--unused"):args.index("--unused") + 2]
    assert main(["score"] + args) == EXIT_OK
    rows = load_penalty_dump(str(tmp_path / "penalties.jsonl"))
    keys = {k for r in rows for k in r["aggregates"]}
    assert keys == {f"CP_{c}" for c in ("sum", "avg", "max", "top3")}


def test_functions_subset_flag(tmp_path, fixtures_dir):
    args = base_args(fixtures_dir, tmp_path) + ["--functions", "PD"]
    assert main(["score"] + args) == EXIT_OK
    rows = load_penalty_dump(str(tmp_path / "penalties.jsonl"))
    keys = {k for r in rows for k in r["aggregates"]}
    assert keys == {f"PD_{c}" for c in ("sum", "avg", "max", "top3")}


# ---------------------------------------------------------------------------
# Synthetic dumps and the test/fertility subcommands

def test_synth_deterministic(tmp_path):
    a, b, c = (str(tmp_path / n) for n in ("a.jsonl", "b.jsonl", "c.jsonl"))
    synth_generate(20, 20, 0.5, seed=11, out_path=a)
    synth_generate(20, 20, 0.5, seed=11, out_path=b)
    synth_generate(20, 20, 0.5, seed=12, out_path=c)
    assert open(a, "rb").read() == open(b, "rb").read()
    assert open(a, "rb").read() != open(c, "rb").read()


def test_synth_cli_and_test_subcommand(tmp_path):
    dump = str(tmp_path / "synth.jsonl")
    code = main(["synth", "--n-correct", "60", "--n-incorrect", "60",
                 "--delta", "1.5", "--seed", "2", "--out", dump])
    assert code == EXIT_OK
    out = tmp_path / "out"
    assert main(["test", "--dump", dump, "--out", str(out)]) == EXIT_OK
    lines = (out / "results.tsv").read_text().splitlines()
    assert len(lines) == 2  # header + the one synthetic column
    row = lines[1].split("\t")
    assert row[2] == "synthetic"
    assert float(row[8]) < 0.01  # delta = 1.5 sigma is blatant
    assert row[9] == "*" and row[14] == "*"
    assert (out / "deciles.csv").exists()


def test_run_tests_reports_degenerate_cells():
    rows = [
        {"id": "a", "correct": True, "aggregates": {"X": 1.0}},
        {"id": "b", "correct": True, "aggregates": {"X": 1.0}},
        {"id": "c", "correct": False, "aggregates": {"X": 1.0}},
        {"id": "d", "correct": False, "aggregates": {"X": 1.0}},
    ]
    cells = run_tests(rows)
    assert "t_error" in cells[0] and "mwu_error" in cells[0]


def test_fertility_subcommand(tmp_path, fixtures_dir, capsys):
    assert main(["run"] + base_args(fixtures_dir, tmp_path)) == EXIT_OK
    code = main(["fertility", "--dump", str(tmp_path / "penalties.jsonl"),
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert "fertility" in capsys.readouterr().out


def test_fertility_without_terms_is_asset_error(tmp_path):
    dump = str(tmp_path / "synth.jsonl")
    synth_generate(5, 5, 0.0, seed=0, out_path=dump)
    assert main(["fertility", "--dump", dump, "--out", str(tmp_path)]) == EXIT_ASSET


def test_empty_dump_is_asset_error(tmp_path):
    dump = tmp_path / "empty.jsonl"
    dump.write_text("")
    assert main(["test", "--dump", str(dump), "--out", str(tmp_path)]) == EXIT_ASSET
