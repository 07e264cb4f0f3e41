import math

import numpy as np
import pytest

from tokpen.errors import AssetError
from tokpen.iforest import (
    EULER_GAMMA,
    average_path_length,
    fit,
    load_scores,
    save_scores,
    score,
    score_many,
    score_vocabulary,
)


def cluster(n=300, dim=2, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, scale, size=(n, dim))


# ---------------------------------------------------------------------------
# average_path_length

def test_c_small_values():
    assert average_path_length(1) == 0.0
    assert average_path_length(2) == 1.0


def test_c_formula():
    # c(n) = 2 (ln(n-1) + gamma) - 2 (n-1)/n
    for n in (3, 10, 100):
        expected = 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n
        assert average_path_length(n) == expected


def test_c_256():
    assert average_path_length(256) == pytest.approx(10.244770920116851, abs=1e-12)


def test_c_monotone():
    vals = [average_path_length(n) for n in range(2, 200)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------------------
# Fitting and scoring

def test_fit_deterministic_for_seed():
    x = cluster()
    a = score_many(fit(x, subsample_size=64, tree_count=20, seed=5), x)
    b = score_many(fit(x, subsample_size=64, tree_count=20, seed=5), x)
    np.testing.assert_array_equal(a, b)
    c = score_many(fit(x, subsample_size=64, tree_count=20, seed=6), x)
    assert not np.array_equal(a, c)


def test_fit_validates_arguments():
    x = cluster(n=20)
    with pytest.raises(AssetError, match="exceeds row count"):
        fit(x, subsample_size=64)
    with pytest.raises(AssetError, match=">= 2"):
        fit(x, subsample_size=1)
    with pytest.raises(AssetError, match=">= 1"):
        fit(x, subsample_size=8, tree_count=0)


def test_scores_in_unit_interval():
    x = cluster()
    s = score_many(fit(x, subsample_size=64, tree_count=30, seed=1), x)
    assert np.all(s > 0.0) and np.all(s < 1.0)


def test_constant_data_single_leaf():
    # no splittable feature: every tree is one big leaf, E[h] = c(psi),
    # so s = 2 ** (-c(psi)/c(psi)) = 0.5 for every point
    x = np.ones((50, 3))
    model = fit(x, subsample_size=32, tree_count=10, seed=0)
    s = score_many(model, x)
    np.testing.assert_allclose(s, 0.5)


def test_outlier_scores_highest():
    x = np.vstack([cluster(n=500, seed=3), np.full((1, 2), 12.0)])
    model = fit(x, subsample_size=256, tree_count=100, seed=11)
    s = score_many(model, x)
    assert int(np.argmax(s)) == 500


def test_outlier_score_monotone_in_distance():
    base = cluster(n=400, seed=2)
    model = fit(base, subsample_size=128, tree_count=60, seed=4)
    scores = [score(model, np.array([d, 0.0])) for d in (0.0, 2.0, 4.0, 12.0)]
    assert scores[0] < scores[1] < scores[2]
    # beyond the data envelope the path length saturates
    assert scores[3] >= scores[2]


def test_score_dimension_mismatch():
    model = fit(cluster(dim=2), subsample_size=32, tree_count=5, seed=0)
    with pytest.raises(AssetError, match="dimension mismatch"):
        score_many(model, np.zeros((3, 5)))


# ---------------------------------------------------------------------------
# Vocabulary normalization and the score cache

def test_normalization_min_max(monkeypatch):
    import tokpen.iforest as mod
    x = np.zeros((3, 2))
    model = fit(np.zeros((10, 2)), subsample_size=4, tree_count=2, seed=0)
    monkeypatch.setattr(
        mod, "score_many", lambda m, data: np.array([0.4, 0.6, 0.5])
    )
    out = mod.score_vocabulary(model, x)
    np.testing.assert_allclose(out.normalized, [0.0, 1.0, 0.5])


def test_normalization_degenerate_all_equal():
    x = np.ones((8, 2))
    model = fit(x, subsample_size=4, tree_count=3, seed=0)
    out = score_vocabulary(model, x)
    np.testing.assert_array_equal(out.normalized, np.zeros(8))


def test_score_cache_roundtrip(tmp_path):
    x = cluster(n=40)
    out = score_vocabulary(fit(x, subsample_size=16, tree_count=10, seed=9), x)
    path = str(tmp_path / "scores.jsonl")
    save_scores(path, out)
    back = load_scores(path)
    np.testing.assert_array_equal(back.raw, out.raw)
    np.testing.assert_array_equal(back.normalized, out.normalized)


def test_score_cache_sparse_ids(tmp_path):
    path = tmp_path / "scores.jsonl"
    path.write_text('{"id": 0, "raw": 0.5, "norm": 0.0}\n{"id": 2, "raw": 0.6, "norm": 1.0}\n')
    with pytest.raises(AssetError, match="dense"):
        load_scores(str(path))
