import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import tokpen.embed as embed
from tokpen.embed import (
    MAGIC,
    EmbeddingMatrix,
    cosine_distance,
    load_embeddings,
    save_embeddings,
    unused_token_set,
)
from tokpen.errors import AssetError
from tokpen.tokenizer import Vocabulary


# ---------------------------------------------------------------------------
# File format

def test_save_load_roundtrip(tmp_path):
    data = np.arange(12, dtype=np.float32).reshape(3, 4) / 7
    path = str(tmp_path / "m.tpemb")
    save_embeddings(path, data)
    loaded = load_embeddings(path)
    assert loaded.rows == 3 and loaded.dim == 4
    np.testing.assert_array_equal(loaded.data, data)


def test_file_layout_is_exact(tmp_path):
    path = str(tmp_path / "m.tpemb")
    save_embeddings(path, np.zeros((2, 3), dtype=np.float32))
    blob = open(path, "rb").read()
    assert blob[:7] == MAGIC
    assert struct.unpack_from("<II", blob, 7) == (2, 3)
    assert len(blob) == 7 + 8 + 2 * 3 * 4


def test_load_bad_magic(tmp_path):
    path = tmp_path / "m.tpemb"
    path.write_bytes(b"NOTEMB1" + b"\x00" * 16)
    with pytest.raises(AssetError, match="magic"):
        load_embeddings(str(path))


def test_load_truncated_payload(tmp_path):
    path = str(tmp_path / "m.tpemb")
    save_embeddings(path, np.zeros((4, 4), dtype=np.float32))
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:-5])
    with pytest.raises(AssetError, match="truncated"):
        load_embeddings(path)


def test_load_non_finite_names_coordinates(tmp_path):
    data = np.zeros((3, 2), dtype=np.float32)
    data[1, 1] = np.nan
    path = str(tmp_path / "m.tpemb")
    save_embeddings(path, data)
    with pytest.raises(AssetError, match=r"\(1, 1\)"):
        load_embeddings(path)


# ---------------------------------------------------------------------------
# Cosine distance

def test_cosine_orthogonal():
    assert cosine_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0


def test_cosine_parallel_and_antiparallel():
    v = np.array([3.0, 4.0])
    assert cosine_distance(v, 2.5 * v) == pytest.approx(0.0, abs=1e-12)
    assert cosine_distance(v, -v) == pytest.approx(2.0, abs=1e-12)


def test_cosine_zero_norm_counted():
    before = embed.zero_norm_events
    assert cosine_distance(np.zeros(3), np.ones(3)) == 1.0
    assert embed.zero_norm_events == before + 1


def test_cosine_dimension_mismatch():
    with pytest.raises(AssetError, match="mismatch"):
        cosine_distance(np.ones(2), np.ones(3))


finite_vec = arrays(
    np.float64, (4,),
    elements=st.floats(-1e3, 1e3, allow_nan=False),
)


@given(finite_vec, finite_vec)
def test_cosine_symmetric_and_bounded(a, b):
    d = cosine_distance(a, b)
    assert d == cosine_distance(b, a)
    assert 0.0 <= d <= 2.0


@given(finite_vec, st.floats(0.1, 100.0))
def test_cosine_scale_invariant(a, scale):
    b = np.array([1.0, -2.0, 3.0, 0.5])
    assert cosine_distance(a, b) == pytest.approx(
        cosine_distance(a * scale, b), abs=1e-9
    )


# ---------------------------------------------------------------------------
# Unused-token set

def small_vocab(n):
    return Vocabulary(tuple(chr(ord("a") + i) for i in range(n)))


def test_unused_declared_mean():
    emb = EmbeddingMatrix(np.array([[0, 0], [2, 4], [4, 0]], dtype=np.float32))
    out = unused_token_set(small_vocab(3), emb, declared=[1, 2])
    assert out.ids == frozenset({1, 2})
    np.testing.assert_allclose(out.mean_vector, [3.0, 2.0])


def test_unused_corpus_complement():
    emb = EmbeddingMatrix(np.eye(4, dtype=np.float32))
    out = unused_token_set(small_vocab(4), emb, corpus_ids={0, 2})
    assert out.ids == frozenset({1, 3})


def test_unused_declared_out_of_range():
    emb = EmbeddingMatrix(np.eye(2, dtype=np.float32))
    with pytest.raises(AssetError, match="outside vocabulary"):
        unused_token_set(small_vocab(2), emb, declared=[5])


def test_unused_empty_set_is_instructive():
    emb = EmbeddingMatrix(np.eye(2, dtype=np.float32))
    with pytest.raises(AssetError, match="explicit id list"):
        unused_token_set(small_vocab(2), emb, corpus_ids={0, 1})
