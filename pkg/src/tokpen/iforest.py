"""Isolation forest over token embeddings, from scratch.

Anomaly score for a point x: ``s(x) = 2 ** (-E[h(x)] / c(psi))`` where
h(x) is the path depth plus ``c(m)`` at a size-m leaf, and
``c(n) = 2 * H(n-1) - 2 * (n-1) / n`` with ``H(i) = ln(i) + gamma``
(``c(1) = 0``, ``c(2) = 1``). Per-token scores are min-max rescaled over
the whole vocabulary so they lie in [0, 1].

Randomness comes from a counter-based Philox stream; each tree uses a key
derived from (master seed, tree index), so results are reproducible no
matter how trees are scheduled.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .embed import EmbeddingMatrix
from .errors import AssetError

EULER_GAMMA = 0.5772156649

DEFAULT_SUBSAMPLE = 256
DEFAULT_TREES = 100


def average_path_length(n: int) -> float:
    """Expected path length c(n) of an unsuccessful BST search."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


@dataclass(frozen=True)
class IsolationTree:
    # node i is internal if feature[i] >= 0 (children in left/right),
    # otherwise a leaf holding `size[i]` training points.
    feature: np.ndarray    # int32
    threshold: np.ndarray  # float64
    left: np.ndarray       # int32
    right: np.ndarray      # int32
    size: np.ndarray       # int32


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[IsolationTree, ...]
    subsample_size: int
    dim: int
    seed: int

    @property
    def tree_count(self) -> int:
        return len(self.trees)

    @property
    def height_limit(self) -> int:
        return math.ceil(math.log2(self.subsample_size))


@dataclass(frozen=True)
class AnomalyScores:
    raw: np.ndarray
    normalized: np.ndarray


def _grow_tree(x: np.ndarray, height_limit: int, rng: np.random.Generator) -> IsolationTree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    size: list[int] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(0)
        return len(feature) - 1

    def build(idx: np.ndarray, depth: int) -> int:
        node = new_node()
        if depth >= height_limit or idx.shape[0] <= 1:
            size[node] = idx.shape[0]
            return node
        sub = x[idx]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if splittable.size == 0:
            size[node] = idx.shape[0]
            return node
        q = int(splittable[rng.integers(splittable.size)])
        thr = float(rng.uniform(lo[q], hi[q]))
        if thr <= lo[q] or thr >= hi[q]:
            # zero-probability edge draw; any strictly interior value works
            thr = float((lo[q] + hi[q]) / 2.0)
        mask = sub[:, q] < thr
        feature[node] = q
        threshold[node] = thr
        left[node] = build(idx[mask], depth + 1)
        right[node] = build(idx[~mask], depth + 1)
        return node

    build(np.arange(x.shape[0]), 0)
    return IsolationTree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        size=np.asarray(size, dtype=np.int32),
    )


def fit(
    embeddings: EmbeddingMatrix | np.ndarray,
    subsample_size: int = DEFAULT_SUBSAMPLE,
    tree_count: int = DEFAULT_TREES,
    seed: int = 0,
) -> ForestModel:
    x = embeddings.data if isinstance(embeddings, EmbeddingMatrix) else np.asarray(embeddings)
    x = x.astype(np.float64, copy=False)
    n = x.shape[0]
    if subsample_size < 2:
        raise AssetError(f"subsample size must be >= 2, got {subsample_size}")
    if subsample_size > n:
        raise AssetError(f"subsample size {subsample_size} exceeds row count {n}")
    if tree_count < 1:
        raise AssetError(f"tree count must be >= 1, got {tree_count}")
    height_limit = math.ceil(math.log2(subsample_size))
    trees = []
    for t in range(tree_count):
        rng = np.random.Generator(np.random.Philox(key=(int(seed) << 32) + t))
        idx = rng.choice(n, size=subsample_size, replace=False)
        trees.append(_grow_tree(x[idx], height_limit, rng))
    return ForestModel(
        trees=tuple(trees), subsample_size=subsample_size, dim=x.shape[1], seed=int(seed)
    )


def _tree_path_lengths(tree: IsolationTree, x: np.ndarray) -> np.ndarray:
    """h contribution of one tree for every row of x (level-synchronous)."""
    n = x.shape[0]
    h = np.zeros(n)
    node = np.zeros(n, dtype=np.int32)
    leaf_c = np.array([average_path_length(int(m)) for m in tree.size])
    active = np.arange(n)
    depth = 0
    while active.size:
        cur = node[active]
        is_leaf = tree.feature[cur] < 0
        leaf_rows = active[is_leaf]
        if leaf_rows.size:
            h[leaf_rows] = depth + leaf_c[node[leaf_rows]]
        active = active[~is_leaf]
        if active.size:
            cur = node[active]
            go_left = x[active, tree.feature[cur]] < tree.threshold[cur]
            node[active] = np.where(go_left, tree.left[cur], tree.right[cur])
        depth += 1
    return h


def score_many(model: ForestModel, x: np.ndarray) -> np.ndarray:
    """Raw anomaly score for each row of x."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.dim:
        raise AssetError(f"dimension mismatch: model dim {model.dim}, got {x.shape[1]}")
    total = np.zeros(x.shape[0])
    for tree in model.trees:
        total += _tree_path_lengths(tree, x)
    mean_h = total / model.tree_count
    return np.power(2.0, -mean_h / average_path_length(model.subsample_size))


def score(model: ForestModel, x: np.ndarray) -> float:
    """Raw anomaly score for a single point."""
    return float(score_many(model, np.asarray(x, dtype=np.float64)[None, :])[0])


def score_vocabulary(model: ForestModel, embeddings: EmbeddingMatrix | np.ndarray) -> AnomalyScores:
    x = embeddings.data if isinstance(embeddings, EmbeddingMatrix) else np.asarray(embeddings)
    raw = score_many(model, x)
    lo, hi = raw.min(), raw.max()
    if hi > lo:
        normalized = (raw - lo) / (hi - lo)
    else:
        normalized = np.zeros_like(raw)
    return AnomalyScores(raw=raw, normalized=normalized)


def save_scores(path: str, scores: AnomalyScores) -> None:
    """Score cache: JSONL {"id", "raw", "norm"}."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(scores.raw.shape[0]):
            fh.write(json.dumps(
                {"id": i, "raw": float(scores.raw[i]), "norm": float(scores.normalized[i])}
            ) + "\n")


def load_scores(path: str) -> AnomalyScores:
    raw: dict[int, float] = {}
    norm: dict[int, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                raw[int(obj["id"])] = float(obj["raw"])
                norm[int(obj["id"])] = float(obj["norm"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise AssetError(f"{path}: bad score entry on line {line_no}: {exc}") from exc
    if sorted(raw) != list(range(len(raw))):
        raise AssetError(f"{path}: score ids are not dense in [0, {len(raw)})")
    n = len(raw)
    return AnomalyScores(
        raw=np.array([raw[i] for i in range(n)]),
        normalized=np.array([norm[i] for i in range(n)]),
    )
