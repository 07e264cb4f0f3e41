"""Shared helpers for the test suite (importable under a unique name)."""
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from tokpen.embed import EmbeddingMatrix

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures")


def make_embeddings(rows, dim=4, seed=0) -> EmbeddingMatrix:
    rng = np.random.default_rng(seed)
    return EmbeddingMatrix(data=rng.normal(0, 1, size=(rows, dim)).astype(np.float32))
