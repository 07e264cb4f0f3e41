import json

import pytest

from toy_model import build_toy_model, build_toy_tokenizer


@pytest.fixture(scope="session")
def toy_tokenizer():
    return build_toy_tokenizer()


@pytest.fixture(scope="session")
def toy_model():
    return build_toy_model()


@pytest.fixture
def toy_dataset(tmp_path):
    path = tmp_path / "dataset.jsonl"
    rows = [
        {"id": "a", "text": "hug", "correct": True},
        {"id": "b", "text": "hug do", "correct": False},
        {"id": "c", "text": "do do hug", "correct": True},
    ]
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return str(path)
