import pytest

from tokpen_testutil import FIXTURES
from tokpen.tokenizer import MergeTable, Vocabulary


@pytest.fixture
def fixtures_dir() -> str:
    return FIXTURES


@pytest.fixture
def hug_vocab() -> Vocabulary:
    return Vocabulary(tokens=("h", "u", "g", "hu", "hug", " ", "▁"))


@pytest.fixture
def hug_merges() -> MergeTable:
    return MergeTable(merges=(("h", "u"), ("hu", "g")))
