"""Tokenization penalty toolkit.

Scores how badly a subword tokenizer fragments natural (purely alphabetic)
words for a given model, and statistically tests whether higher penalties
go together with model errors.
"""

__version__ = "0.1.0"
