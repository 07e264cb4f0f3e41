"""Error taxonomy shared across the package.

The CLI maps these onto process exit codes: config errors exit 2, asset
errors exit 3, provider errors exit 4, anything else exits 5.
"""


class TokpenError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TokpenError):
    """Invalid run configuration (bad flags, missing required settings)."""


class AssetError(TokpenError):
    """A model asset (vocab, merges, embeddings, logprobs, dataset) is
    missing, malformed, or inconsistent with the other assets."""


class ProviderError(TokpenError):
    """A remote logprob provider failed (transport, HTTP status, or
    tokenization mismatch)."""
