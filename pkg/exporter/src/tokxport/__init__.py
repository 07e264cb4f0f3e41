"""tokxport: dump a locally loadable causal LM's tokenizer, output
embeddings, and per-instance token log-probabilities in the exact file
formats the tokpen analysis pipeline consumes."""

__version__ = "0.1.0"


class ExportError(RuntimeError):
    """Model assets cannot be exported in a form the consumer accepts."""
