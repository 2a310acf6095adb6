"""Fine-tunes a transformer causal LM on harness corpora, via file contracts only."""

__version__ = "0.1.0"
