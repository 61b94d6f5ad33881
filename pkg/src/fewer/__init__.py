"""Word error rate estimation from precomputed speech and text embeddings."""

__version__ = "0.1.0"
