"""Scoring and embedding processes for the sentence-retrieval wire protocol."""

__version__ = "0.1.0"
