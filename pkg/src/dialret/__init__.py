"""Sentence retrieval for open-ended dialogues.

The package covers the full loop of a dialogue-grounded sentence
retrieval system: corpus ingestion and indexing (:mod:`dialret.corpus`),
dialogue distillation from threaded discussions (:mod:`dialret.dialogue`),
query-likelihood language models with turn mixtures (:mod:`dialret.lm`),
two-stage initial ranking (:mod:`dialret.retrieval`), rerankers and rank
fusion (:mod:`dialret.rerank`), external scorer processes
(:mod:`dialret.scorer`), weak supervision for training labels
(:mod:`dialret.weaklabel`), and evaluation with significance testing
(:mod:`dialret.evaluation`).
"""

__version__ = "0.1.0"
