"""Scoring and embedding backends.

Two families: a hashing backend that is fully deterministic and needs no
downloads, and a neural backend that loads the models pinned in
``model.lock``.  Both expose the same two operations: score a batch of
(query, text) pairs and embed a batch of texts.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from importlib import resources

DEFAULT_QUERY_TOKENS = 64
DEFAULT_TEXT_TOKENS = 112
DEFAULT_HASH_DIM = 256


class BackendUnavailable(RuntimeError):
    """The requested backend cannot run in this environment."""


@dataclass(frozen=True)
class ScorerConfig:
    """Inference settings shared by both operations.

    The token budgets mirror the client side's truncation; the server
    truncates again so oversized requests cannot change results.
    """

    model: str = ""
    device: str = "cpu"
    max_query_tokens: int = DEFAULT_QUERY_TOKENS
    max_text_tokens: int = DEFAULT_TEXT_TOKENS
    batch_size: int = 16

    def __post_init__(self) -> None:
        if self.max_query_tokens < 1:
            raise ValueError(f"max_query_tokens must be positive, got {self.max_query_tokens}")
        if self.max_text_tokens < 1:
            raise ValueError(f"max_text_tokens must be positive, got {self.max_text_tokens}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")


def read_lock() -> dict[str, str]:
    """Parse the pinned model identifiers shipped with the package."""
    text = resources.files("scorer_plugin").joinpath("model.lock").read_text("utf-8")
    entries: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"malformed lock line: {line!r}")
        entries[key.strip()] = value.strip()
    return entries


def truncate(text: str, budget: int) -> str:
    return " ".join(text.split()[:budget])


class HashingBackend:
    """Signed feature hashing over whitespace tokens.

    Embeddings are L2-normalized hashed bags of words; scores are the
    cosine between the query's and the text's vectors.  Everything is
    derived from SHA-256 digests, so results are identical across runs
    and platforms.
    """

    def __init__(self, config: ScorerConfig, dim: int = DEFAULT_HASH_DIM):
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        self.config = config
        self.dim = dim

    def _vector(self, text: str) -> list[float]:
        vector = [0.0] * self.dim
        for token in text.lower().split():
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dim
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vector[bucket] += sign
        norm = math.sqrt(sum(v * v for v in vector))
        if norm > 0.0:
            vector = [v / norm for v in vector]
        return vector

    def embed_batch(self, texts: list[str]) -> list[list[float]]:
        return [self._vector(truncate(t, self.config.max_text_tokens)) for t in texts]

    def score_batch(self, pairs: list[tuple[str, str]]) -> list[float]:
        scores = []
        for query, text in pairs:
            u = self._vector(truncate(query, self.config.max_query_tokens))
            v = self._vector(truncate(text, self.config.max_text_tokens))
            scores.append(sum(a * b for a, b in zip(u, v)))
        return scores


class NeuralScorer:
    """Cross-encoder relevance scoring with the pinned passage ranker."""

    def __init__(self, config: ScorerConfig):
        torch, transformers = _import_neural()
        name = config.model or read_lock()["score_model"]
        try:
            self.tokenizer = transformers.AutoTokenizer.from_pretrained(name)
            self.model = transformers.AutoModelForSequenceClassification.from_pretrained(name)
        except Exception as exc:
            raise BackendUnavailable(f"cannot load scoring model {name!r}: {exc}") from exc
        self.torch = torch
        self.config = config
        self.model.to(config.device)
        self.model.eval()

    def score_batch(self, pairs: list[tuple[str, str]]) -> list[float]:
        scores: list[float] = []
        cfg = self.config
        for start in range(0, len(pairs), cfg.batch_size):
            chunk = pairs[start : start + cfg.batch_size]
            queries = [truncate(q, cfg.max_query_tokens) for q, _ in chunk]
            texts = [truncate(t, cfg.max_text_tokens) for _, t in chunk]
            encoded = self.tokenizer(
                queries, texts, padding=True, truncation=True, max_length=512, return_tensors="pt"
            ).to(cfg.device)
            with self.torch.no_grad():
                logits = self.model(**encoded).logits
            scores.extend(float(v) for v in logits[:, 0].cpu())
        return scores


class NeuralEmbedder:
    """Mean-pooled, L2-normalized sentence embeddings with the pinned encoder."""

    def __init__(self, config: ScorerConfig):
        torch, transformers = _import_neural()
        name = config.model or read_lock()["embed_model"]
        try:
            self.tokenizer = transformers.AutoTokenizer.from_pretrained(name)
            self.model = transformers.AutoModel.from_pretrained(name)
        except Exception as exc:
            raise BackendUnavailable(f"cannot load embedding model {name!r}: {exc}") from exc
        self.torch = torch
        self.config = config
        self.model.to(config.device)
        self.model.eval()
        self.dim = int(self.model.config.hidden_size)

    def embed_batch(self, texts: list[str]) -> list[list[float]]:
        vectors: list[list[float]] = []
        cfg = self.config
        for start in range(0, len(texts), cfg.batch_size):
            chunk = [truncate(t, cfg.max_text_tokens) for t in texts[start : start + cfg.batch_size]]
            encoded = self.tokenizer(
                chunk, padding=True, truncation=True, max_length=512, return_tensors="pt"
            ).to(cfg.device)
            with self.torch.no_grad():
                hidden = self.model(**encoded).last_hidden_state
            mask = encoded["attention_mask"].unsqueeze(-1).to(hidden.dtype)
            pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1e-9)
            normalized = self.torch.nn.functional.normalize(pooled, p=2, dim=1)
            vectors.extend([float(v) for v in row] for row in normalized.cpu())
        return vectors


def _import_neural():
    try:
        import torch
        import transformers
    except ImportError as exc:
        raise BackendUnavailable(f"neural backend needs torch and transformers: {exc}") from exc
    return torch, transformers


def make_backend(mode: str, name: str, config: ScorerConfig, dim: int = DEFAULT_HASH_DIM):
    """Build the backend for ``mode`` ("score" or "embed").

    ``name`` selects the family: "hash" or "model".
    """
    if name == "hash":
        return HashingBackend(config, dim=dim)
    if name == "model":
        return NeuralScorer(config) if mode == "score" else NeuralEmbedder(config)
    raise ValueError(f"unknown backend {name!r}")
