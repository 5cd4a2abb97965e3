"""Run configuration: built-in defaults, key=value files, overrides.

Precedence is command-line flag over config file over built-in default.
The config file is plain text, one ``key=value`` per line, ``#`` starts
a comment.  The environment variable ``DIALRET_CONFIG`` may point at a
config file; it is the only environment override.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping

from .rerank import BM25Params
from .retrieval import InitialRankerParams
from .weaklabel import FusedLmParams

CONFIG_ENV_VAR = "DIALRET_CONFIG"


@dataclass
class Config:
    # input paths; commands may override with flags
    corpus: str | None = None
    index: str | None = None
    threads: str | None = None
    stopwords: str | None = None
    blocklist: str | None = None
    # analyzer
    stemmer: str = "light"
    # initial ranker
    beta: float = 0.3
    gamma: float = 0.75
    mu: float = 1000.0
    delta: float = 0.01
    k_docs: int = 1000
    k_sents: int = 50
    weak_k_sents: int = 1000
    # fusion and weak labels
    nu: float = 60.0
    lam: float = 0.3
    m_future: int = 4
    k_labels: int = 3
    # bm25
    k1: float = 1.2
    b: float = 0.75
    # external scorer
    scorer_timeout: float = 30.0
    max_query_tokens: int = 64
    max_text_tokens: int = 112
    # evaluation
    n_splits: int = 50
    n_permutations: int = 10000
    alpha: float = 0.05
    # all randomness flows from this seed
    seed: int = 0

    def initial_params(self, k_sents: int | None = None) -> InitialRankerParams:
        return InitialRankerParams(
            beta=self.beta,
            gamma=self.gamma,
            mu=self.mu,
            delta=self.delta,
            k_docs=self.k_docs,
            k_sents=self.k_sents if k_sents is None else k_sents,
        )

    def bm25_params(self) -> BM25Params:
        return BM25Params(k1=self.k1, b=self.b)

    def fused_params(self) -> FusedLmParams:
        return FusedLmParams(
            lam=self.lam, nu=self.nu, delta=self.delta, m_future=self.m_future
        )


_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False}


def _coerce(key: str, raw: str, target_type) -> object:
    try:
        if target_type is bool:
            if raw.lower() not in _BOOL_VALUES:
                raise ValueError("expected true/false")
            return _BOOL_VALUES[raw.lower()]
        return target_type(raw)
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r}: {exc}") from exc


def parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
            key, value = stripped.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def build_config(
    file_values: Mapping[str, str] | None = None,
    overrides: Mapping[str, object] | None = None,
) -> Config:
    """Merge file values and overrides onto defaults and validate ranges."""
    known = {f.name: f for f in dataclasses.fields(Config)}
    merged: dict[str, object] = {}
    for key, raw in (file_values or {}).items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        field = known[key]
        target = str if field.type in ("str | None", "str") else field.default.__class__
        merged[key] = _coerce(key, raw, target)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        merged[key] = value
    config = Config(**merged)
    _validate(config)
    return config


def _validate(config: Config) -> None:
    # range checks live in the parameter types themselves
    config.initial_params()
    config.initial_params(k_sents=config.weak_k_sents)
    config.bm25_params()
    config.fused_params()
    if config.k_labels < 1:
        raise ValueError(f"k_labels must be at least 1, got {config.k_labels}")
    if config.scorer_timeout <= 0:
        raise ValueError(f"scorer_timeout must be positive, got {config.scorer_timeout}")
    if config.max_query_tokens < 1 or config.max_text_tokens < 1:
        raise ValueError("token budgets must be at least 1")
    if config.n_splits < 1:
        raise ValueError(f"n_splits must be at least 1, got {config.n_splits}")
    if config.n_permutations < 1:
        raise ValueError(f"n_permutations must be at least 1, got {config.n_permutations}")
    if not 0.0 < config.alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {config.alpha}")


def describe(config: Config) -> str:
    parts = []
    for field in dataclasses.fields(Config):
        value = getattr(config, field.name)
        if value is not None:
            parts.append(f"{field.name}={value}")
    return " ".join(parts)
