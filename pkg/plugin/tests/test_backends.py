"""Unit tests for the backends and the pinned-model lock file."""

import math

import pytest

from scorer_plugin.backends import (
    DEFAULT_HASH_DIM,
    HashingBackend,
    ScorerConfig,
    make_backend,
    read_lock,
    truncate,
)


def test_config_defaults_match_the_wire_budgets():
    config = ScorerConfig()
    assert config.max_query_tokens == 64
    assert config.max_text_tokens == 112
    assert config.device == "cpu"


@pytest.mark.parametrize(
    "kwargs",
    [{"max_query_tokens": 0}, {"max_text_tokens": -1}, {"batch_size": 0}],
)
def test_config_rejects_nonpositive_limits(kwargs):
    with pytest.raises(ValueError):
        ScorerConfig(**kwargs)


def test_truncate_keeps_a_token_budget():
    assert truncate("a b c d", 2) == "a b"
    assert truncate("  a   b  ", 5) == "a b"
    assert truncate("", 3) == ""


def test_lock_file_pins_both_models():
    lock = read_lock()
    assert set(lock) == {"score_model", "embed_model"}
    assert all("/" in name for name in lock.values())


def test_hash_vectors_are_unit_norm_and_deterministic():
    backend = HashingBackend(ScorerConfig())
    u = backend.embed_batch(["panels convert light"])[0]
    v = backend.embed_batch(["panels convert light"])[0]
    assert u == v
    assert len(u) == DEFAULT_HASH_DIM
    assert abs(sum(a * a for a in u) - 1.0) <= 1e-9


def test_hash_empty_text_embeds_to_zero():
    backend = HashingBackend(ScorerConfig())
    assert backend.embed_batch([""])[0] == [0.0] * DEFAULT_HASH_DIM
    assert backend.score_batch([("query", "")]) == [0.0]


def test_hash_score_is_the_cosine_of_the_two_vectors():
    backend = HashingBackend(ScorerConfig())
    query, text = "solar energy storage", "storage of solar output"
    u = backend._vector(query)
    v = backend._vector(text)
    (score,) = backend.score_batch([(query, text)])
    assert score == pytest.approx(sum(a * b for a, b in zip(u, v)), abs=1e-12)
    assert backend.score_batch([(text, text)])[0] == pytest.approx(1.0, abs=1e-6)


def test_hash_scoring_ignores_tokens_past_the_budgets():
    backend = HashingBackend(ScorerConfig(max_query_tokens=2, max_text_tokens=3))
    full = backend.score_batch([("a b IGNORED", "c d e IGNORED")])
    clipped = backend.score_batch([("a b", "c d e")])
    assert full == clipped


def test_hash_is_case_insensitive():
    backend = HashingBackend(ScorerConfig())
    assert backend._vector("Solar Panel") == backend._vector("solar panel")


def test_hash_dimension_is_validated():
    with pytest.raises(ValueError, match="dim"):
        HashingBackend(ScorerConfig(), dim=0)


def test_make_backend_selects_families():
    config = ScorerConfig()
    assert isinstance(make_backend("score", "hash", config), HashingBackend)
    assert make_backend("embed", "hash", config, dim=8).dim == 8
    with pytest.raises(ValueError, match="unknown backend"):
        make_backend("score", "tarot", config)
