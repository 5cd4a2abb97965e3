"""Rerankers over an initial sentence ranking and reciprocal rank fusion.

Every reranker returns a permutation of its input candidate set.  The
last-turn language model scores candidates by negative cross-entropy
against each sentence's Dirichlet-smoothed model; Okapi BM25 uses
sentence-level statistics with an IDF clamped at zero; external scoring
delegates to a child process speaking the scorer protocol; ExtFuse
queries the scorer once per dialogue turn and fuses the per-turn lists
with reciprocal rank fusion.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .corpus import CollectionStats, Corpus, analyze
from .dialogue import Dialogue, Turn
from .lm import cross_entropy, dirichlet, mle, restrict_to_vocab
from .retrieval import RankedList
from .scorer import truncate_tokens


@dataclass(frozen=True)
class BM25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self) -> None:
        if self.k1 <= 0:
            raise ValueError(f"k1 must be positive, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


@dataclass(frozen=True)
class RrfParams:
    """Reciprocal rank fusion settings: ``score(s) = sum_i w_i / (nu + rank_i(s))``."""

    nu: float = 60.0
    weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.nu <= 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.weights is not None:
            if any(w < 0 for w in self.weights):
                raise ValueError("rrf weights must be non-negative")
            if not any(w > 0 for w in self.weights):
                raise ValueError("rrf weights must not all be zero")


def _analyzed_turn(turn: Turn, corpus: Corpus) -> list[str]:
    tokens = analyze(turn.text, corpus.config, apply_stopwords=True)
    if not tokens:
        raise ValueError("last turn empty after analysis")
    return tokens


def rerank_lm(
    last_turn: Turn,
    candidates: RankedList,
    mu: float,
    corpus: Corpus,
    stats: CollectionStats,
) -> RankedList:
    """Reorder candidates by the last turn's query likelihood."""
    tokens = _analyzed_turn(last_turn, corpus)
    query = restrict_to_vocab(mle(tokens), stats)
    if not query:
        raise ValueError("last turn has no terms in the collection vocabulary")
    scores = {}
    for ref in candidates.item_ids():
        model = dirichlet(corpus.sentence_counts(ref), mu, stats)
        scores[ref] = -cross_entropy(query, model)
    return RankedList.from_scores(candidates.query_id, scores, tag="lm")


def rsj_idf(term: str, n_items: int, df: int) -> float:
    """Robertson/Sparck-Jones IDF clamped at zero."""
    return max(0.0, math.log((n_items - df + 0.5) / (df + 0.5)))


def rerank_bm25(
    last_turn: Turn,
    candidates: RankedList,
    params: BM25Params,
    corpus: Corpus,
    stats: CollectionStats,
) -> RankedList:
    """Okapi BM25 over the candidates with sentence-level statistics.

    Length normalization uses the collection-wide average sentence
    length so scores do not depend on the candidate pool.
    """
    tokens = _analyzed_turn(last_turn, corpus)
    qtf = Counter(tokens)
    idf = {
        term: rsj_idf(term, stats.sentence_count, stats.sf.get(term, 0)) for term in qtf
    }
    scores = {}
    for ref in candidates.item_ids():
        counts = corpus.sentence_counts(ref)
        length = sum(counts.values())
        norm = params.k1 * (1.0 - params.b + params.b * length / stats.avg_sentence_len)
        score = 0.0
        for term, q_count in qtf.items():
            tf = counts.get(term, 0)
            if tf == 0:
                continue
            score += q_count * idf[term] * tf * (params.k1 + 1.0) / (tf + norm)
        scores[ref] = score
    return RankedList.from_scores(candidates.query_id, scores, tag="bm25")


def rrf(lists: Sequence[RankedList], params: RrfParams = RrfParams()) -> RankedList:
    """Reciprocal rank fusion; items absent from a list contribute 0 for it."""
    if not lists:
        raise ValueError("rrf needs at least one input list")
    weights = params.weights if params.weights is not None else (1.0,) * len(lists)
    if len(weights) != len(lists):
        raise ValueError(f"got {len(weights)} weights for {len(lists)} lists")
    scores: dict[str, float] = {}
    for weight, ranking in zip(weights, lists):
        if weight == 0.0:
            for item in ranking.items:
                scores.setdefault(item.item_id, 0.0)
            continue
        for item in ranking.items:
            scores[item.item_id] = scores.get(item.item_id, 0.0) + weight / (
                params.nu + item.rank
            )
    return RankedList.from_scores(lists[0].query_id, scores, tag="rrf")


def rerank_external(
    query: str,
    candidates: RankedList,
    corpus: Corpus,
    handle,
) -> RankedList:
    """Score each candidate's text against ``query`` with an external scorer.

    Query and sentence text are truncated to the handle's token budgets
    before sending.  Any query string works here, so externally expanded
    queries can be evaluated by substitution.
    """
    query = truncate_tokens(query, handle.max_query_tokens)
    requests = [
        (ref, query, truncate_tokens(corpus.sentence_text(ref), handle.max_text_tokens))
        for ref in candidates.item_ids()
    ]
    scores = handle.score_batch(requests)
    return RankedList.from_scores(candidates.query_id, scores, tag="external")


def ext_fuse(
    dialogue: Dialogue,
    candidates: RankedList,
    corpus: Corpus,
    handle,
    params: RrfParams = RrfParams(),
) -> RankedList:
    """Fuse per-turn external rankings with uniform reciprocal rank fusion.

    Every turn including the last induces one ranking; turns with blank
    text are skipped.
    """
    queries = [turn.text for turn in dialogue.turns if turn.text.strip()]
    if not queries:
        raise ValueError("all turns empty")
    lists = [rerank_external(query, candidates, corpus, handle) for query in queries]
    fused = rrf(lists, RrfParams(nu=params.nu))
    return RankedList(fused.query_id, fused.items, tag="ext_fuse")
