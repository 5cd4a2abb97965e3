"""Unigram language models, Dirichlet smoothing, and dialogue turn mixtures.

Distributions are sparse ``term -> probability`` dicts.  Cross-entropy is
computed in natural log over the support of the query-side distribution,
so smoothed document-side models only ever need to be evaluated at query
terms.

Dialogue mixtures combine per-turn maximum-likelihood models.  The
document-retrieval mixture puts weight ``1 - beta`` on the first turn and
spreads ``beta`` uniformly over the rest.  The sentence-retrieval mixture
puts ``1 - beta`` on the last turn and spreads ``beta`` over earlier
turns with exponential-decay weights that favor recency.  Turns that are
empty after analysis are dropped and the remaining mixture weights are
renormalized; if every retained weight is zero the kept turns share the
weight uniformly (the limit of vanishing mixture weight).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from .corpus import CollectionStats

TermDist = dict[str, float]


def mle(tokens: Sequence[str]) -> TermDist:
    """Maximum-likelihood unigram distribution of a token sequence."""
    if not tokens:
        raise ValueError("cannot build an MLE model from empty text")
    n = len(tokens)
    return {term: count / n for term, count in Counter(tokens).items()}


class DirichletLM:
    """Dirichlet-smoothed unigram model of a text against a collection.

    ``p(w) = (c(w) + mu * p(w | collection)) / (length + mu)``.
    """

    def __init__(self, counts: Mapping[str, int], mu: float, stats: CollectionStats):
        if mu < 0:
            raise ValueError(f"mu must be non-negative, got {mu}")
        self.counts = counts
        self.length = sum(counts.values())
        if mu == 0 and self.length == 0:
            raise ValueError("unsmoothed model of empty text is undefined")
        self.mu = mu
        self.stats = stats

    def __call__(self, term: str) -> float:
        prior = self.stats.collection_prob(term)
        return (self.counts.get(term, 0) + self.mu * prior) / (self.length + self.mu)


def dirichlet(
    tokens_or_counts: Sequence[str] | Mapping[str, int],
    mu: float,
    stats: CollectionStats,
) -> DirichletLM:
    """Build a :class:`DirichletLM` from raw tokens or precomputed counts."""
    if isinstance(tokens_or_counts, Mapping):
        counts = tokens_or_counts
    else:
        counts = Counter(tokens_or_counts)
    return DirichletLM(counts, mu, stats)


def cross_entropy(p: Mapping[str, float], q: Callable[[str], float]) -> float:
    """``-sum over support(p) of p(w) * ln q(w)``.

    ``q`` is any term to probability callable.  A zero ``q`` probability
    at a supported term is an error rather than an infinity.
    """
    total = 0.0
    for term, weight in p.items():
        if weight == 0.0:
            continue
        prob = q(term)
        if prob <= 0.0:
            raise ValueError(f"zero probability under target model for term {term!r}")
        total -= weight * math.log(prob)
    return total


@dataclass(frozen=True)
class DecayParams:
    """Exponential decay around a pivot: weight of index i is proportional
    to ``delta * exp(-delta * |pivot - i|)``, normalized over ``indices``."""

    delta: float
    pivot: int
    indices: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.indices:
            raise ValueError("decay weights need at least one index")


def decay_weights(params: DecayParams) -> dict[int, float]:
    """Normalized decay weights keyed by turn index."""
    raw = {
        i: params.delta * math.exp(-params.delta * abs(params.pivot - i))
        for i in params.indices
    }
    total = sum(raw.values())
    return {i: w / total for i, w in raw.items()}


def mix(components: Iterable[tuple[float, Sequence[str]]]) -> TermDist:
    """Weighted mixture of per-turn MLE models.

    Empty turns are dropped and the surviving weights renormalized; an
    all-zero surviving weight vector falls back to uniform.  Raises if
    every turn is empty.
    """
    kept = [(weight, tokens) for weight, tokens in components if tokens]
    if not kept:
        raise ValueError("all turns empty after analysis")
    total = sum(weight for weight, _ in kept)
    if total <= 0.0:
        weights = [1.0 / len(kept)] * len(kept)
    else:
        weights = [weight / total for weight, _ in kept]
    mixture: TermDist = {}
    for weight, (_, tokens) in zip(weights, kept):
        if weight == 0.0:
            continue
        for term, prob in mle(tokens).items():
            mixture[term] = mixture.get(term, 0.0) + weight * prob
    return mixture


def restrict_to_vocab(dist: Mapping[str, float], stats: CollectionStats) -> TermDist:
    """Drop terms absent from the collection and renormalize.

    Out-of-vocabulary terms have zero probability under every smoothed
    collection model, so cross-entropy against them is undefined; they
    are also in no document, so dropping them cannot change which
    documents are candidates.  Returns an empty dict when nothing
    survives.
    """
    kept = {term: p for term, p in dist.items() if stats.cf.get(term, 0) > 0 and p > 0.0}
    total = sum(kept.values())
    if total <= 0.0:
        return {}
    return {term: p / total for term, p in kept.items()}


def doc_mixture(turns: Sequence[Sequence[str]], beta: float) -> TermDist:
    """Dialogue model for document retrieval.

    Weight ``1 - beta`` on the opening turn, ``beta / (n - 1)`` on each
    later turn.  A single-turn dialogue uses the opening turn alone.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    n = len(turns)
    if n == 0:
        raise ValueError("dialogue has no turns")
    if n == 1:
        return mix([(1.0, turns[0])])
    rest = beta / (n - 1)
    components = [(1.0 - beta, turns[0])]
    components += [(rest, t) for t in turns[1:]]
    return mix(components)


def sent_mixture(turns: Sequence[Sequence[str]], beta: float, delta: float) -> TermDist:
    """Dialogue model for sentence retrieval.

    Weight ``1 - beta`` on the last turn; earlier turns share ``beta``
    with exponential-decay weights pivoted at the next-to-last turn.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    n = len(turns)
    if n == 0:
        raise ValueError("dialogue has no turns")
    if n == 1:
        return mix([(1.0, turns[0])])
    alpha = decay_weights(DecayParams(delta, pivot=n - 1, indices=tuple(range(1, n))))
    components = [(1.0 - beta, turns[-1])]
    components += [(beta * alpha[i], turns[i - 1]) for i in range(1, n)]
    return mix(components)


def history_future_mixtures(
    history: Sequence[Sequence[str]],
    future: Sequence[Sequence[str]],
    delta: float,
) -> tuple[TermDist, TermDist]:
    """Decay mixtures over a conversation's history and its future turns.

    With ``n`` history turns the history mixture decays from pivot ``n``
    over indices ``1..n`` (recent turns weigh more).  Future turns occupy
    indices ``n+2`` onward, with the pivot at ``n+2`` (the turn right
    after the target), so earlier future turns weigh more.
    """
    n = len(history)
    if n == 0:
        raise ValueError("history mixture needs at least one turn")
    if not future:
        raise ValueError("future mixture needs at least one turn")
    h_alpha = decay_weights(DecayParams(delta, pivot=n, indices=tuple(range(1, n + 1))))
    h_mix = mix([(h_alpha[i], history[i - 1]) for i in range(1, n + 1)])
    first = n + 2
    indices = tuple(range(first, first + len(future)))
    f_alpha = decay_weights(DecayParams(delta, pivot=first, indices=indices))
    f_mix = mix([(f_alpha[i], future[i - first]) for i in indices])
    return h_mix, f_mix
