"""Two-stage initial ranker: document retrieval, sentence scoring, blending.

Stage one scores documents by the negative cross-entropy between the
dialogue's document mixture and each document's Dirichlet-smoothed model,
using term-at-a-time postings so only documents sharing at least one
query term are scored.  Stage two scores every sentence of the top
documents against the dialogue's sentence mixture.  Both score sets are
min-max normalized and blended: ``(1 - gamma) * doc + gamma * sentence``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, NamedTuple, Sequence

from .corpus import (
    REF_SEP,
    AnalyzerConfig,
    CollectionStats,
    Corpus,
    InvertedIndex,
    SentenceRef,
    analyze,
)
from .dialogue import Dialogue
from .lm import cross_entropy, dirichlet, doc_mixture, restrict_to_vocab, sent_mixture


class RankedItem(NamedTuple):
    item_id: str
    score: float
    rank: int


def item_sort_key(item_id: str):
    """Canonical tie-break key: sentence refs order by their parsed
    (doc, section, index) triple, other ids lexicographically."""
    parts = item_id.split(REF_SEP)
    if len(parts) == 3 and parts[2].isdigit():
        return (parts[0], parts[1], int(parts[2]))
    return (item_id,)


class RankedList:
    """An ordered ranking: scores non-increasing, ranks consecutive from 1,
    item ids unique, ties broken by ascending item id."""

    def __init__(self, query_id: str, items: Sequence[RankedItem], tag: str = "run"):
        self.query_id = query_id
        self.items = list(items)
        self.tag = tag
        self._ranks: dict[str, int] | None = None

    @classmethod
    def from_scores(
        cls,
        query_id: str,
        scores: Mapping[str, float],
        tag: str = "run",
        limit: int | None = None,
    ) -> "RankedList":
        ordered = sorted(scores.items(), key=lambda kv: (-kv[1], item_sort_key(kv[0])))
        if limit is not None:
            ordered = ordered[:limit]
        items = [RankedItem(item_id, score, rank) for rank, (item_id, score) in enumerate(ordered, 1)]
        return cls(query_id, items, tag=tag)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def item_ids(self) -> list[str]:
        return [item.item_id for item in self.items]

    def _rank_map(self) -> dict[str, int]:
        if self._ranks is None:
            self._ranks = {item.item_id: item.rank for item in self.items}
        return self._ranks

    def rank_of(self, item_id: str) -> int | None:
        return self._rank_map().get(item_id)

    def score_of(self, item_id: str) -> float | None:
        for item in self.items:
            if item.item_id == item_id:
                return item.score
        return None

    def retag(self, tag: str) -> "RankedList":
        return RankedList(self.query_id, self.items, tag=tag)


def write_run(target: str | IO[str], lists: Iterable[RankedList]) -> None:
    """Write rankings in the 6-column run format:
    ``query_id Q0 item_id rank score tag``."""
    if isinstance(target, str):
        with open(target, "w", encoding="utf-8") as fh:
            write_run(fh, lists)
        return
    for ranking in lists:
        for item in ranking.items:
            target.write(
                f"{ranking.query_id} Q0 {item.item_id} {item.rank} {item.score!r} {ranking.tag}\n"
            )


def read_run(source: str | Iterable[str]) -> dict[str, RankedList]:
    """Read a run file into a mapping from query id to :class:`RankedList`."""
    if isinstance(source, str):
        with open(source, encoding="utf-8") as fh:
            return read_run(list(fh))
    per_query: dict[str, list[RankedItem]] = {}
    tags: dict[str, str] = {}
    for lineno, line in enumerate(source, start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 6 or fields[1] != "Q0":
            raise ValueError(f"line {lineno}: expected 'query_id Q0 item_id rank score tag'")
        qid, _, item_id, rank, score, tag = fields
        try:
            parsed = RankedItem(item_id, float(score), int(rank))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad rank or score: {exc}") from exc
        per_query.setdefault(qid, []).append(parsed)
        tags[qid] = tag
    runs = {}
    for qid, items in per_query.items():
        items.sort(key=lambda item: item.rank)
        for expected, item in enumerate(items, 1):
            if item.rank != expected:
                raise ValueError(f"query {qid!r}: ranks not consecutive from 1")
        runs[qid] = RankedList(qid, items, tag=tags[qid])
    return runs


@dataclass(frozen=True)
class InitialRankerParams:
    beta: float = 0.3
    gamma: float = 0.75
    mu: float = 1000.0
    delta: float = 0.01
    k_docs: int = 1000
    k_sents: int = 50

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.mu < 0:
            raise ValueError(f"mu must be non-negative, got {self.mu}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.k_docs < 1 or self.k_sents < 1:
            raise ValueError("k_docs and k_sents must be at least 1")


def analyzed_turns(dialogue: Dialogue, config: AnalyzerConfig) -> list[list[str]]:
    """Analyze dialogue turns with stopword removal (dialogue-side text)."""
    return [analyze(turn.text, config, apply_stopwords=True) for turn in dialogue.turns]


def _require_nonempty(turns: Sequence[Sequence[str]]) -> None:
    if not any(turns):
        raise ValueError("dialogue empty after analysis")


def retrieve_documents(
    dialogue: Dialogue,
    params: InitialRankerParams,
    index: InvertedIndex,
    stats: CollectionStats,
    config: AnalyzerConfig,
) -> RankedList:
    """Top ``k_docs`` documents by the document-mixture query likelihood.

    Candidates are the documents containing at least one query term; a
    query whose every term is out of vocabulary yields an empty list.
    """
    turns = analyzed_turns(dialogue, config)
    _require_nonempty(turns)
    query = restrict_to_vocab(doc_mixture(turns, params.beta), stats)
    if not query:
        return RankedList(dialogue.dialogue_id, [], tag="initial-docs")
    candidate_tf: dict[str, dict[str, int]] = {}
    for term in query:
        for doc_id, tf in index.doc_tf(term):
            candidate_tf.setdefault(doc_id, {})[term] = tf
    scores = {}
    for doc_id, tf in candidate_tf.items():
        length = index.doc_lengths[doc_id]
        score = 0.0
        for term, p in query.items():
            prob = (tf.get(term, 0) + params.mu * stats.collection_prob(term)) / (
                length + params.mu
            )
            score += p * math.log(prob)
        scores[doc_id] = score
    return RankedList.from_scores(
        dialogue.dialogue_id, scores, tag="initial-docs", limit=params.k_docs
    )


def score_sentences(
    dialogue: Dialogue,
    docs: RankedList,
    params: InitialRankerParams,
    corpus: Corpus,
    stats: CollectionStats,
    config: AnalyzerConfig,
) -> tuple[dict[str, float], dict[str, float]]:
    """Direct sentence scores over all sentences of the retrieved documents.

    Returns ``(doc_scores, sentence_scores)``; sentences empty after
    analysis are excluded from the candidate set.
    """
    turns = analyzed_turns(dialogue, config)
    _require_nonempty(turns)
    query = restrict_to_vocab(sent_mixture(turns, params.beta, params.delta), stats)
    doc_scores = {item.item_id: item.score for item in docs.items}
    if not query:
        return doc_scores, {}
    sent_scores: dict[str, float] = {}
    for item in docs.items:
        for ref in corpus.sentences_of_document(item.item_id):
            counts = corpus.sentence_counts(ref)
            length = corpus.sentence_length(ref)
            if length < 1:
                continue
            model = dirichlet(counts, params.mu, stats)
            sent_scores[ref] = -cross_entropy(query, model)
    return doc_scores, sent_scores


def minmax_normalize(scores: Mapping[str, float]) -> dict[str, float]:
    """Scale scores to [0, 1]; a constant list maps everything to 0.5."""
    if not scores:
        raise ValueError("cannot normalize an empty score list")
    low = min(scores.values())
    high = max(scores.values())
    if high == low:
        return {item: 0.5 for item in scores}
    span = high - low
    return {item: (value - low) / span for item, value in scores.items()}


def final_rank(
    dialogue: Dialogue,
    params: InitialRankerParams,
    corpus: Corpus,
    index: InvertedIndex,
    stats: CollectionStats,
    config: AnalyzerConfig,
    tag: str = "initial",
) -> RankedList:
    """Full two-stage ranking: top ``k_sents`` sentences by the blended score
    ``(1 - gamma) * normalized doc score + gamma * normalized sentence score``."""
    docs = retrieve_documents(dialogue, params, index, stats, config)
    if not docs.items:
        return RankedList(dialogue.dialogue_id, [], tag=tag)
    doc_scores, sent_scores = score_sentences(dialogue, docs, params, corpus, stats, config)
    if not sent_scores:
        return RankedList(dialogue.dialogue_id, [], tag=tag)
    norm_docs = minmax_normalize(doc_scores)
    norm_sents = minmax_normalize(sent_scores)
    blended = {}
    for ref, sent_score in norm_sents.items():
        doc_id = SentenceRef.parse(ref).doc_id
        blended[ref] = (1.0 - params.gamma) * norm_docs[doc_id] + params.gamma * sent_score
    return RankedList.from_scores(dialogue.dialogue_id, blended, tag=tag, limit=params.k_sents)
