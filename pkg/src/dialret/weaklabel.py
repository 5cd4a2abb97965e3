"""Weak supervision: four annotators, rank fusion, pseudo-label selection.

A training conversation (history, grounded target, future turns) is
turned into pseudo-labels in four steps: the initial ranker retrieves a
large candidate list; candidates are restricted to the documents the
target points into; four annotators rank that pool (TF-IDF cosine,
embedding cosine, a fused query-likelihood ranker over history, target,
and future, and a fused external-scorer ranker); the annotator rankings
are fused with uniform reciprocal rank fusion.  The top-k fused
sentences inside a pointed section become pseudo-relevant, the bottom-k
sentences of pointed documents outside every pointed section become
pseudo-nonrelevant.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Mapping, MutableMapping, Sequence

from .corpus import CollectionStats, Corpus, InvertedIndex, SentenceRef, analyze
from .dialogue import Dialogue, GroundedLink, select_training_conversations
from .lm import cross_entropy, decay_weights, DecayParams, dirichlet, history_future_mixtures, mle, restrict_to_vocab
from .rerank import RrfParams, rrf, rsj_idf
from .retrieval import InitialRankerParams, RankedList, final_rank
from .scorer import StubEmbedder, StubScorer, truncate_tokens

log = logging.getLogger(__name__)

LABEL_RELEVANT = "pos"
LABEL_NONRELEVANT = "neg"

ANNOTATORS = ("tfidf", "embed", "fused_lm", "fused_scorer")


@dataclass(frozen=True)
class FusedLmParams:
    """Settings of the three-list fusion ``(lam/2)/(nu+r_h) +
    (1-lam)/(nu+r_target) + (lam/2)/(nu+r_f)`` and its decay mixtures."""

    lam: float = 0.3
    nu: float = 60.0
    delta: float = 0.01
    m_future: int = 4

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if self.nu <= 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.m_future < 1:
            raise ValueError(f"m_future must be at least 1, got {self.m_future}")


@dataclass
class TrainingExample:
    """A conversation with its pointed links and initial-ranker candidates."""

    conversation: Dialogue
    pointed_links: list[GroundedLink]
    candidates: RankedList

    def pointed_sections(self) -> set[tuple[str, str]]:
        return {(l.doc_id, l.section_id) for l in self.pointed_links}

    def pointed_documents(self) -> set[str]:
        return {l.doc_id for l in self.pointed_links}

    def pool(self) -> list[str]:
        """Candidates restricted to pointed documents, in candidate order."""
        docs = self.pointed_documents()
        return [
            ref
            for ref in self.candidates.item_ids()
            if SentenceRef.parse(ref).doc_id in docs
        ]


@dataclass(frozen=True)
class PseudoLabel:
    sentence: str
    label: str
    fused_score: float
    provenance: Mapping[str, int] = field(default_factory=dict)


def cosine(u: Mapping[str, float] | Sequence[float], v) -> float:
    """Cosine similarity for sparse mappings or dense vectors; 0 when
    either side has zero norm."""
    if isinstance(u, Mapping) != isinstance(v, Mapping):
        raise ValueError("cosine operands must share a representation")
    if isinstance(u, Mapping):
        dot = sum(weight * v.get(term, 0.0) for term, weight in u.items())
        nu = math.sqrt(sum(w * w for w in u.values()))
        nv = math.sqrt(sum(w * w for w in v.values()))
    else:
        if len(u) != len(v):
            raise ValueError(f"dimension mismatch: {len(u)} vs {len(v)}")
        dot = sum(a * b for a, b in zip(u, v))
        nu = math.sqrt(sum(a * a for a in u))
        nv = math.sqrt(sum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return dot / (nu * nv)


def tfidf_vector(counts: Mapping[str, int], stats: CollectionStats) -> dict[str, float]:
    """TF times RSJ IDF at sentence granularity."""
    return {
        term: tf * rsj_idf(term, stats.sentence_count, stats.sf.get(term, 0))
        for term, tf in counts.items()
    }


def tfidf_cosine(
    target_counts: Mapping[str, int],
    sentence_counts: Mapping[str, int],
    stats: CollectionStats,
) -> float:
    """Cosine of TF-IDF vectors; a zero vector on either side scores 0."""
    return cosine(tfidf_vector(target_counts, stats), tfidf_vector(sentence_counts, stats))


def embed_cosine(target_text: str, sentence_text: str, embedder) -> float:
    """Cosine of the embedder's vectors for target and sentence.

    The target is truncated to the embedder's query budget, the sentence
    to its text budget.
    """
    vectors = embedder.embed_batch(
        [
            ("target", truncate_tokens(target_text, embedder.max_query_tokens)),
            ("sentence", truncate_tokens(sentence_text, embedder.max_text_tokens)),
        ]
    )
    return cosine(vectors["target"], vectors["sentence"])


def _dialogue_token_views(conv: Dialogue, corpus: Corpus, m_future: int):
    config = corpus.config
    history = [analyze(t.text, config, apply_stopwords=True) for t in conv.turns]
    target = analyze(conv.target_turn.text, config, apply_stopwords=True)
    future = [
        analyze(t.text, config, apply_stopwords=True)
        for t in conv.future_turns[:m_future]
    ]
    return history, target, future


def _ce_ranking(
    query: Mapping[str, float],
    pool: Sequence[str],
    mu: float,
    corpus: Corpus,
    stats: CollectionStats,
    query_id: str,
    tag: str,
) -> RankedList:
    restricted = restrict_to_vocab(query, stats)
    if not restricted:
        raise ValueError(f"{tag} query has no terms in the collection vocabulary")
    scores = {}
    for ref in pool:
        model = dirichlet(corpus.sentence_counts(ref), mu, stats)
        scores[ref] = -cross_entropy(restricted, model)
    return RankedList.from_scores(query_id, scores, tag=tag)


def _fuse_three(
    l_history: RankedList,
    l_target: RankedList,
    l_future: RankedList,
    lam: float,
    nu: float,
    tag: str,
) -> RankedList:
    weights = (lam / 2.0, 1.0 - lam, lam / 2.0)
    scores: dict[str, float] = {}
    for weight, ranking in zip(weights, (l_history, l_target, l_future)):
        for item in ranking.items:
            scores.setdefault(item.item_id, 0.0)
            if weight > 0.0:
                scores[item.item_id] += weight / (nu + item.rank)
    return RankedList.from_scores(l_target.query_id, scores, tag=tag)


def fused_lm(
    example: TrainingExample,
    params: FusedLmParams,
    mu: float,
    corpus: Corpus,
    stats: CollectionStats,
) -> RankedList:
    """Fuse query-likelihood rankings by history mixture, target, and
    future mixture over the pointed-document pool."""
    conv = example.conversation
    pool = example.pool()
    history, target, future = _dialogue_token_views(conv, corpus, params.m_future)
    h_mix, f_mix = history_future_mixtures(history, future, params.delta)
    if not target:
        raise ValueError("target turn empty after analysis")
    qid = conv.dialogue_id
    l_h = _ce_ranking(h_mix, pool, mu, corpus, stats, qid, "fused_lm-history")
    l_t = _ce_ranking(mle(target), pool, mu, corpus, stats, qid, "fused_lm-target")
    l_f = _ce_ranking(f_mix, pool, mu, corpus, stats, qid, "fused_lm-future")
    return _fuse_three(l_h, l_t, l_f, params.lam, params.nu, tag="fused_lm")


def _weighted_rank_fusion(
    lists: Sequence[RankedList],
    weights: Sequence[float],
    nu: float,
    query_id: str,
    tag: str,
) -> RankedList:
    scores: dict[str, float] = {}
    for weight, ranking in zip(weights, lists):
        for item in ranking.items:
            scores.setdefault(item.item_id, 0.0)
            if weight > 0.0:
                scores[item.item_id] += weight / (nu + item.rank)
    return RankedList.from_scores(query_id, scores, tag=tag)


def fused_scorer(
    example: TrainingExample,
    handle,
    params: FusedLmParams,
    corpus: Corpus,
) -> RankedList:
    """External-scorer analogue of :func:`fused_lm`.

    Each turn of the conversation (history, target, capped future)
    induces a scorer ranking of the pool.  History lists are fused with
    decay weights pivoted at the last history turn, future lists with
    decay weights pivoted at the first future turn, and the three
    resulting lists are fused like the query-likelihood variant.  Turns
    with blank text are skipped and the decay weights renormalized.
    """
    conv = example.conversation
    pool = example.pool()
    qid = conv.dialogue_id
    n = len(conv.turns)
    texts = {ref: truncate_tokens(corpus.sentence_text(ref), handle.max_text_tokens) for ref in pool}

    def turn_list(turn_text: str, tag: str) -> RankedList:
        query = truncate_tokens(turn_text, handle.max_query_tokens)
        requests = [(ref, query, texts[ref]) for ref in pool]
        return RankedList.from_scores(qid, handle.score_batch(requests), tag=tag)

    history_lists: dict[int, RankedList] = {}
    for position, turn in enumerate(conv.turns, start=1):
        if turn.text.strip():
            history_lists[position] = turn_list(turn.text, f"scorer-turn-{position}")
    if not history_lists:
        raise ValueError("all history turns empty")
    if not conv.target_turn.text.strip():
        raise ValueError("target turn empty")
    l_t = turn_list(conv.target_turn.text, "scorer-target")
    future_lists: dict[int, RankedList] = {}
    for offset, turn in enumerate(conv.future_turns[: params.m_future]):
        position = n + 2 + offset
        if turn.text.strip():
            future_lists[position] = turn_list(turn.text, f"scorer-turn-{position}")
    if not future_lists:
        raise ValueError("all future turns empty")
    h_alpha = decay_weights(
        DecayParams(params.delta, pivot=n, indices=tuple(sorted(history_lists)))
    )
    f_alpha = decay_weights(
        DecayParams(params.delta, pivot=n + 2, indices=tuple(sorted(future_lists)))
    )
    l_h = _weighted_rank_fusion(
        [history_lists[i] for i in sorted(history_lists)],
        [h_alpha[i] for i in sorted(history_lists)],
        params.nu,
        qid,
        "scorer-history",
    )
    l_f = _weighted_rank_fusion(
        [future_lists[i] for i in sorted(future_lists)],
        [f_alpha[i] for i in sorted(future_lists)],
        params.nu,
        qid,
        "scorer-future",
    )
    return _fuse_three(l_h, l_t, l_f, params.lam, params.nu, tag="fused_scorer")


def fuse_annotators(lists: Sequence[RankedList], nu: float = 60.0) -> RankedList:
    """Uniform reciprocal rank fusion of annotator rankings sharing a pool."""
    if len(lists) < 2:
        raise ValueError("annotator fusion needs at least two lists")
    pools = [frozenset(l.item_ids()) for l in lists]
    if any(pool != pools[0] for pool in pools[1:]):
        raise ValueError("annotator pools differ")
    fused = rrf(lists, RrfParams(nu=nu))
    return RankedList(fused.query_id, fused.items, tag="weak_fused")


def select_pseudo_labels(
    example: TrainingExample,
    fused: RankedList,
    k: int,
    annotator_lists: Mapping[str, RankedList] | None = None,
) -> list[PseudoLabel]:
    """Top-k pointed-section sentences become pseudo-relevant, bottom-k
    pointed-document sentences outside every pointed section become
    pseudo-nonrelevant.  Fewer than k available: emit what exists.
    Candidates outside pointed documents are never labeled.
    """
    sections = example.pointed_sections()
    docs = example.pointed_documents()
    in_section = []
    in_doc_only = []
    for item in fused.items:
        ref = SentenceRef.parse(item.item_id)
        if (ref.doc_id, ref.section_id) in sections:
            in_section.append(item)
        elif ref.doc_id in docs:
            in_doc_only.append(item)

    def provenance(item_id: str) -> dict[str, int]:
        if not annotator_lists:
            return {}
        return {
            name: ranking.rank_of(item_id)
            for name, ranking in annotator_lists.items()
            if ranking.rank_of(item_id) is not None
        }

    labels = [
        PseudoLabel(item.item_id, LABEL_RELEVANT, item.score, provenance(item.item_id))
        for item in in_section[:k]
    ]
    labels += [
        PseudoLabel(item.item_id, LABEL_NONRELEVANT, item.score, provenance(item.item_id))
        for item in in_doc_only[-k:] if k > 0
    ]
    return labels


def annotate_example(
    example: TrainingExample,
    corpus: Corpus,
    stats: CollectionStats,
    params: FusedLmParams,
    mu: float,
    scorer,
    embedder,
) -> dict[str, RankedList]:
    """Run the four annotators over the example's pointed-document pool."""
    conv = example.conversation
    pool = example.pool()
    qid = conv.dialogue_id
    target_counts = Counter(
        analyze(conv.target_turn.text, corpus.config, apply_stopwords=True)
    )
    tfidf_scores = {
        ref: tfidf_cosine(target_counts, corpus.sentence_counts(ref), stats) for ref in pool
    }
    target_text = truncate_tokens(conv.target_turn.text, embedder.max_query_tokens)
    requests = [("target", target_text)] + [
        (ref, truncate_tokens(corpus.sentence_text(ref), embedder.max_text_tokens))
        for ref in pool
    ]
    vectors = embedder.embed_batch(requests)
    embed_scores = {ref: cosine(vectors["target"], vectors[ref]) for ref in pool}
    return {
        "tfidf": RankedList.from_scores(qid, tfidf_scores, tag="tfidf"),
        "embed": RankedList.from_scores(qid, embed_scores, tag="embed"),
        "fused_lm": fused_lm(example, params, mu, corpus, stats),
        "fused_scorer": fused_scorer(example, scorer, params, corpus),
    }


def build_training_set(
    threads: Iterable,
    corpus: Corpus,
    index: InvertedIndex,
    stats: CollectionStats,
    ranker_params: InitialRankerParams | None = None,
    fused_params: FusedLmParams = FusedLmParams(),
    k_labels: int = 3,
    scorer=None,
    embedder=None,
    counters: MutableMapping[str, int] | None = None,
) -> Iterator[tuple[Dialogue, list[PseudoLabel]]]:
    """End-to-end pseudo-label pipeline over a stream of threads.

    Conversations whose pointed sections receive no retrieved candidate
    are skipped; per-conversation failures are logged and counted, never
    fatal for the stream.
    """
    if ranker_params is None:
        ranker_params = InitialRankerParams(k_sents=1000)
    scorer = scorer or StubScorer()
    embedder = embedder or StubEmbedder()

    def bump(key: str) -> None:
        if counters is not None:
            counters[key] = counters.get(key, 0) + 1

    for conv in select_training_conversations(threads, corpus, counters):
        try:
            candidates = final_rank(
                conv, ranker_params, corpus, index, stats, corpus.config, tag="weak-initial"
            )
            links = list(conv.target_turn.links)
            sections = {(l.doc_id, l.section_id) for l in links}
            hit = any(
                (ref.doc_id, ref.section_id) in sections
                for ref in map(SentenceRef.parse, candidates.item_ids())
            )
            if not hit:
                bump("skipped_no_candidate_in_pointed_section")
                continue
            example = TrainingExample(conv, links, candidates)
            annotators = annotate_example(
                example, corpus, stats, fused_params, ranker_params.mu, scorer, embedder
            )
            fused = fuse_annotators(
                [annotators[name] for name in ANNOTATORS], nu=fused_params.nu
            )
            labels = select_pseudo_labels(example, fused, k_labels, annotators)
            bump("labeled_conversations")
            yield conv, labels
        except Exception:
            log.warning("skipping conversation %s", conv.dialogue_id, exc_info=True)
            bump("failed_conversations")


def training_record(conv: Dialogue, labels: Sequence[PseudoLabel]) -> dict:
    return {
        "conv_id": conv.dialogue_id,
        "history": [t.text for t in conv.turns],
        "target": conv.target_turn.text if conv.target_turn else "",
        "future": [t.text for t in conv.future_turns],
        "labels": [
            {
                "sentence": l.sentence,
                "label": l.label,
                "score": l.fused_score,
                "provenance": dict(sorted(l.provenance.items())),
            }
            for l in labels
        ],
    }


def write_training_set(
    target: str | IO[str],
    records: Iterable[tuple[Dialogue, Sequence[PseudoLabel]]],
) -> None:
    """Write one JSON record per labeled conversation."""
    if isinstance(target, str):
        with open(target, "w", encoding="utf-8") as fh:
            write_training_set(fh, records)
        return
    for conv, labels in records:
        target.write(json.dumps(training_record(conv, labels), sort_keys=True))
        target.write("\n")
