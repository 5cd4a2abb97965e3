"""
Reranking candidates and fusing rankings
========================================

Take the initial candidate list for a dialogue and reorder it four
ways: by the last turn's query likelihood, by BM25, by an external
scoring process, and by fusing one external ranking per turn.  Finally
merge several rankings with reciprocal rank fusion.
"""

import json
import sys

from dialret.corpus import AnalyzerConfig, ingest_corpus
from dialret.dialogue import Dialogue, Turn
from dialret.rerank import BM25Params, RrfParams, ext_fuse, rerank_bm25, rerank_external, rerank_lm, rrf
from dialret.retrieval import InitialRankerParams, final_rank
from dialret.scorer import ExternalScorer


def article(doc_id, section, sentences):
    record = {
        "id": doc_id,
        "title": doc_id,
        "sections": [{"id": section, "heading": section, "sentences": sentences}],
    }
    return json.dumps(record)


CORPUS = [
    article(
        "panels",
        "care",
        [
            "rinse the panels with plain water twice a year",
            "shade from new tree growth cuts output sharply",
            "monitoring apps flag a failing panel early",
        ],
    ),
    article(
        "warranty",
        "terms",
        [
            "the product warranty covers panel defects for twelve years",
            "the performance warranty guarantees output for twenty five years",
            "shipping damage is not covered after installation",
        ],
    ),
    article(
        "pets",
        "cats",
        [
            "cats nap through most of the afternoon",
            "a sunny windowsill is prime napping territory",
        ],
    ),
]

config = AnalyzerConfig()
corpus, index, stats = ingest_corpus(CORPUS, config)

dialogue = Dialogue(
    "demo:warranty",
    [
        Turn("the installer finished wiring the panels yesterday"),
        Turn("the warranty paperwork lists product and performance coverage"),
        Turn("how long does the performance warranty cover the output"),
    ],
)


def show(label, ranking, n=3):
    ids = ", ".join(item.item_id for item in ranking.items[:n])
    print(f"  {label:<12} {ids}")


initial = final_rank(dialogue, InitialRankerParams(), corpus, index, stats, config)
print("top candidates by strategy:")
show(initial.tag, initial)

# Both last-turn rerankers see only the final question, so they are
# sharp but easily misled when the question is terse.
last_turn = dialogue.turns[-1]
by_lm = rerank_lm(last_turn, initial, 1000.0, corpus, stats)
show(by_lm.tag, by_lm)

by_bm25 = rerank_bm25(last_turn, initial, BM25Params(), corpus, stats)
show(by_bm25.tag, by_bm25)

# An external scorer is any process speaking the JSON-lines protocol.
# The built-in stub scores by token overlap and is handy for wiring
# tests; swap the command for a neural plugin in real runs.
stub = [sys.executable, "-m", "dialret.scorer", "score"]
with ExternalScorer(stub, timeout=30.0) as handle:
    by_external = rerank_external(last_turn.text, initial, corpus, handle)
    show(by_external.tag, by_external)

    # One external ranking per turn, fused uniformly: the whole dialogue
    # votes, not just the last question.
    by_ext_fuse = ext_fuse(dialogue, initial, corpus, handle)
    show(by_ext_fuse.tag, by_ext_fuse)

# Reciprocal rank fusion also merges arbitrary rankings directly,
# optionally with weights.
fused = rrf([by_lm, by_bm25, by_ext_fuse], RrfParams())
show(fused.tag, fused)

weighted = rrf([by_lm, by_ext_fuse], RrfParams(weights=(0.2, 0.8)))
print("\nweighted fusion favors the dialogue-wide ranking:")
for item in weighted.items[:3]:
    print(f"  {item.rank:>2}  {item.score:.6f}  {item.item_id:<20} {corpus.sentence_text(item.item_id)}")
