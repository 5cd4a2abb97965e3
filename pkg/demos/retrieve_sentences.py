"""
Ranking sentences for a dialogue
================================

Index a small article collection, then ask which sentences best follow
a three-turn conversation.  Stage one narrows the collection to
documents that share at least one term with the dialogue; stage two
scores every sentence inside those documents; the final order blends
the two scores.
"""

import json

from dialret.corpus import AnalyzerConfig, ingest_corpus
from dialret.dialogue import Dialogue, Turn
from dialret.retrieval import InitialRankerParams, final_rank, retrieve_documents


# A corpus is one JSON object per line: a document id plus sections of
# sentences.  Sentence ids come out as doc#section#index.
def article(doc_id, section, sentences):
    record = {
        "id": doc_id,
        "title": doc_id,
        "sections": [{"id": section, "heading": section, "sentences": sentences}],
    }
    return json.dumps(record)


CORPUS = [
    article(
        "solar",
        "basics",
        [
            "solar panels convert sunlight into electricity",
            "panel output falls on cloudy days",
            "inverters turn the direct current into alternating current",
        ],
    ),
    article(
        "storage",
        "home",
        [
            "home batteries store solar energy for the evening",
            "lithium cells lose capacity slowly over many cycles",
            "a charge controller protects the battery bank",
        ],
    ),
    article(
        "wind",
        "intro",
        [
            "wind turbines capture energy from moving air",
            "blade length drives generator output",
        ],
    ),
    article(
        "grid",
        "intro",
        [
            "the grid balances supply and demand continuously",
            "net metering credits exported energy",
        ],
    ),
]

config = AnalyzerConfig()
corpus, index, stats = ingest_corpus(CORPUS, config)
print(f"indexed {stats.doc_count} documents, {stats.sentence_count} sentences")

# The dialogue so far.  Early turns set the topic; the last turn carries
# the freshest intent and gets most of the weight.
dialogue = Dialogue(
    "demo:storage",
    [
        Turn("we put solar panels on the roof last spring"),
        Turn("output is great at noon but the evenings are the problem"),
        Turn("how do people store the extra solar energy"),
    ],
)

params = InitialRankerParams()

docs = retrieve_documents(dialogue, params, index, stats, config)
print("\nstage one, candidate documents:")
for item in docs.items:
    print(f"  {item.rank:>2}  {item.score:>9.4f}  {item.item_id}")

ranked = final_rank(dialogue, params, corpus, index, stats, config)
print("\nstage two, blended sentence ranking:")
for item in ranked.items[:5]:
    print(f"  {item.rank:>2}  {item.score:.4f}  {item.item_id:<18} {corpus.sentence_text(item.item_id)}")

# The same knobs the evaluation tooling sweeps: beta shifts weight
# between the last turn and the rest, gamma between document and
# sentence evidence.
last_turn_only = InitialRankerParams(beta=0.0, gamma=1.0)
ranked = final_rank(dialogue, last_turn_only, corpus, index, stats, config)
print("\nwith beta=0 and gamma=1 (last turn only, sentence score only):")
for item in ranked.items[:3]:
    print(f"  {item.rank:>2}  {item.score:.4f}  {item.item_id:<18} {corpus.sentence_text(item.item_id)}")
