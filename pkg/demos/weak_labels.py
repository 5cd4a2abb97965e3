"""
Building pseudo-labeled training data
=====================================

Discussion threads where a reply links to a document section give weak
supervision for free: sentences the reply points at are probably what a
good retriever should have returned.  Four annotators rank the
candidates, their rankings are fused, and the top and bottom of the
fused list become positive and negative labels.
"""

import io
import json

from dialret.corpus import AnalyzerConfig, ingest_corpus
from dialret.dialogue import GroundedLink, Thread, Turn
from dialret.weaklabel import build_training_set, write_training_set


def article(doc_id, sections):
    record = {
        "id": doc_id,
        "title": doc_id,
        "sections": [
            {"id": sec_id, "heading": sec_id, "sentences": sentences}
            for sec_id, sentences in sections
        ],
    }
    return json.dumps(record)


CORPUS = [
    article(
        "guide",
        [
            (
                "install",
                [
                    "mount the rails before lifting any panels",
                    "panels clamp onto the rails in pairs",
                    "the inverter hangs on a shaded wall",
                ],
            ),
            (
                "cost",
                [
                    "installation cost depends on roof pitch",
                    "permits add a fixed fee",
                ],
            ),
        ],
    ),
    article("weather", [("wind", ["storms rarely damage mounted panels", "hail is the real risk"])]),
]

config = AnalyzerConfig()
corpus, index, stats = ingest_corpus(CORPUS, config)

# One thread: turn four answers the question and links to guide#install,
# so it becomes the target of a training conversation.  Turns one to
# three are its history, turn five its future.
thread = Thread(
    "mounting-question",
    [
        Turn("we are planning a rooftop solar install this summer"),
        Turn("what goes up first when mounting the panels"),
        Turn("is it the panels or some kind of frame"),
        Turn(
            "the rails go up first and the panels clamp onto them",
            links=(GroundedLink("guide", "install"),),
        ),
        Turn("great that settles the order of work"),
    ],
)

counters = {}
results = list(build_training_set([thread], corpus, index, stats, k_labels=2, counters=counters))

for conv, labels in results:
    print(f"conversation {conv.dialogue_id}")
    print(f"  target: {conv.target_turn.text}")
    print("  labels:")
    for label in labels:
        print(f"    {label.label:<4} {label.fused_score:.6f}  {label.sentence}")
        print(f"         annotator ranks: {dict(sorted(label.provenance.items()))}")

print(f"\ncounters: {counters}")

# The same records serialize to JSON lines for a training job.
buffer = io.StringIO()
write_training_set(buffer, results)
record = json.loads(buffer.getvalue().splitlines()[0])
print(f"record fields: {sorted(record)}")
