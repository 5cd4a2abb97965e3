"""
Scoring runs and testing significance
=====================================

Evaluate two retrieval strategies on eight dialogues, then ask whether
the difference is real: repeated stratified halves of the query set
give paired per-split means, and a randomized sign-flip test gives the
p-value.
"""

from dialret.evaluation import (
    Qrels,
    SplitSpec,
    average_precision,
    format_significance,
    make_splits,
    mean_metric,
    mrr,
    ndcg_at_k,
    report,
    significance_report,
)
from dialret.retrieval import RankedList

# Qrels use the usual four-column lines: query, iteration, item, grade.
QRELS = Qrels.from_lines(
    f"q{i} 0 rel{i}#s#0 1" for i in range(8)
)

# Two synthetic systems over the same eight queries.  "fused" finds the
# relevant sentence early for most queries; "last_turn" only sometimes.
GOOD_RANK = {0: 1, 1: 1, 2: 2, 3: 1, 4: 1, 5: 3, 6: 1, 7: 2}
WEAK_RANK = {0: 1, 1: 4, 2: 5, 3: 2, 4: 6, 5: 4, 6: 1, 7: 5}


def synthetic_run(query_idx, relevant_rank):
    # Six retrieved sentences; the relevant one sits at relevant_rank.
    ids = [f"noise{query_idx}#s#{j}" for j in range(6)]
    ids[relevant_rank - 1] = f"rel{query_idx}#s#0"
    scores = {item_id: float(len(ids) - pos) for pos, item_id in enumerate(ids)}
    return RankedList.from_scores(f"q{query_idx}", scores)


RUNS = {
    "fused": {f"q{i}": synthetic_run(i, GOOD_RANK[i]) for i in range(8)},
    "last_turn": {f"q{i}": synthetic_run(i, WEAK_RANK[i]) for i in range(8)},
}

queries = QRELS.queries()
table_values = {}
for system, runs in RUNS.items():
    for name, metric in (("map", average_precision), ("ndcg5", ndcg_at_k), ("mrr", mrr)):
        per_query = [mean_metric(runs, QRELS, [qid], metric) for qid in queries]
        table_values[(system, name)] = per_query

table, _ = report(table_values)
print("per-system means over all eight queries:")
print(table)

# Half the dialogues are grounded; every split keeps that balance.
grounded = {f"q{i}": i < 4 for i in range(8)}
splits = make_splits(grounded, SplitSpec(n_splits=40, seed=0))

per_system = {
    system: [mean_metric(runs, QRELS, half, average_precision) for half, _ in splits]
    for system, runs in RUNS.items()
}

results = significance_report(per_system, alpha=0.05, n_permutations=5000, seed=0)
print("paired permutation test over per-split mean average precision:")
print(format_significance(results))
