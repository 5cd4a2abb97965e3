"""Retrieval metrics, balanced splits, permutation tests, and tuning.

Metrics follow the usual binary-judgment conventions: average precision
with the relevant count taken from the judged pool, NDCG@k with binary
gains and a log2(i+1) discount, and reciprocal rank with 0 when no
relevant item is retrieved.  Splits repeatedly halve the query set with
equal grounded/ungrounded counts per half.  Significance uses a paired
sign-flip permutation test on per-split differences with Bonferroni
correction across system pairs.
"""

from __future__ import annotations

import itertools
import math
import statistics
from dataclasses import dataclass
from typing import IO, Callable, Iterable, Mapping, Sequence

import numpy as np

from .retrieval import RankedList


class Qrels:
    """Binary relevance judgments with per-query judged pools."""

    def __init__(self) -> None:
        self._judged: dict[str, dict[str, int]] = {}

    def add(self, query_id: str, item_id: str, relevance: int) -> None:
        if relevance not in (0, 1):
            raise ValueError(f"relevance must be 0 or 1, got {relevance!r}")
        pool = self._judged.setdefault(query_id, {})
        if item_id in pool and pool[item_id] != relevance:
            raise ValueError(
                f"conflicting judgments for ({query_id!r}, {item_id!r})"
            )
        pool[item_id] = relevance

    def queries(self) -> list[str]:
        return list(self._judged)

    def judged(self, query_id: str) -> Mapping[str, int]:
        return self._judged.get(query_id, {})

    def relevance(self, query_id: str, item_id: str) -> int | None:
        return self._judged.get(query_id, {}).get(item_id)

    def relevant_count(self, query_id: str) -> int:
        return sum(self._judged.get(query_id, {}).values())

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Qrels":
        qrels = cls()
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 4:
                raise ValueError(f"line {lineno}: expected 'query_id 0 item_id rel'")
            qid, _, item_id, rel = fields
            try:
                qrels.add(qid, item_id, int(rel))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from exc
        return qrels

    @classmethod
    def from_file(cls, path: str) -> "Qrels":
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh)

    def write(self, target: str | IO[str]) -> None:
        if isinstance(target, str):
            with open(target, "w", encoding="utf-8") as fh:
                self.write(fh)
            return
        for qid in self._judged:
            for item_id, rel in self._judged[qid].items():
                target.write(f"{qid} 0 {item_id} {rel}\n")


def _relevant_count_or_error(qrels: Qrels, query_id: str) -> int:
    count = qrels.relevant_count(query_id)
    if count == 0:
        raise ValueError(f"query {query_id!r} has no relevant items")
    return count


def average_precision(run: RankedList, qrels: Qrels) -> float:
    """Mean of precision at each rank holding a relevant item, over the
    judged-pool relevant count."""
    total_relevant = _relevant_count_or_error(qrels, run.query_id)
    judged = qrels.judged(run.query_id)
    hits = 0
    acc = 0.0
    for item in run.items:
        if judged.get(item.item_id) == 1:
            hits += 1
            acc += hits / item.rank
    return acc / total_relevant


def ndcg_at_k(run: RankedList, qrels: Qrels, k: int = 5) -> float:
    """Binary-gain NDCG with a log2(rank + 1) discount."""
    total_relevant = _relevant_count_or_error(qrels, run.query_id)
    judged = qrels.judged(run.query_id)
    dcg = sum(
        1.0 / math.log2(item.rank + 1)
        for item in run.items[:k]
        if judged.get(item.item_id) == 1
    )
    ideal = sum(1.0 / math.log2(i + 1) for i in range(1, min(total_relevant, k) + 1))
    return dcg / ideal


def mrr(run: RankedList, qrels: Qrels) -> float:
    """Reciprocal rank of the first relevant item; 0 when none retrieved."""
    _relevant_count_or_error(qrels, run.query_id)
    judged = qrels.judged(run.query_id)
    for item in run.items:
        if judged.get(item.item_id) == 1:
            return 1.0 / item.rank
    return 0.0


METRICS: dict[str, Callable[[RankedList, Qrels], float]] = {
    "map": average_precision,
    "ndcg5": ndcg_at_k,
    "mrr": mrr,
}


def mean_metric(
    runs: Mapping[str, RankedList],
    qrels: Qrels,
    query_ids: Sequence[str],
    metric: Callable[[RankedList, Qrels], float],
) -> float:
    """Mean of a per-query metric over the given queries.

    Queries missing from the run contribute 0 (nothing was retrieved).
    """
    if not query_ids:
        raise ValueError("no queries to evaluate")
    total = 0.0
    for qid in query_ids:
        run = runs.get(qid)
        if run is None:
            run = RankedList(qid, [])
        total += metric(run, qrels)
    return total / len(query_ids)


@dataclass(frozen=True)
class SplitSpec:
    n_splits: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_splits < 1:
            raise ValueError(f"n_splits must be at least 1, got {self.n_splits}")


def make_splits(
    grounded_flags: Mapping[str, bool], spec: SplitSpec
) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
    """Repeated stratified halving of the query set.

    Each split partitions the queries into two halves with equal
    grounded and ungrounded counts.  In an odd-sized stratum the extra
    query goes to the first half on even split indices and to the second
    on odd ones.  Splits are deterministic in the seed.
    """
    strata = {
        "grounded": sorted(q for q, flag in grounded_flags.items() if flag),
        "ungrounded": sorted(q for q, flag in grounded_flags.items() if not flag),
    }
    for name, members in strata.items():
        if len(members) < 2:
            raise ValueError(f"stratum {name!r} has {len(members)} queries; need at least 2")
    splits = []
    for split_idx in range(spec.n_splits):
        rng = np.random.default_rng([spec.seed, split_idx])
        first: list[str] = []
        second: list[str] = []
        for name in ("grounded", "ungrounded"):
            members = strata[name]
            order = rng.permutation(len(members))
            shuffled = [members[i] for i in order]
            half = len(members) // 2
            if len(members) % 2 == 1 and split_idx % 2 == 0:
                half += 1
            first.extend(shuffled[:half])
            second.extend(shuffled[half:])
        splits.append((tuple(sorted(first)), tuple(sorted(second))))
    return splits


def permutation_test(
    a: Sequence[float],
    b: Sequence[float],
    n_permutations: int = 10000,
    seed: int = 0,
) -> float:
    """Paired two-tailed sign-flip permutation test.

    Statistic: absolute mean of the paired differences.  The p-value is
    ``(count of permutations at least as extreme + 1) / (n + 1)``; the
    +1 smoothing keeps p strictly positive.
    """
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    if a_arr.shape != b_arr.shape or a_arr.ndim != 1:
        raise ValueError(f"paired samples must share length, got {a_arr.shape} vs {b_arr.shape}")
    if a_arr.size == 0:
        raise ValueError("paired samples must be non-empty")
    d = a_arr - b_arr
    n = d.size
    observed = abs(float(d.sum())) / n
    rng = np.random.default_rng(seed)
    signs = rng.integers(0, 2, size=(n_permutations, n), dtype=np.int8) * 2 - 1
    stats = np.abs(signs.astype(np.float64) @ d) / n
    count = int(np.count_nonzero(stats >= observed))
    return (count + 1) / (n_permutations + 1)


def bonferroni(p: float, comparisons: int) -> float:
    if comparisons < 1:
        raise ValueError(f"comparisons must be at least 1, got {comparisons}")
    return min(1.0, p * comparisons)


@dataclass(frozen=True)
class SignificancePair:
    system_a: str
    system_b: str
    mean_diff: float
    p_raw: float
    p_adjusted: float
    reject: bool


def significance_report(
    per_system: Mapping[str, Sequence[float]],
    alpha: float = 0.05,
    n_permutations: int = 10000,
    seed: int = 0,
) -> list[SignificancePair]:
    """Pairwise permutation tests over per-split metric vectors, with
    Bonferroni correction across all pairs."""
    systems = sorted(per_system)
    pairs = list(itertools.combinations(systems, 2))
    if not pairs:
        raise ValueError("significance report needs at least two systems")
    results = []
    for sys_a, sys_b in pairs:
        a = np.asarray(per_system[sys_a], dtype=np.float64)
        b = np.asarray(per_system[sys_b], dtype=np.float64)
        p = permutation_test(a, b, n_permutations=n_permutations, seed=seed)
        adjusted = bonferroni(p, len(pairs))
        results.append(
            SignificancePair(
                system_a=sys_a,
                system_b=sys_b,
                mean_diff=float(a.mean() - b.mean()),
                p_raw=p,
                p_adjusted=adjusted,
                reject=adjusted <= alpha,
            )
        )
    return results


def format_significance(results: Sequence[SignificancePair]) -> str:
    lines = [f"{'system a':<16} {'system b':<16} {'mean diff':>10} {'p':>8} {'p adj':>8} reject"]
    for r in results:
        lines.append(
            f"{r.system_a:<16} {r.system_b:<16} {r.mean_diff:>10.6f} "
            f"{r.p_raw:>8.4f} {r.p_adjusted:>8.4f} {'yes' if r.reject else 'no'}"
        )
    return "\n".join(lines) + "\n"


def tune(
    grid: Sequence,
    score: Callable[[object], float],
) -> tuple[object, float]:
    """Exhaustive grid search; ties keep the earliest grid entry."""
    if not grid:
        raise ValueError("tuning grid is empty")
    best_setting = None
    best_score = -math.inf
    for setting in grid:
        value = score(setting)
        if value > best_score:
            best_setting, best_score = setting, value
    return best_setting, best_score


def report(
    values: Mapping[tuple[str, str], Sequence[float]]
) -> tuple[str, list[dict]]:
    """Mean and sample standard deviation per (system, metric).

    Returns an aligned text table and one machine-readable record per
    row.  Standard deviation uses the n-1 denominator and is 0 for a
    single observation.
    """
    records = []
    for (system, metric), series in sorted(values.items()):
        series = list(series)
        if not series:
            raise ValueError(f"no values for ({system!r}, {metric!r})")
        mean = statistics.fmean(series)
        std = statistics.stdev(series) if len(series) > 1 else 0.0
        records.append(
            {"system": system, "metric": metric, "mean": mean, "std": std, "n": len(series)}
        )
    width = max((len(r["system"]) for r in records), default=6)
    lines = [f"{'system':<{width}} {'metric':<8} {'mean':>10} {'std':>10} {'n':>5}"]
    for r in records:
        lines.append(
            f"{r['system']:<{width}} {r['metric']:<8} {r['mean']:>10.6f} {r['std']:>10.6f} {r['n']:>5d}"
        )
    return "\n".join(lines) + "\n", records
