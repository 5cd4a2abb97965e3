"""Command-line surface wiring the modules into reproducible batch pipelines.

Commands: index, distill, retrieve, rerank, fuse, weaklabel, evaluate,
tune, significance, stats.  Every command logs its resolved configuration
to stderr, reads and writes only the documented interchange formats, and
exits 0 on success or 2 with a diagnostic on failure.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import itertools
import logging
import os
import shlex
import sys
from typing import Mapping, Sequence

from . import __version__
from .config import CONFIG_ENV_VAR, Config, build_config, describe, parse_config_file
from .corpus import (
    AnalyzerConfig,
    CorpusFormatError,
    ingest_corpus,
    load_index,
    load_stopwords,
    save_index,
)
from .dialogue import (
    apply_test_filters,
    dataset_stats,
    distill_test_dialogues,
    enrich_first_turn,
    filter_threads_by_date,
    format_dataset_stats,
    load_blocklist,
    read_dialogues,
    read_threads,
    write_dialogues,
)
from .evaluation import (
    METRICS,
    Qrels,
    SplitSpec,
    format_significance,
    make_splits,
    mean_metric,
    report,
    significance_report,
    tune,
)
from .rerank import RrfParams, ext_fuse, rerank_bm25, rerank_external, rerank_lm, rrf
from .retrieval import RankedList, final_rank, read_run, write_run
from .scorer import ExternalEmbedder, ExternalScorer, ScorerProtocolError, StubEmbedder, StubScorer
from .weaklabel import build_training_set, write_training_set

log = logging.getLogger("dialret")

_CONFIG_TYPES = {
    f.name: (str if f.default is None or isinstance(f.default, str) else type(f.default))
    for f in dataclasses.fields(Config)
}


def _add_config_flags(parser: argparse.ArgumentParser, *names: str) -> None:
    for name in names:
        parser.add_argument(
            "--" + name.replace("_", "-"),
            dest=name,
            type=_CONFIG_TYPES[name],
            default=None,
            help=f"override config value {name}",
        )


def _resolve_config(args: argparse.Namespace) -> Config:
    path = args.config or os.environ.get(CONFIG_ENV_VAR)
    file_values = parse_config_file(path) if path else {}
    overrides = {
        name: getattr(args, name)
        for name in _CONFIG_TYPES
        if hasattr(args, name) and getattr(args, name) is not None
    }
    return build_config(file_values, overrides)


def _require(value: str | None, flag: str) -> str:
    if not value:
        raise ValueError(f"missing required {flag} (flag or config)")
    return value


def _analyzer(config: Config) -> AnalyzerConfig:
    stopwords = load_stopwords(config.stopwords) if config.stopwords else frozenset()
    return AnalyzerConfig(stemmer=config.stemmer, stopwords=stopwords)


def _write_text(path: str | None, text: str) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_index(args: argparse.Namespace, config: Config) -> int:
    corpus_path = _require(args.corpus or config.corpus, "--corpus")
    corpus, index, stats = ingest_corpus(corpus_path, _analyzer(config))
    save_index(args.out, corpus, index)
    log.info(
        "indexed %d documents, %d sentences, %d terms",
        stats.doc_count,
        stats.sentence_count,
        len(stats.cf),
    )
    for line in corpus.diagnostics:
        log.warning("diagnostic: %s", line)
    return 0


def cmd_distill(args: argparse.Namespace, config: Config) -> int:
    threads_path = _require(args.threads or config.threads, "--threads")
    threads = read_threads(threads_path)
    if args.since or args.until:
        threads = filter_threads_by_date(threads, args.since, args.until)
    if not args.no_enrich:
        threads = (enrich_first_turn(t) for t in threads)
    counters: dict[str, int] = {}
    blocklist_path = args.blocklist or config.blocklist
    blocklist = load_blocklist(blocklist_path) if blocklist_path else ()
    analyzer = _analyzer(config)
    kept = []
    for dialogue in distill_test_dialogues(threads, counters):
        keep, reason = apply_test_filters(dialogue, blocklist, analyzer)
        if keep:
            kept.append(dialogue)
        else:
            counters[f"filtered_{reason}"] = counters.get(f"filtered_{reason}", 0) + 1
    write_dialogues(args.out, kept)
    log.info("distilled %d dialogues (%s)", len(kept), _format_counters(counters))
    return 0


def _format_counters(counters: Mapping[str, int]) -> str:
    return ", ".join(f"{k}={counters[k]}" for k in sorted(counters)) or "no skips"


def cmd_retrieve(args: argparse.Namespace, config: Config) -> int:
    corpus, index, stats = load_index(_require(args.index or config.index, "--index"))
    params = config.initial_params()
    lists = []
    for dialogue in read_dialogues(args.dialogues):
        lists.append(
            final_rank(dialogue, params, corpus, index, stats, corpus.config, tag=args.tag)
        )
    write_run(args.out, lists)
    log.info("retrieved for %d dialogues", len(lists))
    return 0


def cmd_rerank(args: argparse.Namespace, config: Config) -> int:
    corpus, index, stats = load_index(_require(args.index or config.index, "--index"))
    runs = read_run(args.run)
    dialogues = {d.dialogue_id: d for d in read_dialogues(args.dialogues)}
    tag = args.tag or args.method
    out_lists = []
    with contextlib.ExitStack() as stack:
        handle = None
        if args.method in ("external", "extfuse"):
            command = shlex.split(
                args.scorer_cmd or f"{sys.executable} -m dialret.scorer score"
            )
            handle = stack.enter_context(
                ExternalScorer(
                    command,
                    timeout=config.scorer_timeout,
                    max_query_tokens=config.max_query_tokens,
                    max_text_tokens=config.max_text_tokens,
                )
            )
        for qid, candidates in runs.items():
            dialogue = dialogues.get(qid)
            if dialogue is None:
                raise ValueError(f"run query {qid!r} not found in --dialogues")
            if args.method == "lm":
                reranked = rerank_lm(dialogue.turns[-1], candidates, config.mu, corpus, stats)
            elif args.method == "bm25":
                reranked = rerank_bm25(
                    dialogue.turns[-1], candidates, config.bm25_params(), corpus, stats
                )
            elif args.method == "external":
                reranked = rerank_external(dialogue.turns[-1].text, candidates, corpus, handle)
            else:
                reranked = ext_fuse(
                    dialogue, candidates, corpus, handle, RrfParams(nu=config.nu)
                )
            out_lists.append(reranked.retag(tag))
    write_run(args.out, out_lists)
    log.info("reranked %d queries with %s", len(out_lists), args.method)
    return 0


def cmd_fuse(args: argparse.Namespace, config: Config) -> int:
    runs_list = [read_run(path) for path in args.runs]
    qid_sets = [set(r) for r in runs_list]
    if any(s != qid_sets[0] for s in qid_sets[1:]):
        raise ValueError("run files cover different query sets")
    weights = None
    if args.weights:
        weights = tuple(float(w) for w in args.weights.split(","))
        if len(weights) != len(runs_list):
            raise ValueError(f"got {len(weights)} weights for {len(runs_list)} runs")
    params = RrfParams(nu=config.nu, weights=weights)
    out_lists = []
    for qid in runs_list[0]:
        fused = rrf([r[qid] for r in runs_list], params)
        out_lists.append(fused.retag(args.tag))
    write_run(args.out, out_lists)
    log.info("fused %d runs over %d queries", len(runs_list), len(out_lists))
    return 0


def cmd_weaklabel(args: argparse.Namespace, config: Config) -> int:
    corpus, index, stats = load_index(_require(args.index or config.index, "--index"))
    threads = read_threads(_require(args.threads or config.threads, "--threads"))
    counters: dict[str, int] = {}
    with contextlib.ExitStack() as stack:
        if args.scorer_cmd:
            scorer = stack.enter_context(
                ExternalScorer(
                    shlex.split(args.scorer_cmd),
                    timeout=config.scorer_timeout,
                    max_query_tokens=config.max_query_tokens,
                    max_text_tokens=config.max_text_tokens,
                )
            )
        else:
            scorer = StubScorer(config.max_query_tokens, config.max_text_tokens)
        if args.embedder_cmd:
            embedder = stack.enter_context(
                ExternalEmbedder(
                    shlex.split(args.embedder_cmd),
                    timeout=config.scorer_timeout,
                    max_query_tokens=config.max_query_tokens,
                    max_text_tokens=config.max_text_tokens,
                )
            )
        else:
            embedder = StubEmbedder(
                max_query_tokens=config.max_query_tokens,
                max_text_tokens=config.max_text_tokens,
            )
        records = build_training_set(
            threads,
            corpus,
            index,
            stats,
            ranker_params=config.initial_params(k_sents=config.weak_k_sents),
            fused_params=config.fused_params(),
            k_labels=config.k_labels,
            scorer=scorer,
            embedder=embedder,
            counters=counters,
        )
        write_training_set(args.out, records)
    log.info("weak labeling done (%s)", _format_counters(counters))
    return 0


def _evaluate_rows(
    runs: Mapping[str, RankedList],
    qrels: Qrels,
    system: str,
    query_ids: Sequence[str],
) -> dict[tuple[str, str], list[float]]:
    rows: dict[tuple[str, str], list[float]] = {}
    for metric_name, metric in METRICS.items():
        values = []
        for qid in query_ids:
            run = runs.get(qid) or RankedList(qid, [])
            values.append(metric(run, qrels))
        rows[(system, metric_name)] = values
    return rows


def cmd_evaluate(args: argparse.Namespace, config: Config) -> int:
    runs = read_run(args.run)
    qrels = Qrels.from_file(args.qrels)
    system = args.system or os.path.splitext(os.path.basename(args.run))[0]
    query_ids = sorted(qrels.queries())
    rows = _evaluate_rows(runs, qrels, system, query_ids)
    if args.dialogues:
        flags = {d.dialogue_id: d.grounded for d in read_dialogues(args.dialogues)}
        for group in ("grounded", "ungrounded"):
            members = [q for q in query_ids if flags.get(q) is (group == "grounded")]
            if members:
                rows.update(_evaluate_rows(runs, qrels, f"{system}[{group}]", members))
    table, records = report(rows)
    _write_text(args.out, table)
    if args.json_out:
        import json

        with open(args.json_out, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    return 0


_GRID_KEYS = ("beta", "gamma", "mu", "delta", "k_docs", "k_sents", "k1", "b", "nu", "lam", "m_future")


def _parse_grid(specs: Sequence[str]) -> list[dict[str, object]]:
    axes: list[tuple[str, list[object]]] = []
    for spec in specs:
        if "=" not in spec:
            raise ValueError(f"--grid expects key=v1,v2,... got {spec!r}")
        key, raw = spec.split("=", 1)
        key = key.strip()
        if key not in _GRID_KEYS:
            raise ValueError(f"unknown grid key {key!r}; expected one of {_GRID_KEYS}")
        caster = int if _CONFIG_TYPES.get(key) is int else float
        values = [caster(v) for v in raw.split(",") if v.strip()]
        if not values:
            raise ValueError(f"--grid {key}: no values")
        axes.append((key, values))
    keys = [k for k, _ in axes]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(v for _, v in axes))]


def cmd_tune(args: argparse.Namespace, config: Config) -> int:
    corpus, index, stats = load_index(_require(args.index or config.index, "--index"))
    dialogues = list(read_dialogues(args.dialogues))
    qrels = Qrels.from_file(args.qrels)
    judged = set(qrels.queries())
    flags = {d.dialogue_id: d.grounded for d in dialogues if d.dialogue_id in judged}
    splits = make_splits(flags, SplitSpec(n_splits=config.n_splits, seed=config.seed))
    if not 0 <= args.split < len(splits):
        raise ValueError(f"--split must be in [0, {len(splits) - 1}]")
    validation = splits[args.split][0]
    by_id = {d.dialogue_id: d for d in dialogues}
    grid = _parse_grid(args.grid)
    base_runs = read_run(args.run) if args.run else None

    def score(setting: Mapping[str, object]) -> float:
        merged = dataclasses.replace(config, **setting)
        runs = {}
        for qid in validation:
            dialogue = by_id[qid]
            if args.method == "initial":
                runs[qid] = final_rank(
                    dialogue, merged.initial_params(), corpus, index, stats, corpus.config
                )
            elif args.method == "lm":
                runs[qid] = rerank_lm(
                    dialogue.turns[-1], base_runs[qid], merged.mu, corpus, stats
                )
            else:
                runs[qid] = rerank_bm25(
                    dialogue.turns[-1], base_runs[qid], merged.bm25_params(), corpus, stats
                )
        return mean_metric(runs, qrels, validation, METRICS["map"])

    if args.method in ("lm", "bm25") and base_runs is None:
        raise ValueError(f"--run is required for method {args.method!r}")
    best, best_map = tune(grid, score)
    setting_text = " ".join(f"{k}={v}" for k, v in best.items())
    _write_text(args.out, f"best {setting_text} map={best_map:.6f}\n")
    return 0


def cmd_significance(args: argparse.Namespace, config: Config) -> int:
    qrels = Qrels.from_file(args.qrels)
    flags = {d.dialogue_id: d.grounded for d in read_dialogues(args.dialogues)}
    judged = sorted(qrels.queries())
    missing = [q for q in judged if q not in flags]
    if missing:
        raise ValueError(f"query {missing[0]!r} not found in --dialogues")
    splits = make_splits(
        {q: flags[q] for q in judged}, SplitSpec(n_splits=config.n_splits, seed=config.seed)
    )
    metric = METRICS[args.metric]
    per_system: dict[str, list[float]] = {}
    rows: dict[tuple[str, str], list[float]] = {}
    for path in args.runs:
        system = os.path.splitext(os.path.basename(path))[0]
        runs = read_run(path)
        values = [mean_metric(runs, qrels, test_half, metric) for _, test_half in splits]
        per_system[system] = values
        rows[(system, args.metric)] = values
    results = significance_report(
        per_system,
        alpha=config.alpha,
        n_permutations=config.n_permutations,
        seed=config.seed,
    )
    table, _ = report(rows)
    _write_text(args.out, table + "\n" + format_significance(results))
    return 0


def cmd_stats(args: argparse.Namespace, config: Config) -> int:
    dialogues = list(read_dialogues(args.dialogues))
    qrels = Qrels.from_file(args.qrels)
    runs = read_run(args.run)
    stats_report = dataset_stats(dialogues, qrels, runs)
    _write_text(args.out, format_dataset_stats(stats_report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dialret",
        description="Sentence retrieval for open-ended dialogues.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", default=None, help="key=value config file path")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build a serialized index from a corpus file")
    p.add_argument("--corpus", default=None)
    p.add_argument("--out", required=True)
    _add_config_flags(p, "stemmer", "stopwords")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("distill", help="distill threads into filtered test dialogues")
    p.add_argument("--threads", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--no-enrich", action="store_true")
    p.add_argument("--since", default=None, help="keep threads created on/after this date")
    p.add_argument("--until", default=None, help="keep threads created on/before this date")
    _add_config_flags(p, "stemmer", "stopwords", "blocklist")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("retrieve", help="run the two-stage initial ranker")
    p.add_argument("--index", default=None)
    p.add_argument("--dialogues", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tag", default="initial")
    _add_config_flags(p, "beta", "gamma", "mu", "delta", "k_docs", "k_sents")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("rerank", help="rerank an existing run")
    p.add_argument("--index", default=None)
    p.add_argument("--dialogues", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--method", required=True, choices=["lm", "bm25", "external", "extfuse"])
    p.add_argument("--out", required=True)
    p.add_argument("--tag", default=None)
    p.add_argument("--scorer-cmd", default=None, help="external scorer command line")
    _add_config_flags(p, "mu", "k1", "b", "nu", "scorer_timeout", "max_query_tokens", "max_text_tokens")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("fuse", help="reciprocal rank fusion of run files")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights", default=None, help="comma-separated per-run weights")
    p.add_argument("--tag", default="rrf")
    _add_config_flags(p, "nu")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("weaklabel", help="build a weakly labeled training set")
    p.add_argument("--index", default=None)
    p.add_argument("--threads", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--scorer-cmd", default=None, help="external scorer (default: built-in stub)")
    p.add_argument("--embedder-cmd", default=None, help="external embedder (default: built-in stub)")
    _add_config_flags(
        p, "beta", "gamma", "mu", "delta", "k_docs", "weak_k_sents", "nu", "lam",
        "m_future", "k_labels", "scorer_timeout", "max_query_tokens", "max_text_tokens",
    )
    p.set_defaults(func=cmd_weaklabel)

    p = sub.add_parser("evaluate", help="per-query metrics and summary table")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--dialogues", default=None, help="adds grounded/ungrounded breakdown")
    p.add_argument("--system", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--json-out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tune", help="grid search maximizing validation MAP")
    p.add_argument("--index", default=None)
    p.add_argument("--dialogues", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--grid", action="append", required=True, help="key=v1,v2,... (repeatable)")
    p.add_argument("--method", default="initial", choices=["initial", "lm", "bm25"])
    p.add_argument("--run", default=None, help="candidate run for lm/bm25 tuning")
    p.add_argument("--split", type=int, default=0, help="which split's validation half to use")
    p.add_argument("--out", default=None)
    _add_config_flags(p, "n_splits", "seed")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("significance", help="pairwise permutation tests over splits")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--dialogues", required=True)
    p.add_argument("--metric", default="map", choices=sorted(METRICS))
    p.add_argument("--out", default=None)
    _add_config_flags(p, "n_splits", "seed", "n_permutations", "alpha")
    p.set_defaults(func=cmd_significance)

    p = sub.add_parser("stats", help="dataset statistics per dialogue type")
    p.add_argument("--dialogues", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _resolve_config(args)
        log.info("config: %s", describe(config))
        return args.func(args, config)
    except (ValueError, OSError, CorpusFormatError, ScorerProtocolError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
