"""Conversation threads, dialogue distillation, and filtering rules.

A thread is an ordered list of turns from a threaded discussion.  Test
dialogues are distilled from two-party alternating threads: the last
responder turn becomes the held-out target and the emitted dialogue
contains only the turns strictly before it.  Training conversations are
built around grounded turns (turns carrying links into the corpus) and
additionally keep the turns that follow the target.

Thread interchange is JSON Lines with fields ``id``, ``subreddit``,
``title``, ``created``, and ``turns`` (each ``{"author", "text",
"links": [{"doc", "section"}]}``).  Dialogue output mirrors it plus
``target``, ``future``, and ``grounded``.
"""

from __future__ import annotations

import json
import statistics
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping, MutableMapping, Sequence

from .corpus import AnalyzerConfig, Corpus, CorpusFormatError, analyze

ROLE_INITIATOR = "initiator"
ROLE_RESPONDER = "responder"

_URL_MARKERS = ("http://", "https://", "www.")


@dataclass(frozen=True)
class GroundedLink:
    doc_id: str
    section_id: str


@dataclass(frozen=True)
class Turn:
    text: str
    author_id: str = ""
    role: str = ""
    links: tuple[GroundedLink, ...] = ()


@dataclass
class Thread:
    thread_id: str
    turns: list[Turn]
    subreddit: str | None = None
    title: str | None = None
    created_at: str | None = None


@dataclass
class Dialogue:
    """A dialogue ``t_1..t_n`` plus optional held-out target and future turns.

    ``turns`` never contains the target.  Test dialogues have no future
    turns; training conversations carry both target and future.
    """

    dialogue_id: str
    turns: list[Turn]
    grounded: bool = False
    target_turn: Turn | None = None
    future_turns: list[Turn] = field(default_factory=list)


def _role_for_position(position: int) -> str:
    return ROLE_INITIATOR if position % 2 == 1 else ROLE_RESPONDER


def _with_role(turn: Turn, position: int) -> Turn:
    return replace(turn, role=_role_for_position(position))


def _bump(counters: MutableMapping[str, int] | None, key: str) -> None:
    if counters is not None:
        counters[key] = counters.get(key, 0) + 1


def enrich_first_turn(thread: Thread, separator: str = " ") -> Thread:
    """Prepend subreddit name and title to the opening turn's text.

    Absent parts are omitted; an empty first turn may end up being the
    title alone.  Other turns are untouched.
    """
    parts = [p for p in (thread.subreddit, thread.title, thread.turns[0].text) if p]
    first = replace(thread.turns[0], text=separator.join(parts))
    return replace(thread, turns=[first] + thread.turns[1:])


def distill_test_dialogues(
    threads: Iterable[Thread],
    counters: MutableMapping[str, int] | None = None,
) -> Iterator[Dialogue]:
    """Distill two-party alternating threads into test dialogues.

    A thread qualifies when it has at least four turns and one user
    authors every odd (1-based) turn and no even turn.  The last
    responder turn becomes the target; the dialogue keeps the turns
    strictly before it.  Non-conforming threads are skipped and counted.
    """
    for thread in threads:
        n = len(thread.turns)
        if n < 4:
            _bump(counters, "skipped_too_few_turns")
            continue
        initiator = thread.turns[0].author_id
        two_party = all(
            (turn.author_id == initiator) == (pos % 2 == 1)
            for pos, turn in enumerate(thread.turns, start=1)
        )
        if not two_party:
            _bump(counters, "skipped_not_two_party")
            continue
        target_pos = n if n % 2 == 0 else n - 1
        target = _with_role(thread.turns[target_pos - 1], target_pos)
        history = [_with_role(t, pos) for pos, t in enumerate(thread.turns[: target_pos - 1], 1)]
        _bump(counters, "emitted")
        yield Dialogue(
            dialogue_id=thread.thread_id,
            turns=history,
            grounded=bool(target.links),
            target_turn=target,
        )


def compile_blocklist(entries: Iterable[str]) -> tuple[str, ...]:
    """Lowercase blocklist needles, adding space-stripped variants of
    multi-word entries so concatenated forms also match."""
    needles: list[str] = []
    for entry in entries:
        phrase = entry.strip().lower()
        if not phrase:
            continue
        needles.append(phrase)
        squeezed = phrase.replace(" ", "")
        if squeezed != phrase:
            needles.append(squeezed)
    return tuple(dict.fromkeys(needles))


def load_blocklist(path: str) -> tuple[str, ...]:
    with open(path, encoding="utf-8") as fh:
        entries = [line.strip() for line in fh if line.strip() and not line.startswith("#")]
    return compile_blocklist(entries)


def apply_test_filters(
    dialogue: Dialogue,
    blocklist: Sequence[str] = (),
    config: AnalyzerConfig | None = None,
    min_tokens: int = 5,
    max_tokens: int = 70,
) -> tuple[bool, str | None]:
    """Keep/drop decision for a test dialogue with a reason code.

    Checks every turn including the target: analyzed token count within
    [min_tokens, max_tokens], no URL markers (grounded target turns are
    exempt from the URL rule), and no blocklist match.  The checks are
    order-independent; the reported reason follows the fixed order
    too_short, too_long, url, blocklist.
    """
    config = config or AnalyzerConfig()
    scope = list(dialogue.turns)
    if dialogue.target_turn is not None:
        scope.append(dialogue.target_turn)
    for turn in scope:
        n_tokens = len(analyze(turn.text, config, apply_stopwords=False))
        if n_tokens < min_tokens:
            return False, "too_short"
        if n_tokens > max_tokens:
            return False, "too_long"
    for turn in scope:
        exempt = dialogue.grounded and turn is dialogue.target_turn
        if exempt:
            continue
        lowered = turn.text.lower()
        if any(marker in lowered for marker in _URL_MARKERS):
            return False, "url"
    if blocklist:
        for turn in scope:
            lowered = turn.text.lower()
            if any(needle in lowered for needle in blocklist):
                return False, "blocklist"
    return True, None


def select_training_conversations(
    threads: Iterable[Thread],
    corpus: Corpus | None = None,
    counters: MutableMapping[str, int] | None = None,
) -> Iterator[Dialogue]:
    """Build training conversations around grounded turns.

    Every grounded turn is a candidate target.  A candidate is kept when
    its text has more than five whitespace words, at least one of its
    links resolves in the corpus (all links count when no corpus is
    given), and at least one turn follows it.  Targets without history
    (a grounded opening turn) are skipped since a dialogue needs at
    least one turn.  One conversation is emitted per kept target, id
    ``thread_id:position``.
    """
    for thread in threads:
        n = len(thread.turns)
        for pos in range(1, n + 1):
            turn = thread.turns[pos - 1]
            if not turn.links:
                continue
            _bump(counters, "grounded_turns")
            if pos == 1:
                _bump(counters, "skipped_no_history")
                continue
            if len(turn.text.split()) <= 5:
                _bump(counters, "skipped_short_target")
                continue
            if pos == n:
                _bump(counters, "skipped_no_future")
                continue
            if corpus is None:
                resolved = tuple(turn.links)
            else:
                resolved = tuple(
                    l for l in turn.links if corpus.has_section(l.doc_id, l.section_id)
                )
                if len(resolved) < len(turn.links):
                    _bump(counters, "unresolvable_links")
            if not resolved:
                _bump(counters, "skipped_no_resolvable_link")
                continue
            history = [_with_role(t, p) for p, t in enumerate(thread.turns[: pos - 1], 1)]
            future = [
                _with_role(t, p) for p, t in enumerate(thread.turns[pos:], start=pos + 1)
            ]
            _bump(counters, "emitted")
            yield Dialogue(
                dialogue_id=f"{thread.thread_id}:{pos}",
                turns=history,
                grounded=True,
                target_turn=replace(_with_role(turn, pos), links=resolved),
                future_turns=future,
            )


def filter_threads_by_date(
    threads: Iterable[Thread],
    since: str | None = None,
    until: str | None = None,
) -> Iterator[Thread]:
    """Keep threads whose ISO creation date lies in [since, until].

    Threads without a creation date are dropped when any bound is set.
    """
    for thread in threads:
        if since is None and until is None:
            yield thread
            continue
        created = thread.created_at
        if created is None:
            continue
        if since is not None and created < since:
            continue
        if until is not None and created > until:
            continue
        yield thread


def _moments(values: Sequence[float]) -> dict[str, float]:
    return {
        "mean": float(statistics.fmean(values)),
        "median": float(statistics.median(values)),
        "std": float(statistics.stdev(values)) if len(values) > 1 else 0.0,
    }


def dataset_stats(dialogues, qrels, runs) -> dict:
    """Per dialogue-type summary of relevant counts and first-relevant ranks.

    ``runs`` maps query ids to ranked lists; the rank of the first
    relevant sentence is read from them since judgments alone carry no
    order.  Dialogues whose run retrieves no relevant item are excluded
    from the rank moments and counted separately.
    """
    groups: dict[str, list] = {"grounded": [], "ungrounded": []}
    for dialogue in dialogues:
        groups["grounded" if dialogue.grounded else "ungrounded"].append(dialogue)
    report: dict = {}
    for name, members in groups.items():
        if not members:
            continue
        rel_counts = []
        first_ranks = []
        missing = 0
        for dialogue in members:
            qid = dialogue.dialogue_id
            judged = qrels.judged(qid)
            rel_counts.append(sum(judged.values()))
            run = runs.get(qid)
            rank = None
            if run is not None:
                for item in run.items:
                    if judged.get(item.item_id) == 1:
                        rank = item.rank
                        break
            if rank is None:
                missing += 1
            else:
                first_ranks.append(rank)
        entry = {"dialogues": len(members), "relevant_count": _moments(rel_counts)}
        if first_ranks:
            entry["first_relevant_rank"] = _moments(first_ranks)
        entry["without_retrieved_relevant"] = missing
        report[name] = entry
    return report


def format_dataset_stats(report: Mapping) -> str:
    if not report:
        return "(no dialogues)\n"
    lines = [
        f"{'type':<12} {'dialogues':>9} {'rel mean':>9} {'rel med':>9} {'rel std':>9} "
        f"{'rank mean':>10} {'rank med':>9} {'rank std':>9}"
    ]
    for name in sorted(report):
        entry = report[name]
        rel = entry["relevant_count"]
        rank = entry.get("first_relevant_rank", {"mean": float("nan"), "median": float("nan"), "std": float("nan")})
        lines.append(
            f"{name:<12} {entry['dialogues']:>9d} {rel['mean']:>9.3f} {rel['median']:>9.3f} "
            f"{rel['std']:>9.3f} {rank['mean']:>10.3f} {rank['median']:>9.3f} {rank['std']:>9.3f}"
        )
    return "\n".join(lines) + "\n"


def _turn_record(turn: Turn) -> dict:
    return {
        "author": turn.author_id,
        "text": turn.text,
        "links": [{"doc": l.doc_id, "section": l.section_id} for l in turn.links],
    }


def _parse_turn(record: object, where: str) -> Turn:
    if not isinstance(record, dict):
        raise CorpusFormatError(f"{where}: turn must be a JSON object")
    for name, typ in (("author", str), ("text", str), ("links", list)):
        if name not in record:
            raise CorpusFormatError(f"{where}: turn missing field {name!r}")
        if not isinstance(record[name], typ):
            raise CorpusFormatError(f"{where}: turn field {name!r} must be {typ.__name__}")
    links = []
    for li, link in enumerate(record["links"]):
        if (
            not isinstance(link, dict)
            or not isinstance(link.get("doc"), str)
            or not isinstance(link.get("section"), str)
        ):
            raise CorpusFormatError(f"{where}: link {li} must have string 'doc' and 'section'")
        links.append(GroundedLink(link["doc"], link["section"]))
    return Turn(text=record["text"], author_id=record["author"], links=tuple(links))


def _check_record_id(value: object, where: str) -> str:
    if not isinstance(value, str) or not value or any(c.isspace() for c in value):
        raise CorpusFormatError(f"{where}: field 'id' must be a non-empty id without whitespace")
    return value


def read_threads(source: Iterable[str] | str) -> Iterator[Thread]:
    """Stream threads from a JSON Lines file or an iterable of lines."""
    if isinstance(source, str):
        with open(source, encoding="utf-8") as fh:
            yield from read_threads(list(fh))
        return
    for lineno, line in enumerate(source, start=1):
        if not line.strip():
            continue
        where = f"line {lineno}"
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{where}: invalid JSON: {exc}") from exc
        if not isinstance(record, dict):
            raise CorpusFormatError(f"{where}: expected a JSON object")
        thread_id = _check_record_id(record.get("id"), where)
        turns_field = record.get("turns")
        if not isinstance(turns_field, list) or not turns_field:
            raise CorpusFormatError(f"{where}: field 'turns' must be a non-empty list")
        turns = [_parse_turn(t, f"{where}, turn {ti}") for ti, t in enumerate(turns_field)]
        yield Thread(
            thread_id=thread_id,
            turns=turns,
            subreddit=record.get("subreddit"),
            title=record.get("title"),
            created_at=record.get("created"),
        )


def dialogue_record(dialogue: Dialogue) -> dict:
    return {
        "id": dialogue.dialogue_id,
        "grounded": dialogue.grounded,
        "turns": [_turn_record(t) for t in dialogue.turns],
        "target": _turn_record(dialogue.target_turn) if dialogue.target_turn else None,
        "future": [_turn_record(t) for t in dialogue.future_turns],
    }


def write_dialogues(path: str, dialogues: Iterable[Dialogue]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for dialogue in dialogues:
            fh.write(json.dumps(dialogue_record(dialogue), sort_keys=True))
            fh.write("\n")


def read_dialogues(source: Iterable[str] | str) -> Iterator[Dialogue]:
    """Stream dialogues, reassigning roles from turn positions."""
    if isinstance(source, str):
        with open(source, encoding="utf-8") as fh:
            yield from read_dialogues(list(fh))
        return
    for lineno, line in enumerate(source, start=1):
        if not line.strip():
            continue
        where = f"line {lineno}"
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{where}: invalid JSON: {exc}") from exc
        if not isinstance(record, dict):
            raise CorpusFormatError(f"{where}: expected a JSON object")
        dialogue_id = _check_record_id(record.get("id"), where)
        turns_field = record.get("turns")
        if not isinstance(turns_field, list):
            raise CorpusFormatError(f"{where}: field 'turns' must be a list")
        turns = [
            _with_role(_parse_turn(t, f"{where}, turn {ti}"), ti + 1)
            for ti, t in enumerate(turns_field)
        ]
        n = len(turns)
        target = None
        if record.get("target") is not None:
            target = _with_role(_parse_turn(record["target"], f"{where}, target"), n + 1)
        future = [
            _with_role(_parse_turn(t, f"{where}, future {ti}"), n + 2 + ti)
            for ti, t in enumerate(record.get("future") or [])
        ]
        yield Dialogue(
            dialogue_id=dialogue_id,
            turns=turns,
            grounded=bool(record.get("grounded")),
            target_turn=target,
            future_turns=future,
        )
