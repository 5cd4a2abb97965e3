"""Corpus ingestion, text analysis, inverted indexing, and collection statistics.

The corpus interchange format is JSON Lines: one document per line with
fields ``id``, ``title``, and ``sections``, where each section carries
``id``, ``heading``, and ``sentences`` (a list of strings).  Sentences are
the retrieval unit and are addressed by :class:`SentenceRef`, serialized
as ``doc_id#section_id#sentence_idx``.

Analysis lowercases, tokenizes on Unicode non-alphanumeric boundaries,
optionally removes stopwords, and stems.  Documents and sentences are
always indexed without stopword removal; stopword removal is opt-in and
meant for dialogue-side text.  A document's term statistics are the
concatenation of its sentences' tokens; titles and headings are not
indexed.
"""

from __future__ import annotations

import functools
import io
import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

REF_SEP = "#"
INDEX_MAGIC = "dialret-index"
INDEX_VERSION = 1

_VOWELS = frozenset("aeiouy")


class CorpusFormatError(ValueError):
    """Raised when an interchange file violates the corpus format."""


def _undouble(stem: str) -> str:
    if len(stem) >= 2 and stem[-1] == stem[-2] and stem[-1] not in "lsz":
        return stem[:-1]
    return stem


def light_stem(token: str) -> str:
    """Light inflectional stemmer stripping plural, -ed, and -ing endings.

    A dictionary-free stand-in for heavier inflectional stemmers.  The
    rules are deliberately conservative; exact outputs are frozen by
    golden tests so swapping the stemmer is an explicit, visible change.
    """
    t = token
    if t.endswith("ies") and len(t) > 4:
        t = t[:-3] + "y"
    elif t.endswith("sses"):
        t = t[:-2]
    elif t.endswith(("xes", "ches", "shes", "zes")):
        t = t[:-2]
    elif t.endswith("s") and not t.endswith(("ss", "us", "is")) and len(t) > 3:
        t = t[:-1]
    if t.endswith("ing") and len(t) > 5:
        stem = t[:-3]
        if _VOWELS & set(stem):
            t = _undouble(stem)
    elif t.endswith("ied") and len(t) > 4:
        t = t[:-3] + "y"
    elif t.endswith("ed") and len(t) > 4:
        stem = t[:-2]
        if _VOWELS & set(stem):
            t = _undouble(stem)
    return t


def _identity(token: str) -> str:
    return token


STEMMERS: dict[str, Callable[[str], str]] = {
    "light": light_stem,
    "none": _identity,
}


@dataclass(frozen=True)
class AnalyzerConfig:
    """Text analysis settings shared by indexing and query processing.

    ``token_pattern`` matches maximal runs of Unicode alphanumerics
    (underscore excluded).  ``stopwords`` are matched case-insensitively
    against unstemmed tokens and only removed when the caller asks;
    document text keeps its stopwords so sentence and document language
    models stay complete.
    """

    stemmer: str = "light"
    stopwords: frozenset[str] = frozenset()
    lowercase: bool = True
    token_pattern: str = r"[^\W_]+"

    def __post_init__(self) -> None:
        if self.stemmer not in STEMMERS:
            raise ValueError(
                f"unknown stemmer {self.stemmer!r}; expected one of {sorted(STEMMERS)}"
            )
        object.__setattr__(self, "stopwords", frozenset(w.lower() for w in self.stopwords))


@functools.lru_cache(maxsize=8)
def _compiled(pattern: str) -> re.Pattern[str]:
    return re.compile(pattern, re.UNICODE)


def analyze(text: str, config: AnalyzerConfig, apply_stopwords: bool = False) -> list[str]:
    """Analyze ``text`` into index terms.

    Pipeline: lowercase (when configured), tokenize, drop stopwords when
    ``apply_stopwords`` is true, then stem.  Stopwords are tested before
    stemming so the stoplist refers to surface forms.
    """
    if config.lowercase:
        text = text.lower()
    tokens = _compiled(config.token_pattern).findall(text)
    if apply_stopwords and config.stopwords:
        tokens = [t for t in tokens if t.lower() not in config.stopwords]
    stem = STEMMERS[config.stemmer]
    return [stem(t) for t in tokens]


def load_stopwords(path: str) -> frozenset[str]:
    """Read a stoplist file: one term per line, blanks and # comments skipped."""
    words = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            term = line.strip().lower()
            if term and not term.startswith("#"):
                words.add(term)
    return frozenset(words)


@dataclass(frozen=True, order=True)
class SentenceRef:
    """Address of one sentence: document, section, zero-based sentence index."""

    doc_id: str
    section_id: str
    sentence_idx: int

    def __str__(self) -> str:
        return f"{self.doc_id}{REF_SEP}{self.section_id}{REF_SEP}{self.sentence_idx}"

    @classmethod
    def parse(cls, text: str) -> "SentenceRef":
        parts = text.split(REF_SEP)
        if len(parts) != 3 or not parts[2].isdigit():
            raise ValueError(f"malformed sentence ref {text!r}")
        return cls(parts[0], parts[1], int(parts[2]))


@dataclass
class Section:
    section_id: str
    heading: str
    sentences: list[str]


@dataclass
class Document:
    doc_id: str
    title: str
    sections: list[Section]


def _check_id(value: str, what: str, where: str) -> None:
    if not value:
        raise CorpusFormatError(f"{where}: empty {what}")
    if REF_SEP in value:
        raise CorpusFormatError(f"{where}: {what} {value!r} contains reserved {REF_SEP!r}")
    if any(c.isspace() for c in value):
        raise CorpusFormatError(f"{where}: {what} {value!r} contains whitespace")


class Corpus:
    """Sectioned document collection with an analyzed sentence sidecar.

    The sidecar stores each sentence's term counts so sentence language
    models need no re-analysis at query time.  Treat instances as
    immutable once built.
    """

    def __init__(self, config: AnalyzerConfig):
        self.config = config
        self.documents: list[Document] = []
        self.diagnostics: list[str] = []
        self._by_id: dict[str, Document] = {}
        self._doc_refs: dict[str, list[str]] = {}
        self._section_refs: dict[tuple[str, str], list[str]] = {}
        self._sentence_text: dict[str, str] = {}
        self._sentence_tf: dict[str, Counter[str]] = {}

    def __len__(self) -> int:
        return len(self.documents)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    def add_document(
        self,
        doc: Document,
        where: str = "document",
        precomputed_tf: Mapping[str, Mapping[str, int]] | None = None,
    ) -> None:
        """Add a document, analyzing its sentences unless counts are supplied."""
        _check_id(doc.doc_id, "document id", where)
        if doc.doc_id in self._by_id:
            raise CorpusFormatError(f"{where}: duplicate document id {doc.doc_id!r}")
        if not doc.sections:
            raise CorpusFormatError(f"{where}: document {doc.doc_id!r} has no sections")
        seen_sections: set[str] = set()
        refs: list[str] = []
        for section in doc.sections:
            _check_id(section.section_id, "section id", f"{where}, document {doc.doc_id!r}")
            if section.section_id in seen_sections:
                raise CorpusFormatError(
                    f"{where}: duplicate section id {section.section_id!r} "
                    f"in document {doc.doc_id!r}"
                )
            seen_sections.add(section.section_id)
            if not section.sentences:
                self.diagnostics.append(
                    f"document {doc.doc_id!r} section {section.section_id!r} is empty"
                )
            srefs: list[str] = []
            for idx, sentence in enumerate(section.sentences):
                ref = str(SentenceRef(doc.doc_id, section.section_id, idx))
                if precomputed_tf is not None:
                    tf = Counter(precomputed_tf[ref])
                else:
                    tf = Counter(analyze(sentence, self.config, apply_stopwords=False))
                self._sentence_text[ref] = sentence
                self._sentence_tf[ref] = tf
                srefs.append(ref)
                refs.append(ref)
            self._section_refs[(doc.doc_id, section.section_id)] = srefs
        self.documents.append(doc)
        self._by_id[doc.doc_id] = doc
        self._doc_refs[doc.doc_id] = refs

    def document(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    def sentence_refs(self) -> Iterator[str]:
        for doc in self.documents:
            yield from self._doc_refs[doc.doc_id]

    def sentences_of_document(self, doc_id: str) -> list[str]:
        return self._doc_refs[doc_id]

    def sentences_of_section(self, doc_id: str, section_id: str) -> list[str]:
        return self._section_refs.get((doc_id, section_id), [])

    def has_section(self, doc_id: str, section_id: str) -> bool:
        return (doc_id, section_id) in self._section_refs

    def sentence_text(self, ref: str) -> str:
        return self._sentence_text[ref]

    def sentence_counts(self, ref: str) -> Counter[str]:
        return self._sentence_tf[ref]

    def sentence_length(self, ref: str) -> int:
        return sum(self._sentence_tf[ref].values())


@dataclass
class CollectionStats:
    """Collection-level term statistics.

    ``cf`` is collection term frequency, ``df`` document frequency, and
    ``sf`` sentence frequency.  ``total_terms`` counts all analyzed
    document tokens, which equals the sum of sentence lengths because a
    document's terms are exactly its sentences' terms.
    """

    total_terms: int
    doc_count: int
    sentence_count: int
    cf: dict[str, int]
    df: dict[str, int]
    sf: dict[str, int]
    avg_doc_len: float
    avg_sentence_len: float

    def collection_prob(self, term: str) -> float:
        if self.total_terms == 0:
            raise ValueError("empty collection: no background probability")
        return self.cf.get(term, 0) / self.total_terms


def collection_prob(term: str, stats: CollectionStats) -> float:
    """Background unigram probability ``cf(term) / total_terms``."""
    return stats.collection_prob(term)


class InvertedIndex:
    """Term to ``(doc_id, term frequency)`` postings plus document lengths.

    Postings lists are sorted by document id, which makes serialized
    builds reproducible byte for byte.
    """

    def __init__(self, postings: dict[str, list[tuple[str, int]]], doc_lengths: dict[str, int]):
        self.postings = postings
        self.doc_lengths = doc_lengths

    def doc_tf(self, term: str) -> list[tuple[str, int]]:
        return self.postings.get(term, [])


def build_index(corpus: Corpus) -> tuple[InvertedIndex, CollectionStats]:
    """Derive the inverted index and collection statistics from a corpus."""
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    cf: Counter[str] = Counter()
    df: Counter[str] = Counter()
    sf: Counter[str] = Counter()
    sentence_count = 0
    for doc in corpus.documents:
        doc_tf: Counter[str] = Counter()
        for ref in corpus.sentences_of_document(doc.doc_id):
            tf = corpus.sentence_counts(ref)
            doc_tf.update(tf)
            sf.update(tf.keys())
            sentence_count += 1
        doc_lengths[doc.doc_id] = sum(doc_tf.values())
        cf.update(doc_tf)
        df.update(doc_tf.keys())
        for term, count in doc_tf.items():
            postings.setdefault(term, []).append((doc.doc_id, count))
    for plist in postings.values():
        plist.sort()
    total = sum(doc_lengths.values())
    stats = CollectionStats(
        total_terms=total,
        doc_count=len(corpus.documents),
        sentence_count=sentence_count,
        cf=dict(cf),
        df=dict(df),
        sf=dict(sf),
        avg_doc_len=total / len(corpus.documents) if corpus.documents else 0.0,
        avg_sentence_len=total / sentence_count if sentence_count else 0.0,
    )
    return InvertedIndex(postings, doc_lengths), stats


def _parse_document(record: object, where: str) -> Document:
    if not isinstance(record, dict):
        raise CorpusFormatError(f"{where}: expected a JSON object")
    for name, typ in (("id", str), ("title", str), ("sections", list)):
        if name not in record:
            raise CorpusFormatError(f"{where}: missing field {name!r}")
        if not isinstance(record[name], typ):
            raise CorpusFormatError(f"{where}: field {name!r} must be {typ.__name__}")
    sections = []
    for si, sec in enumerate(record["sections"]):
        sec_where = f"{where}, section {si}"
        if not isinstance(sec, dict):
            raise CorpusFormatError(f"{sec_where}: expected a JSON object")
        for name, typ in (("id", str), ("heading", str), ("sentences", list)):
            if name not in sec:
                raise CorpusFormatError(f"{sec_where}: missing field {name!r}")
            if not isinstance(sec[name], typ):
                raise CorpusFormatError(f"{sec_where}: field {name!r} must be {typ.__name__}")
        for ti, sentence in enumerate(sec["sentences"]):
            if not isinstance(sentence, str):
                raise CorpusFormatError(f"{sec_where}: sentence {ti} must be a string")
        sections.append(Section(sec["id"], sec["heading"], list(sec["sentences"])))
    return Document(record["id"], record["title"], sections)


def read_corpus(source: Iterable[str] | str, config: AnalyzerConfig) -> Corpus:
    """Ingest a JSON Lines corpus from a path or an iterable of lines.

    Malformed records raise :class:`CorpusFormatError` naming the line and
    field; duplicate document ids name both offending lines.
    """
    if isinstance(source, str):
        with open(source, encoding="utf-8") as fh:
            return read_corpus(fh, config)
    corpus = Corpus(config)
    first_line: dict[str, int] = {}
    for lineno, line in enumerate(source, start=1):
        if not line.strip():
            continue
        where = f"line {lineno}"
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{where}: invalid JSON: {exc}") from exc
        doc = _parse_document(record, where)
        if doc.doc_id in first_line:
            raise CorpusFormatError(
                f"{where}: duplicate document id {doc.doc_id!r} "
                f"(first seen at line {first_line[doc.doc_id]})"
            )
        first_line[doc.doc_id] = lineno
        corpus.add_document(doc, where=where)
    return corpus


def ingest_corpus(
    source: Iterable[str] | str, config: AnalyzerConfig
) -> tuple[Corpus, InvertedIndex, CollectionStats]:
    """Read a corpus and build its index and statistics in one pass."""
    corpus = read_corpus(source, config)
    index, stats = build_index(corpus)
    return corpus, index, stats


def _document_record(doc: Document) -> dict:
    return {
        "id": doc.doc_id,
        "title": doc.title,
        "sections": [
            {"id": s.section_id, "heading": s.heading, "sentences": s.sentences}
            for s in doc.sections
        ],
    }


def save_index(path: str, corpus: Corpus, index: InvertedIndex) -> None:
    """Serialize the corpus, sidecar, and postings to a versioned file.

    The output is canonical: ingesting the same corpus file twice yields
    byte-identical index files.
    """
    header = {"magic": INDEX_MAGIC, "version": INDEX_VERSION}
    payload = {
        "config": {
            "stemmer": corpus.config.stemmer,
            "stopwords": sorted(corpus.config.stopwords),
            "lowercase": corpus.config.lowercase,
            "token_pattern": corpus.config.token_pattern,
        },
        "documents": [_document_record(d) for d in corpus.documents],
        "sentence_tf": {
            ref: dict(sorted(corpus.sentence_counts(ref).items()))
            for ref in corpus.sentence_refs()
        },
        "postings": {term: index.postings[term] for term in sorted(index.postings)},
        "doc_lengths": {d.doc_id: index.doc_lengths[d.doc_id] for d in corpus.documents},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_index(path: str) -> tuple[Corpus, InvertedIndex, CollectionStats]:
    """Load a serialized index, rejecting unknown formats or versions."""
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{path}: not an index file: {exc}") from exc
        if not isinstance(header, dict) or header.get("magic") != INDEX_MAGIC:
            raise CorpusFormatError(f"{path}: not an index file (bad magic)")
        if header.get("version") != INDEX_VERSION:
            raise CorpusFormatError(
                f"{path}: unsupported index version {header.get('version')!r}"
            )
        payload = json.loads(fh.read())
    cfg = payload["config"]
    config = AnalyzerConfig(
        stemmer=cfg["stemmer"],
        stopwords=frozenset(cfg["stopwords"]),
        lowercase=cfg["lowercase"],
        token_pattern=cfg["token_pattern"],
    )
    corpus = Corpus(config)
    sentence_tf = payload["sentence_tf"]
    for record in payload["documents"]:
        doc = _parse_document(record, "stored document")
        corpus.add_document(doc, where="stored document", precomputed_tf=sentence_tf)
    postings = {
        term: [(doc_id, tf) for doc_id, tf in plist]
        for term, plist in payload["postings"].items()
    }
    index = InvertedIndex(postings, dict(payload["doc_lengths"]))
    _, stats = build_index(corpus)
    return corpus, index, stats
