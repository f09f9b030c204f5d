"""Collection data model and the on-disk formats it travels in.

Corpora, queries and training instances are JSON-lines (UTF-8, one object per
line).  Queries may also be given as ``id<TAB>text``.  Relevance judgments and
runs use the TREC layouts::

    qrels:  qid 0 docid grade
    run:    qid Q0 docid rank score tag      (score printed with 6 decimals)
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import DataError, FormatError

logger = logging.getLogger(__name__)

RUN_SCORE_DECIMALS = 6


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    title: str | None = None

    def __post_init__(self):
        if not self.doc_id:
            raise DataError("document with empty doc_id")
        if not self.text and not self.title:
            raise DataError(f"document {self.doc_id!r} has neither text nor title")

    @property
    def full_text(self) -> str:
        """Text used for indexing: title and body joined by a space."""
        if self.title:
            return f"{self.title} {self.text}" if self.text else self.title
        return self.text


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str

    def __post_init__(self):
        if not self.query_id:
            raise DataError("query with empty query_id")
        if not self.text:
            raise DataError(f"query {self.query_id!r} has empty text")


class QrelsSet:
    """Graded relevance judgments, ``query_id -> doc_id -> grade``.

    Unjudged pairs have grade 0.
    """

    def __init__(self, judgments: Mapping[str, Mapping[str, int]] | None = None):
        self.judgments: dict[str, dict[str, int]] = {}
        for qid, docs in (judgments or {}).items():
            for did, grade in docs.items():
                if isinstance(grade, bool) or not isinstance(grade, int) or grade < 0:
                    raise DataError(f"invalid grade {grade!r} for ({qid}, {did})")
            self.judgments[qid] = dict(docs)

    def grade(self, query_id: str, doc_id: str) -> int:
        return self.judgments.get(query_id, {}).get(doc_id, 0)

    def for_query(self, query_id: str) -> dict[str, int]:
        return self.judgments.get(query_id, {})

    def positives(self, query_id: str, threshold: int = 1) -> list[str]:
        """Doc ids with grade >= threshold, in judgment order."""
        return [d for d, g in self.for_query(query_id).items() if g >= threshold]

    @property
    def query_ids(self) -> list[str]:
        return list(self.judgments)

    def __len__(self):
        return len(self.judgments)

    def __contains__(self, query_id):
        return query_id in self.judgments

    def __eq__(self, other):
        return isinstance(other, QrelsSet) and self.judgments == other.judgments

    def __repr__(self):
        return f"QrelsSet({len(self)} queries)"


def canonical_order(entries: Iterable[tuple[str, float]]) -> list[tuple[str, float]]:
    """Sort (doc_id, score) pairs by score descending, doc_id ascending."""
    return sorted(entries, key=lambda e: (-e[1], e[0]))


@dataclass
class RankedRun:
    """Per-query ranked lists.  Position i in a list is rank i + 1."""

    tag: str
    rankings: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def ranking(self, query_id: str) -> list[tuple[str, float]]:
        return self.rankings.get(query_id, [])

    def doc_ids(self, query_id: str) -> list[str]:
        return [d for d, _ in self.rankings.get(query_id, [])]

    def rank_of(self, query_id: str, doc_id: str) -> int | None:
        for i, (d, _) in enumerate(self.rankings.get(query_id, []), start=1):
            if d == doc_id:
                return i
        return None

    def __contains__(self, query_id):
        return query_id in self.rankings

    def __len__(self):
        return len(self.rankings)


# ---------------------------------------------------------------------------
# JSON-lines helpers
# ---------------------------------------------------------------------------


def iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    """Yield (line number, object) for each non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise FormatError(path, lineno, "expected a JSON object")
            yield lineno, obj


def dumps_line(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n"


def write_jsonl(records: Iterable[dict], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps_line(rec))
            n += 1
    return n


# ---------------------------------------------------------------------------
# Corpus and queries
# ---------------------------------------------------------------------------


def _infer_format(path) -> str:
    return "tsv" if Path(path).suffix.lower() in (".tsv", ".txt") else "jsonl"


def load_corpus(path, format: str | None = None) -> list[Document]:
    """Load documents in file order.

    JSON-lines records need ``doc_id`` (``id`` and ``_id`` are accepted) and
    ``text`` and/or ``title``.  TSV lines are ``doc_id<TAB>text``.
    """
    format = format or _infer_format(path)
    if format not in ("jsonl", "tsv"):
        raise DataError(f"unknown corpus format {format!r}")
    docs: list[Document] = []
    seen: dict[str, int] = {}
    records = _iter_jsonl_docs(path) if format == "jsonl" else _iter_tsv(path)
    for lineno, doc_id, text, title in records:
        if doc_id in seen:
            raise FormatError(path, lineno, f"duplicate doc_id {doc_id!r} (first seen at line {seen[doc_id]})")
        try:
            docs.append(Document(doc_id, text, title))
        except DataError as exc:
            raise FormatError(path, lineno, str(exc)) from None
        seen[doc_id] = lineno
    return docs


def _iter_jsonl_docs(path):
    for lineno, obj in iter_jsonl(path):
        doc_id = obj.get("doc_id", obj.get("id", obj.get("_id")))
        if doc_id is None:
            raise FormatError(path, lineno, "record has no doc_id")
        text = obj.get("text")
        title = obj.get("title")
        if text is None and title is None:
            raise FormatError(path, lineno, "record has no text field")
        if not isinstance(text, (str, type(None))) or not isinstance(title, (str, type(None))):
            raise FormatError(path, lineno, "text and title must be strings")
        yield lineno, str(doc_id), text or "", title or None


def _iter_tsv(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise FormatError(path, lineno, "expected 'id<TAB>text'")
            yield lineno, parts[0], parts[1], None


def corpus_index(docs: Iterable[Document]) -> dict[str, Document]:
    return {d.doc_id: d for d in docs}


def save_corpus(docs: Iterable[Document], path) -> int:
    def records():
        for d in docs:
            rec = {"doc_id": d.doc_id, "text": d.text}
            if d.title:
                rec["title"] = d.title
            yield rec

    return write_jsonl(records(), path)


def load_queries(path, format: str | None = None) -> list[Query]:
    """Load queries from JSON-lines (``query_id``/``text``) or TSV."""
    format = format or _infer_format(path)
    queries: list[Query] = []
    seen: set[str] = set()
    if format == "tsv":
        records = ((ln, qid, text) for ln, qid, text, _ in _iter_tsv(path))
    elif format == "jsonl":
        records = _iter_jsonl_queries(path)
    else:
        raise DataError(f"unknown query format {format!r}")
    for lineno, qid, text in records:
        if qid in seen:
            raise FormatError(path, lineno, f"duplicate query_id {qid!r}")
        try:
            queries.append(Query(qid, text))
        except DataError as exc:
            raise FormatError(path, lineno, str(exc)) from None
        seen.add(qid)
    return queries


def _iter_jsonl_queries(path):
    for lineno, obj in iter_jsonl(path):
        qid = obj.get("query_id", obj.get("id", obj.get("_id")))
        text = obj.get("text", obj.get("query"))
        if qid is None or not isinstance(text, str):
            raise FormatError(path, lineno, "query record needs query_id and text")
        yield lineno, str(qid), text


def save_queries(queries: Iterable[Query], path) -> int:
    return write_jsonl(({"query_id": q.query_id, "text": q.text} for q in queries), path)


# ---------------------------------------------------------------------------
# TREC qrels and runs
# ---------------------------------------------------------------------------


def load_qrels(path) -> QrelsSet:
    judgments: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise FormatError(path, lineno, "expected 'qid 0 docid grade'")
            qid, _, did, raw = parts
            try:
                grade = int(raw)
            except ValueError:
                raise FormatError(path, lineno, f"non-integer grade {raw!r}") from None
            if grade < 0:
                raise FormatError(path, lineno, f"negative grade {grade}")
            docs = judgments.setdefault(qid, {})
            if did in docs:
                logger.warning("%s:%d: repeated judgment for (%s, %s); keeping grade %d",
                               path, lineno, qid, did, grade)
            docs[did] = grade
    return QrelsSet(judgments)


def write_qrels(qrels: QrelsSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid, docs in qrels.judgments.items():
            for did, grade in docs.items():
                fh.write(f"{qid} 0 {did} {grade}\n")


def read_run(path, tag: str | None = None) -> RankedRun:
    """Parse a TREC run.

    Entries are re-sorted by (score desc, doc_id asc) and re-ranked, so the
    rank column of the file is informational only.
    """
    rankings: dict[str, list[tuple[str, float]]] = {}
    seen: dict[str, set[str]] = {}
    file_tag = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise FormatError(path, lineno, "expected 'qid Q0 docid rank score tag'")
            qid, _, did, _, raw_score, line_tag = parts
            try:
                score = float(raw_score)
            except ValueError:
                raise FormatError(path, lineno, f"non-numeric score {raw_score!r}") from None
            if score != score or score in (float("inf"), float("-inf")):
                raise FormatError(path, lineno, f"non-finite score {raw_score!r}")
            docs = seen.setdefault(qid, set())
            if did in docs:
                raise FormatError(path, lineno, f"duplicate entry ({qid}, {did})")
            docs.add(did)
            rankings.setdefault(qid, []).append((did, score))
            file_tag = file_tag or line_tag
    for qid in rankings:
        rankings[qid] = canonical_order(rankings[qid])
    return RankedRun(tag or file_tag or Path(path).stem, rankings)


def format_run_lines(run: RankedRun) -> Iterator[str]:
    for qid, entries in run.rankings.items():
        for rank, (did, score) in enumerate(entries, start=1):
            yield f"{qid} Q0 {did} {rank} {score:.{RUN_SCORE_DECIMALS}f} {run.tag}\n"


def write_run(run: RankedRun, path) -> None:
    if not run.tag or any(c.isspace() for c in run.tag):
        raise DataError(f"run tag must be a non-empty token, got {run.tag!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(format_run_lines(run))
