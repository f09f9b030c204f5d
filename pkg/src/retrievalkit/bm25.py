"""Tokenizer, inverted index and BM25 first-stage retrieval.

Scoring uses Robertson term weighting with the non-negative IDF
``ln(1 + (N - df + 0.5) / (df + 0.5))``.  Query terms are deduplicated
before scoring.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Document, Query, RankedRun, canonical_order
from .errors import DataError

INDEX_FORMAT = "retrievalkit-bm25-index"
INDEX_VERSION = 1
INDEX_FILENAME = "index.jsonl"

_TOKEN_RE = re.compile(r"[^\W_]+")

# Small Portuguese function-word list, used only when explicitly requested.
PORTUGUESE_STOPWORDS = frozenset("""
a ao aos as até com como da das de dela dele deles do dos e ela elas ele eles
em entre era essa esse esta este eu foi for há isso isto já lhe mais mas me
mesmo muito na nas nem no nos não o os ou para pela pelas pelo pelos por qual
quando que quem se sem ser seu seus sua suas são só também te tem um uma umas
uns à às é
""".split())


def tokenize(text: str, stopwords: frozenset[str] | None = None) -> list[str]:
    """Lowercase and split on runs of Unicode letters/digits.

    Diacritics are kept and no stemming is applied.

    >>> tokenize("Lei 9.717/1998")
    ['lei', '9', '717', '1998']
    """
    tokens = _TOKEN_RE.findall(text.lower())
    if stopwords:
        tokens = [t for t in tokens if t not in stopwords]
    return tokens


@dataclass(frozen=True)
class BM25Params:
    k1: float = 0.9
    b: float = 0.4

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must lie in [0, 1], got {self.b}")


class InvertedIndex:
    """Term -> [(internal doc number, tf)] postings plus length statistics."""

    def __init__(self, doc_ids: list[str], doc_lengths: list[int],
                 postings: dict[str, list[tuple[int, int]]],
                 params: BM25Params | None = None, stopwords: bool = False):
        self.doc_ids = doc_ids
        self.doc_lengths = doc_lengths
        self.postings = postings
        self.params = params or BM25Params()
        self.stopwords = stopwords
        self.doc_count = len(doc_ids)
        self.avgdl = sum(doc_lengths) / self.doc_count if self.doc_count else 0.0
        self._internal = {d: i for i, d in enumerate(doc_ids)}
        self._tf = [dict() for _ in doc_ids]
        for term, plist in postings.items():
            for i, tf in plist:
                self._tf[i][term] = tf

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def tf(self, term: str, doc_id: str) -> int:
        return self._tf[self.internal_id(doc_id)].get(term, 0)

    def internal_id(self, doc_id: str) -> int:
        try:
            return self._internal[doc_id]
        except KeyError:
            raise KeyError(f"doc_id {doc_id!r} is not in the index") from None

    def idf(self, term: str) -> float:
        df = self.df(term)
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def analyze(self, text: str) -> list[str]:
        return tokenize(text, PORTUGUESE_STOPWORDS if self.stopwords else None)

    def __len__(self):
        return self.doc_count

    # -- persistence --------------------------------------------------------

    def save(self, directory) -> Path:
        """Write ``index.jsonl``: a header line, one line per doc, one per term."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / INDEX_FILENAME
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            header = {"format": INDEX_FORMAT, "version": INDEX_VERSION,
                      "params": asdict(self.params), "stopwords": self.stopwords,
                      "doc_count": self.doc_count, "term_count": len(self.postings)}
            fh.write(json.dumps(header) + "\n")
            for did, dl in zip(self.doc_ids, self.doc_lengths):
                fh.write(json.dumps({"doc": did, "len": dl}, ensure_ascii=False) + "\n")
            for term in sorted(self.postings):
                rec = {"term": term, "postings": [list(p) for p in self.postings[term]]}
                fh.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n")
        return path

    @classmethod
    def load(cls, directory) -> "InvertedIndex":
        path = Path(directory)
        if path.is_dir():
            path = path / INDEX_FILENAME
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != INDEX_FORMAT:
                raise DataError(f"{path} is not a BM25 index")
            if header.get("version") != INDEX_VERSION:
                raise DataError(f"unsupported index version {header.get('version')}")
            doc_ids, lengths, postings = [], [], {}
            for line in fh:
                rec = json.loads(line)
                if "doc" in rec:
                    doc_ids.append(rec["doc"])
                    lengths.append(rec["len"])
                else:
                    postings[rec["term"]] = [tuple(p) for p in rec["postings"]]
        if len(doc_ids) != header["doc_count"]:
            raise DataError(f"{path}: truncated index")
        return cls(doc_ids, lengths, postings, BM25Params(**header["params"]),
                   header.get("stopwords", False))


def build_index(corpus: Sequence[Document], params: BM25Params | None = None,
                stopwords: bool = False) -> InvertedIndex:
    if not corpus:
        raise DataError("cannot index an empty corpus")
    stop = PORTUGUESE_STOPWORDS if stopwords else None
    doc_ids, lengths = [], []
    postings: dict[str, list[tuple[int, int]]] = {}
    for i, doc in enumerate(corpus):
        tokens = tokenize(doc.full_text, stop)
        doc_ids.append(doc.doc_id)
        lengths.append(len(tokens))
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, []).append((i, tf))
    if len(set(doc_ids)) != len(doc_ids):
        raise DataError("corpus has duplicate doc_ids")
    return InvertedIndex(doc_ids, lengths, postings, params, stopwords)


def _unique(tokens: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(tokens))


def _term_weight(idf, tf, dl, avgdl, params: BM25Params) -> float:
    norm = params.k1 * (1.0 - params.b + params.b * dl / avgdl) if avgdl > 0 else params.k1
    return idf * tf * (params.k1 + 1.0) / (tf + norm)


def bm25_score(index: InvertedIndex, params: BM25Params | None,
               query_tokens: Sequence[str], doc_id: str) -> float:
    """Score one document; unknown terms contribute nothing."""
    params = params or index.params
    i = index.internal_id(doc_id)
    tfs = index._tf[i]
    dl = index.doc_lengths[i]
    score = 0.0
    for term in _unique(query_tokens):
        tf = tfs.get(term, 0)
        if tf:
            score += _term_weight(index.idf(term), tf, dl, index.avgdl, params)
    return score


def bm25_search(index: InvertedIndex, params: BM25Params | None, query,
                k: int) -> list[tuple[str, float]]:
    """Top-k (doc_id, score) over docs sharing at least one query term.

    ``query`` is raw text or a pre-tokenized sequence.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    params = params or index.params
    tokens = index.analyze(query) if isinstance(query, str) else list(query)
    scores: dict[int, float] = {}
    # term-at-a-time in query order, so float sums match bm25_score exactly
    for term in _unique(tokens):
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for i, tf in plist:
            w = _term_weight(idf, tf, index.doc_lengths[i], index.avgdl, params)
            scores[i] = scores.get(i, 0.0) + w
    ranked = canonical_order((index.doc_ids[i], s) for i, s in scores.items())
    return ranked[:k]


def bm25_run(index: InvertedIndex, params: BM25Params | None, queries: Iterable[Query],
             k: int, tag: str = "bm25", threads: int = 1) -> RankedRun:
    queries = list(queries)

    def one(q):
        return q.query_id, bm25_search(index, params, q.text, k)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, queries))
    else:
        results = [one(q) for q in queries]
    return RankedRun(tag, {qid: entries for qid, entries in results})
