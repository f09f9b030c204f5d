"""Hard-negative mining from first-stage runs and query hygiene filters.

Training instances are stored as JSON-lines::

    {"query_id": "q1", "query": "...", "source": "jua-juris",
     "positive": {"doc_id": "d1", "text": "...", "score": 12.3},
     "negatives": [{"doc_id": "d7", "text": "...", "score": 11.0}, ...],
     "positive_rank": 1}

``positive.score`` and ``positive_rank`` are null when the positive was not
retrieved by the first-stage run.
"""

from __future__ import annotations

import logging
import re
import statistics
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .bm25 import tokenize
from .corpus import Document, Query, QrelsSet, RankedRun, dumps_line, iter_jsonl
from .errors import DataError, FormatError

logger = logging.getLogger(__name__)

SOURCES = ("jua-juris", "ulysses", "ulysses-synth", "squad-pt", "other")


@dataclass(frozen=True)
class Negative:
    doc_id: str
    text: str
    score: float


@dataclass(frozen=True)
class TrainingInstance:
    query_id: str
    query: str
    positive_id: str
    positive_text: str
    negatives: tuple[Negative, ...] = ()
    source: str = "other"
    positive_score: float | None = None
    positive_rank: int | None = None

    def __post_init__(self):
        ids = [n.doc_id for n in self.negatives]
        if self.positive_id in ids:
            raise DataError(f"instance {self.query_id}: positive {self.positive_id!r} listed as negative")
        if len(set(ids)) != len(ids):
            raise DataError(f"instance {self.query_id}: duplicate negatives")

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "query": self.query,
            "source": self.source,
            "positive": {"doc_id": self.positive_id, "text": self.positive_text,
                         "score": self.positive_score},
            "negatives": [{"doc_id": n.doc_id, "text": n.text, "score": n.score}
                          for n in self.negatives],
            "positive_rank": self.positive_rank,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "TrainingInstance":
        pos = obj["positive"]
        negs = tuple(Negative(str(n["doc_id"]), n.get("text", ""), float(n.get("score") or 0.0))
                     for n in obj.get("negatives", ()))
        score = pos.get("score")
        return cls(
            query_id=str(obj.get("query_id", "")),
            query=obj["query"],
            positive_id=str(pos["doc_id"]),
            positive_text=pos.get("text", ""),
            negatives=negs,
            source=obj.get("source") or "other",
            positive_score=None if score is None else float(score),
            positive_rank=obj.get("positive_rank"),
        )


def load_instances(path) -> list[TrainingInstance]:
    out = []
    for lineno, obj in iter_jsonl(path):
        try:
            out.append(TrainingInstance.from_json(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(path, lineno, f"bad training instance ({exc})") from None
    return out


def save_instances(instances: Iterable[TrainingInstance], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(dumps_line(inst.to_json()))
            n += 1
    return n


def normalize_query(text: str) -> str:
    """Case-folded, whitespace-collapsed query text."""
    return re.sub(r"\s+", " ", text.casefold()).strip()


# ---------------------------------------------------------------------------
# Cutoffs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cutoff:
    """Score threshold rule: ``mean``, ``mean_plus_std`` (alpha) or ``top_fraction`` (tau)."""

    kind: str = "mean"
    param: float = 0.0

    def __post_init__(self):
        if self.kind == "mean_plus_std":
            if self.param < 0:
                raise ValueError("alpha must be >= 0")
        elif self.kind == "top_fraction":
            if not 0 < self.param <= 1:
                raise ValueError("tau must be in (0, 1]")
        elif self.kind != "mean":
            raise ValueError(f"unknown cutoff strategy {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "Cutoff":
        """Parse ``mean``, ``mean_plus_std:0.5`` or ``top_fraction:0.8``."""
        kind, _, param = text.partition(":")
        if kind == "mean":
            if param:
                raise ValueError("the mean cutoff takes no parameter")
            return cls("mean")
        if not param:
            raise ValueError(f"cutoff {kind!r} needs a parameter, e.g. {kind}:0.5")
        return cls(kind, float(param))

    def __str__(self):
        return self.kind if self.kind == "mean" else f"{self.kind}:{self.param:g}"


def apply_cutoff(candidates: Sequence[tuple[str, float]], strategy: Cutoff = Cutoff()) -> list[tuple[str, float]]:
    """Keep candidates scoring at or above the strategy's threshold, in order."""
    if not candidates:
        return []
    scores = [s for _, s in candidates]
    if strategy.kind == "top_fraction":
        threshold = Fraction(strategy.param) * Fraction(max(scores))
    else:
        # exact rational mean, so that equal scores are never cut by rounding
        threshold = sum(map(Fraction, scores)) / len(scores)
        if strategy.kind == "mean_plus_std" and strategy.param:
            threshold += Fraction(strategy.param * statistics.pstdev(scores))
    return [(d, s) for d, s in candidates if Fraction(s) >= threshold]


# ---------------------------------------------------------------------------
# Mining
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MiningConfig:
    cutoff: Cutoff = field(default_factory=Cutoff)
    max_negatives: int = 20
    min_negatives: int = 1
    candidate_depth: int = 100
    min_query_tokens: int = 4
    rel_threshold: int = 1

    def __post_init__(self):
        if self.max_negatives < 1:
            raise ValueError("max_negatives must be >= 1")
        if not 0 <= self.min_negatives <= self.max_negatives:
            raise ValueError("need 0 <= min_negatives <= max_negatives")
        if self.candidate_depth < 1:
            raise ValueError("candidate_depth must be >= 1")

    def describe(self) -> dict:
        return {"cutoff": str(self.cutoff), "max_negatives": self.max_negatives,
                "min_negatives": self.min_negatives, "candidate_depth": self.candidate_depth,
                "min_query_tokens": self.min_query_tokens, "rel_threshold": self.rel_threshold}


@dataclass(frozen=True)
class Skip:
    query_id: str
    positive_id: str | None
    reason: str


def mine_negatives(query: Query, run_ranking: Sequence[tuple[str, float]] | None,
                   qrels_for_query: Mapping[str, int], corpus: Mapping[str, Document],
                   config: MiningConfig = MiningConfig(), source: str = "other",
                   ) -> tuple[list[TrainingInstance], list[Skip]]:
    """Build one instance per positive of ``query``.

    ``run_ranking`` of None means the query is absent from the run.
    """
    positives = [d for d, g in qrels_for_query.items() if g >= config.rel_threshold]
    if not positives:
        return [], [Skip(query.query_id, None, "no positives")]
    for pid in positives:
        if pid not in corpus:
            raise DataError(f"positive {pid!r} of query {query.query_id!r} is not in the corpus")
    if run_ranking is None:
        return [], [Skip(query.query_id, p, "query not in run") for p in positives]

    top = list(run_ranking[: config.candidate_depth])
    pos_set = set(positives)
    candidates = [(d, s) for d, s in top if d not in pos_set]
    kept = apply_cutoff(candidates, config.cutoff)[: config.max_negatives]
    if len(kept) < config.min_negatives:
        return [], [Skip(query.query_id, p, "no negatives" if not kept else "too few negatives")
                    for p in positives]
    negatives = []
    for did, score in kept:
        doc = corpus.get(did)
        if doc is None:
            raise DataError(f"run document {did!r} (query {query.query_id!r}) is not in the corpus")
        negatives.append(Negative(did, doc.full_text, score))
    negatives = tuple(negatives)

    position = {d: (i, s) for i, (d, s) in enumerate(run_ranking, start=1)}
    out = []
    for pid in positives:
        rank, score = position.get(pid, (None, None))
        out.append(TrainingInstance(query.query_id, query.text, pid, corpus[pid].full_text,
                                    negatives, source, score, rank))
    return out, []


def mine_run(run: RankedRun, qrels: QrelsSet, corpus: Mapping[str, Document],
             queries: Iterable[Query], config: MiningConfig = MiningConfig(),
             source: str = "other") -> tuple[list[TrainingInstance], dict]:
    """Mine every judged query, in query-file order.  Returns instances and a report."""
    instances: list[TrainingInstance] = []
    skips: list[Skip] = []
    n_queries = 0
    for q in queries:
        if q.query_id not in qrels:
            continue
        n_queries += 1
        ranking = run.rankings.get(q.query_id)
        made, skipped = mine_negatives(q, ranking, qrels.for_query(q.query_id), corpus, config, source)
        instances.extend(made)
        skips.extend(skipped)
        for s in skipped:
            logger.info("skip %s/%s: %s", s.query_id, s.positive_id, s.reason)
    reasons: dict[str, int] = {}
    for s in skips:
        reasons[s.reason] = reasons.get(s.reason, 0) + 1
    report = {
        "source": source,
        "run_tag": run.tag,
        "config": config.describe(),
        "queries": n_queries,
        "instances": len(instances),
        "skipped": reasons,
        "negatives_per_instance": (sum(len(i.negatives) for i in instances) / len(instances)
                                   if instances else 0.0),
    }
    return instances, report


def filter_short_queries(instances: Sequence[TrainingInstance], config: MiningConfig = MiningConfig(),
                         ) -> tuple[list[TrainingInstance], list[tuple[TrainingInstance, str]]]:
    """Drop short queries and query texts paired with several distinct positives."""
    positives_by_text: dict[str, set[str]] = {}
    for inst in instances:
        positives_by_text.setdefault(normalize_query(inst.query), set()).add(inst.positive_id)
    kept, dropped = [], []
    for inst in instances:
        if len(tokenize(inst.query)) < config.min_query_tokens:
            dropped.append((inst, "short"))
        elif len(positives_by_text[normalize_query(inst.query)]) >= 2:
            dropped.append((inst, "ambiguous"))
        else:
            kept.append(inst)
    return kept, dropped


def with_rank(instance: TrainingInstance, rank: int | None, score: float | None) -> TrainingInstance:
    return replace(instance, positive_rank=rank, positive_score=score)
