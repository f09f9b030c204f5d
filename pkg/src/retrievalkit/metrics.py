"""Truncated ranking metrics (NDCG@k, MRR@k, MAP@k) and dataset aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .corpus import QrelsSet, RankedRun
from .errors import DataError

METRICS = ("ndcg", "mrr", "map")


@dataclass(frozen=True)
class MetricSpec:
    """Cutoff and relevance conventions.

    ``map_denominator="full"`` divides AP by every relevant document judged
    for the query (trec_eval's ``map_cut``); ``"min"`` uses ``min(R, k)``.
    """

    k: int = 10
    gain: str = "linear"
    rel_threshold: int = 1
    map_denominator: str = "full"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.rel_threshold < 1:
            raise ValueError("rel_threshold must be >= 1")
        if self.gain not in ("linear", "exponential"):
            raise ValueError(f"unknown gain {self.gain!r}")
        if self.map_denominator not in ("full", "min"):
            raise ValueError(f"unknown MAP denominator {self.map_denominator!r}")


def _gain(grade: int, kind: str) -> float:
    if grade <= 0:
        return 0.0
    return float(grade) if kind == "linear" else 2.0 ** grade - 1.0


def ndcg_at_k(ranking: Sequence[str], qrels: Mapping[str, int], spec: MetricSpec = MetricSpec()) -> float:
    ideal = sorted((g for g in qrels.values() if g > 0), reverse=True)[: spec.k]
    idcg = sum(_gain(g, spec.gain) / math.log2(i + 2) for i, g in enumerate(ideal))
    if idcg == 0:
        return 0.0
    dcg = sum(_gain(qrels.get(d, 0), spec.gain) / math.log2(i + 2)
              for i, d in enumerate(ranking[: spec.k]))
    return dcg / idcg


def mrr_at_k(ranking: Sequence[str], qrels: Mapping[str, int], spec: MetricSpec = MetricSpec()) -> float:
    for i, d in enumerate(ranking[: spec.k], start=1):
        if qrels.get(d, 0) >= spec.rel_threshold:
            return 1.0 / i
    return 0.0


def map_at_k(ranking: Sequence[str], qrels: Mapping[str, int], spec: MetricSpec = MetricSpec()) -> float:
    n_rel = sum(1 for g in qrels.values() if g >= spec.rel_threshold)
    if spec.map_denominator == "min":
        n_rel = min(n_rel, spec.k)
    if n_rel == 0:
        return 0.0
    hits = 0
    total = 0.0
    for i, d in enumerate(ranking[: spec.k], start=1):
        if qrels.get(d, 0) >= spec.rel_threshold:
            hits += 1
            total += hits / i
    return total / n_rel


_METRIC_FNS = {"ndcg": ndcg_at_k, "mrr": mrr_at_k, "map": map_at_k}


@dataclass
class MetricReport:
    per_query: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)
    per_dataset: dict[str, dict[str, float]] = field(default_factory=dict)

    def aggregate(self, subset: Sequence[str] | None = None) -> dict[str, float]:
        """Unweighted mean of the dataset means, per metric."""
        return {m: aggregate_datasets({d: v[m] for d, v in self.per_dataset.items()}, subset)
                for m in METRICS}

    def merge(self, other: "MetricReport") -> "MetricReport":
        overlap = set(self.per_dataset) & set(other.per_dataset)
        if overlap:
            raise DataError(f"datasets reported twice: {sorted(overlap)}")
        return MetricReport({**self.per_query, **other.per_query},
                            {**self.per_dataset, **other.per_dataset})


def evaluate_query(ranking: Sequence[str], qrels: Mapping[str, int],
                   spec: MetricSpec = MetricSpec()) -> dict[str, float]:
    return {m: fn(ranking, qrels, spec) for m, fn in _METRIC_FNS.items()}


def evaluate_run(run: RankedRun, qrels: QrelsSet, spec: MetricSpec = MetricSpec(),
                 dataset: str = "dataset") -> MetricReport:
    """Score every query in ``qrels``; queries the run lacks score 0."""
    if not len(qrels):
        raise DataError("qrels are empty")
    per_query = {}
    for qid in qrels.query_ids:
        per_query[qid] = evaluate_query(run.doc_ids(qid), qrels.for_query(qid), spec)
    n = len(per_query)
    means = {m: sum(v[m] for v in per_query.values()) / n for m in METRICS}
    return MetricReport({dataset: per_query}, {dataset: means})


def aggregate_datasets(per_dataset_values: Mapping[str, float],
                       subset: Sequence[str] | None = None) -> float:
    """Unweighted arithmetic mean over datasets (all, or the named subset)."""
    names = list(per_dataset_values) if subset is None else list(subset)
    if not names:
        raise DataError("no datasets selected for aggregation")
    unknown = [n for n in names if n not in per_dataset_values]
    if unknown:
        raise DataError(f"unknown dataset(s): {', '.join(unknown)}")
    return sum(per_dataset_values[n] for n in names) / len(names)
