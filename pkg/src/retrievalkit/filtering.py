"""Recoverability filtering and priority selection over mined instances.

An instance is *recoverable* when its positive appears within the first R
positions of the first-stage run.  Recoverable instances are ranked by a
weighted priority

    w_rank * 1/rank + w_margin * (soft(margin) + 1) / 2 + w_pool * min(n_neg / P, 1)

with ``soft(x) = x / (1 + |x|)`` and ``margin`` the positive's first-stage
score minus the best negative score.  An empty negative pool gets a margin
term of 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

from .corpus import RankedRun
from .mining import TrainingInstance, with_rank

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PriorityWeights:
    w_rank: float = 0.4
    w_margin: float = 0.4
    w_pool: float = 0.2
    top_rank: int = 100
    pool_cap: int = 20

    def __post_init__(self):
        ws = (self.w_rank, self.w_margin, self.w_pool)
        if min(ws) < 0:
            raise ValueError("priority weights must be non-negative")
        if abs(sum(ws) - 1.0) > 1e-9:
            raise ValueError(f"priority weights must sum to 1, got {sum(ws)}")
        if self.top_rank < 1 or self.pool_cap < 1:
            raise ValueError("top_rank and pool_cap must be >= 1")

    @classmethod
    def parse(cls, text: str, **kwargs) -> "PriorityWeights":
        parts = [float(x) for x in text.split(",")]
        if len(parts) != 3:
            raise ValueError("weights are given as 'rank,margin,pool'")
        return cls(*parts, **kwargs)


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    instance: TrainingInstance
    reason: str = ""


def recoverability_filter(instance: TrainingInstance, run: RankedRun, top_rank: int = 100) -> FilterDecision:
    """Keep iff the positive sits at rank <= top_rank; attach rank and score."""
    if instance.query_id not in run:
        return FilterDecision(False, instance, "query not in run")
    for rank, (did, score) in enumerate(run.ranking(instance.query_id), start=1):
        if did == instance.positive_id:
            inst = with_rank(instance, rank, score)
            if rank <= top_rank:
                return FilterDecision(True, inst)
            return FilterDecision(False, inst, "positive below rank bound")
    return FilterDecision(False, with_rank(instance, None, None), "positive not retrieved")


def _soft_margin(margin: float) -> float:
    if math.isinf(margin):
        return 1.0 if margin > 0 else 0.0
    return (margin / (1.0 + abs(margin)) + 1.0) / 2.0


def priority_components(instance: TrainingInstance, pool_cap: int = 20) -> tuple[float, float, float]:
    if instance.positive_rank is None or instance.positive_score is None:
        raise ValueError(f"instance {instance.query_id} has no first-stage rank/score attached")
    rank_term = 1.0 / instance.positive_rank
    if instance.negatives:
        margin = instance.positive_score - max(n.score for n in instance.negatives)
        margin_term = _soft_margin(margin)
    else:
        margin_term = 1.0
    pool_term = min(len(instance.negatives) / pool_cap, 1.0)
    return rank_term, margin_term, pool_term


def priority_score(instance: TrainingInstance, weights: PriorityWeights = PriorityWeights()) -> float:
    r, m, p = priority_components(instance, weights.pool_cap)
    return weights.w_rank * r + weights.w_margin * m + weights.w_pool * p


def select_top(instances: Sequence[TrainingInstance], n: int,
               weights: PriorityWeights = PriorityWeights()) -> tuple[list[TrainingInstance], dict]:
    """Highest-priority ``n`` instances, ties broken by query_id then positive id."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > len(instances):
        logger.warning("requested %d instances but only %d are available; keeping all", n, len(instances))
    scored = sorted(((priority_score(i, weights), i) for i in instances),
                    key=lambda t: (-t[0], t[1].query_id, t[1].positive_id))
    selected = [i for _, i in scored[:n]]
    manifest = {
        "requested": n,
        "available": len(instances),
        "selected": len(selected),
        "dropped": len(instances) - len(selected),
        "weights": asdict(weights),
        "min_selected_priority": scored[min(n, len(scored)) - 1][0] if scored else None,
    }
    return selected, manifest


def filter_and_select(instances: Sequence[TrainingInstance], run: RankedRun, n: int | None,
                      weights: PriorityWeights = PriorityWeights()) -> tuple[list[TrainingInstance], dict]:
    """Recoverability filter followed by optional top-n selection."""
    kept, reasons = [], {}
    for inst in instances:
        decision = recoverability_filter(inst, run, weights.top_rank)
        if decision.keep:
            kept.append(decision.instance)
        else:
            reasons[decision.reason] = reasons.get(decision.reason, 0) + 1
    manifest = {"input": len(instances), "recoverable": len(kept), "dropped": reasons,
                "top_rank": weights.top_rank}
    if n is None:
        selected = sorted(kept, key=lambda i: (-priority_score(i, weights), i.query_id, i.positive_id))
        manifest["selection"] = None
    else:
        selected, manifest["selection"] = select_top(kept, n, weights) if kept else ([], None)
    manifest["output"] = len(selected)
    return selected, manifest
