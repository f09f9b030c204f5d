import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ref_ap, ref_mrr, ref_ndcg
from synthetic import random_qrels_and_run
from retrievalkit.corpus import QrelsSet, RankedRun
from retrievalkit.errors import DataError
from retrievalkit.metrics import (MetricReport, MetricSpec, aggregate_datasets, evaluate_run,
                                  map_at_k, mrr_at_k, ndcg_at_k)


class TestNDCG:
    def test_perfect(self):
        assert ndcg_at_k(["d1"], {"d1": 1}) == 1.0

    def test_graded_swap(self):
        # oracles.ref_ndcg: DCG 1 + 3/log2(3), IDCG 3 + 1/log2(3)
        assert ndcg_at_k(["d2", "d1"], {"d1": 3, "d2": 1}) == pytest.approx(0.7967075809905066, abs=1e-12)
        assert ndcg_at_k(["d2", "d1"], {"d1": 3, "d2": 1}) == pytest.approx(0.79671, abs=5e-6)

    def test_truncation(self):
        ranking = [f"x{i}" for i in range(10)] + ["d1"]
        assert ndcg_at_k(ranking, {"d1": 1}) == 0.0

    def test_zero_gain_query(self):
        assert ndcg_at_k(["d1"], {"d1": 0}) == 0.0
        assert ndcg_at_k(["d1"], {}) == 0.0

    def test_exponential_gain(self):
        got = ndcg_at_k(["d2", "d1"], {"d1": 2, "d2": 1}, MetricSpec(gain="exponential"))
        assert got == pytest.approx((1 + 3 / math.log2(3)) / (3 + 1 / math.log2(3)))


class TestMRR:
    def test_rank_one(self):
        assert mrr_at_k(["d1", "x"], {"d1": 1}) == 1.0

    def test_rank_four(self):
        assert mrr_at_k(["a", "b", "c", "d1"], {"d1": 2}) == 0.25

    def test_none_in_top_k(self):
        assert mrr_at_k([f"x{i}" for i in range(10)] + ["d1"], {"d1": 1}) == 0.0

    def test_threshold(self):
        assert mrr_at_k(["a", "b"], {"a": 1, "b": 2}, MetricSpec(rel_threshold=2)) == 0.5


class TestMAP:
    def test_worked(self):
        assert map_at_k(["d1", "x", "d2", "y"], {"d1": 1, "d2": 1}) == pytest.approx(5 / 6, abs=1e-15)

    def test_perfect(self):
        assert map_at_k(["a", "b", "c"], {"a": 1, "b": 2, "c": 1}) == 1.0

    def test_nothing_retrieved(self):
        assert map_at_k(["x", "y"], {"a": 1}) == 0.0

    def test_no_relevant(self):
        assert map_at_k(["x"], {"x": 0}) == 0.0

    def test_full_vs_min_denominator(self):
        grades = {f"d{i}": 1 for i in range(15)}
        ranking = [f"d{i}" for i in range(10)]
        assert map_at_k(ranking, grades) == pytest.approx(10 / 15)
        assert map_at_k(ranking, grades, MetricSpec(map_denominator="min")) == 1.0


def test_oracle_agreement_randomized():
    rng = np.random.default_rng(0)
    for _ in range(300):
        qrels, run = random_qrels_and_run(rng)
        grades, ranking = qrels.for_query("q0"), run.doc_ids("q0")
        for k in (1, 3, 10):
            for exp in (False, True):
                spec = MetricSpec(k=k, gain="exponential" if exp else "linear")
                assert ndcg_at_k(ranking, grades, spec) == pytest.approx(ref_ndcg(ranking, grades, k, exp), abs=1e-9)
            spec = MetricSpec(k=k, rel_threshold=2)
            assert mrr_at_k(ranking, grades, spec) == pytest.approx(ref_mrr(ranking, grades, k, 2), abs=1e-9)
            assert map_at_k(ranking, grades, spec) == pytest.approx(ref_ap(ranking, grades, k, 2), abs=1e-9)


@st.composite
def judged_ranking(draw):
    n = draw(st.integers(1, 25))
    docs = [f"d{i}" for i in range(n)]
    grades = {d: draw(st.integers(0, 3)) for d in docs}
    perm = draw(st.permutations(docs))
    k = draw(st.integers(1, 12))
    return list(perm), grades, k


@given(judged_ranking())
@settings(max_examples=200, deadline=None)
def test_bounds_and_tail_invariance(case):
    ranking, grades, k = case
    spec = MetricSpec(k=k)
    vals = [f(ranking, grades, spec) for f in (ndcg_at_k, mrr_at_k, map_at_k)]
    assert all(0.0 <= v <= 1.0 + 1e-12 for v in vals)
    tail = ranking[k:][::-1]
    permuted = ranking[:k] + tail
    assert [f(permuted, grades, spec) for f in (ndcg_at_k, mrr_at_k, map_at_k)] == vals
    if ranking and grades.get(ranking[0], 0) >= 1:
        assert mrr_at_k(ranking, grades, spec) == 1.0


@given(judged_ranking(), st.data())
@settings(max_examples=200, deadline=None)
def test_ndcg_swap_monotone(case, data):
    ranking, grades, k = case
    if len(ranking) < 2:
        return
    i = data.draw(st.integers(0, len(ranking) - 2))
    j = data.draw(st.integers(i + 1, len(ranking) - 1))
    if grades[ranking[j]] <= grades[ranking[i]]:
        return
    swapped = list(ranking)
    swapped[i], swapped[j] = swapped[j], swapped[i]
    spec = MetricSpec(k=k)
    assert ndcg_at_k(swapped, grades, spec) >= ndcg_at_k(ranking, grades, spec) - 1e-12


class TestEvaluateRun:
    def test_perfect_run(self):
        qrels = QrelsSet({"q1": {"a": 1}, "q2": {"b": 2, "c": 1}})
        run = RankedRun("r", {"q1": [("a", 2.0)], "q2": [("b", 2.0), ("c", 1.0)]})
        report = evaluate_run(run, qrels, dataset="ds")
        assert report.per_dataset["ds"] == {"ndcg": 1.0, "mrr": 1.0, "map": 1.0}

    def test_missing_query_scores_zero(self):
        qrels = QrelsSet({"q1": {"a": 1}, "q2": {"b": 1}})
        run = RankedRun("r", {"q1": [("a", 1.0)], "q_extra": [("b", 1.0)]})
        report = evaluate_run(run, qrels, dataset="ds")
        assert report.per_query["ds"]["q2"] == {"ndcg": 0.0, "mrr": 0.0, "map": 0.0}
        assert report.per_dataset["ds"] == {"ndcg": 0.5, "mrr": 0.5, "map": 0.5}
        assert "q_extra" not in report.per_query["ds"]

    def test_empty_qrels(self):
        with pytest.raises(DataError):
            evaluate_run(RankedRun("r"), QrelsSet())

    def test_dataset_mean_matches_oracle(self):
        rng = np.random.default_rng(9)
        qrels, run = random_qrels_and_run(rng, n_queries=40)
        report = evaluate_run(run, qrels, dataset="ds")
        want = np.mean([ref_ndcg(run.doc_ids(q), qrels.for_query(q), 10) for q in qrels.query_ids])
        assert report.per_dataset["ds"]["ndcg"] == pytest.approx(want, abs=1e-12)

    def test_report_aggregate(self):
        report = MetricReport(per_dataset={"a": {"ndcg": 0.2, "mrr": 0.4, "map": 0.1},
                                           "b": {"ndcg": 0.4, "mrr": 0.6, "map": 0.3}})
        assert report.aggregate() == pytest.approx({"ndcg": 0.3, "mrr": 0.5, "map": 0.2})
        assert report.aggregate(["b"]) == {"ndcg": 0.4, "mrr": 0.6, "map": 0.3}


class TestAggregate:
    def test_unweighted_mean(self):
        assert aggregate_datasets({"a": 0.2, "b": 0.4, "c": 0.9}) == pytest.approx(0.5)

    def test_subset(self):
        assert aggregate_datasets({"a": 0.2, "b": 0.4, "c": 0.9}, ["a", "c"]) == pytest.approx(0.55)

    def test_single(self):
        assert aggregate_datasets({"a": 0.123, "b": 0.9}, ["a"]) == 0.123

    def test_unknown(self):
        with pytest.raises(DataError, match="zz"):
            aggregate_datasets({"a": 0.1}, ["zz"])

    def test_empty_selection(self):
        with pytest.raises(DataError):
            aggregate_datasets({"a": 0.1}, [])

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.randoms())
    @settings(max_examples=100, deadline=None)
    def test_permutation_invariant(self, values, rnd):
        named = {f"ds{i}": v for i, v in enumerate(values)}
        keys = list(named)
        rnd.shuffle(keys)
        shuffled = {k: named[k] for k in keys}
        assert aggregate_datasets(shuffled) == pytest.approx(aggregate_datasets(named), abs=1e-12)
