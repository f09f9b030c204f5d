"""Random collections shared by the test modules."""

from __future__ import annotations

import numpy as np

from retrievalkit.corpus import Document, QrelsSet, Query, RankedRun
from retrievalkit.mining import Negative, TrainingInstance


def separable_collection(n_queries=500, n_docs=2000, n_fillers=300, doc_fillers=30,
                         query_fillers=6, negatives=4, seed=0):
    """Each query shares exactly one token (its key) with its positive only.

    Returns (queries, corpus, qrels, instances).  Hard negatives are random
    non-positive documents.
    """
    rng = np.random.default_rng(seed)
    fillers = [f"w{i}" for i in range(n_fillers)]

    def filler_text(n):
        return " ".join(fillers[j] for j in rng.integers(0, n_fillers, size=n))

    corpus = []
    for i in range(n_docs):
        body = filler_text(doc_fillers)
        if i < n_queries:
            body = f"key{i} {body}"
        corpus.append(Document(f"d{i:05d}", body))
    queries = [Query(f"q{i:04d}", f"key{i} {filler_text(query_fillers)}") for i in range(n_queries)]
    qrels = QrelsSet({q.query_id: {f"d{i:05d}": 1} for i, q in enumerate(queries)})
    instances = []
    for i, q in enumerate(queries):
        picks = []
        while len(picks) < negatives:
            j = int(rng.integers(0, n_docs))
            if j != i and j not in picks:
                picks.append(j)
        negs = tuple(Negative(corpus[j].doc_id, corpus[j].text, 0.0) for j in picks)
        instances.append(TrainingInstance(q.query_id, q.text, corpus[i].doc_id, corpus[i].text, negs))
    return queries, corpus, qrels, instances


def random_qrels_and_run(rng, max_docs=50, max_grade=4, n_queries=1):
    """Random graded qrels and a random run over a pool of <= max_docs docs."""
    judgments, rankings = {}, {}
    for qi in range(n_queries):
        n = int(rng.integers(1, max_docs + 1))
        docs = [f"d{j}" for j in range(n)]
        grades = {d: int(rng.integers(0, max_grade + 1)) for d in docs if rng.random() < 0.6}
        if not grades:
            grades = {docs[0]: int(rng.integers(0, max_grade + 1))}
        qid = f"q{qi}"
        judgments[qid] = grades
        retrieved = [docs[j] for j in rng.permutation(n)[: int(rng.integers(0, n + 1))]]
        rankings[qid] = [(d, float(len(retrieved) - r)) for r, d in enumerate(retrieved)]
    return QrelsSet(judgments), RankedRun("rand", rankings)


def random_corpus(rng, n_docs, vocab_size=30, max_len=12, prefix="d"):
    words = [f"t{i}" for i in range(vocab_size)]
    docs = []
    for i in range(n_docs):
        length = int(rng.integers(1, max_len + 1))
        docs.append(Document(f"{prefix}{i:04d}", " ".join(words[j] for j in rng.integers(0, vocab_size, size=length))))
    return docs, words
