"""Desk-scale contrastive trainer.

The encoder maps a text to the L2-normalised mean of its token embeddings.
Training minimises InfoNCE where each query competes its positive against
the other positives in the batch and its own hard negatives.  Gradients are
analytic, including the Jacobian of the normalisation.

Candidate sets are deduplicated by doc_id, and a peer whose positive is the
query's own positive is not used as a negative.
"""

from __future__ import annotations

import io
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .bm25 import tokenize
from .corpus import Document, Query, QrelsSet, RankedRun
from .dense import VectorStore, dense_search_many
from .errors import DataError
from .metrics import MetricSpec, evaluate_run
from .mining import TrainingInstance

logger = logging.getLogger(__name__)


class ToyEncoder:
    def __init__(self, vocab: Mapping[str, int], table: np.ndarray):
        self.vocab = dict(vocab)
        self.table = np.asarray(table, dtype=np.float64)
        self._pool_cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        if self.table.shape[0] != len(self.vocab):
            raise ValueError("embedding table rows must match the vocabulary size")

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @classmethod
    def initialize(cls, vocab: Mapping[str, int], dim: int = 64, seed: int = 0) -> "ToyEncoder":
        rng = np.random.default_rng(seed)
        return cls(vocab, rng.normal(0.0, 1.0 / np.sqrt(dim), size=(len(vocab), dim)))

    def pooling(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        """In-vocabulary token rows and their mean-pooling weights."""
        cached = self._pool_cache.get(text)
        if cached is not None:
            return cached
        counts = Counter(self.vocab[t] for t in tokenize(text) if t in self.vocab)
        m = sum(counts.values())
        if not m:
            ids, weights = np.zeros(0, dtype=np.intp), np.zeros(0)
        else:
            ids = np.fromiter(sorted(counts), dtype=np.intp)
            weights = np.array([counts[i] / m for i in ids])
        self._pool_cache[text] = (ids, weights)
        return ids, weights

    def encode(self, text: str) -> np.ndarray:
        ids, w = self.pooling(text)
        return _pool(self.table, ids, w)[0]

    def encode_many(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for i, t in enumerate(texts):
            out[i] = self.encode(t)
        return out

    def save(self, path) -> None:
        terms = np.array(sorted(self.vocab, key=self.vocab.get), dtype=str)
        buf = io.BytesIO()
        np.savez(buf, vocab=terms, table=self.table)
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path) -> "ToyEncoder":
        with np.load(path) as data:
            return cls({str(t): i for i, t in enumerate(data["vocab"])}, data["table"])


def _pool(table, ids, weights):
    """Return (unit vector, pre-normalisation norm)."""
    if not len(ids):
        return np.zeros(table.shape[1]), 0.0
    u = weights @ table[ids]
    norm = float(np.sqrt(u @ u))
    if norm == 0.0:
        return np.zeros(table.shape[1]), 0.0
    return u / norm, norm


def build_vocab(instances: Sequence[TrainingInstance]) -> dict[str, int]:
    terms = set()
    for inst in instances:
        terms.update(tokenize(inst.query))
        terms.update(tokenize(inst.positive_text))
        for n in inst.negatives:
            terms.update(tokenize(n.text))
    return {t: i for i, t in enumerate(sorted(terms))}


def infonce_loss(query_vec, positive_vec, negative_vecs=(), temperature: float = 0.05) -> float:
    """``-log softmax`` of the positive among {positive} + negatives, dot similarity."""
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    q = np.asarray(query_vec, dtype=np.float64)
    cands = [np.asarray(positive_vec, dtype=np.float64)] + [np.asarray(n, dtype=np.float64) for n in negative_vecs]
    logits = np.array([q @ c for c in cands]) / temperature
    top = logits.max()
    return float(top + np.log(np.exp(logits - top).sum()) - logits[0])


@dataclass(frozen=True)
class TrainConfig:
    temperature: float = 0.05
    batch_size: int = 16
    learning_rate: float = 1e-3
    epochs: int = 20
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hard_negatives: int = 4
    dim: int = 64

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.hard_negatives < 0 or self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("hard_negatives, epochs and learning_rate must be non-negative")


def batch_loss_and_grad(table: np.ndarray, encoder: ToyEncoder, batch: Sequence[TrainingInstance],
                        config: TrainConfig, with_grad: bool = True) -> tuple[float, np.ndarray | None]:
    """Mean InfoNCE loss over the batch and its gradient w.r.t. ``table``.

    ``encoder`` supplies the vocabulary only; ``table`` holds the parameters,
    so finite-difference checks can pass perturbed copies.
    """
    tau = config.temperature
    # unique texts: ("q", i) per instance, ("d", doc_id) per document
    texts: dict[tuple, str] = {}
    for i, inst in enumerate(batch):
        texts[("q", i)] = inst.query
        texts.setdefault(("d", inst.positive_id), inst.positive_text)
        for n in inst.negatives[: config.hard_negatives]:
            texts.setdefault(("d", n.doc_id), n.text)
    enc = {}
    for key, text in texts.items():
        ids, w = encoder.pooling(text)
        v, norm = _pool(table, ids, w)
        enc[key] = (v, norm, ids, w)

    batch_docs = list(dict.fromkeys(inst.positive_id for inst in batch))
    active = []
    for i, inst in enumerate(batch):
        if enc[("q", i)][1] == 0.0:
            logger.warning("skipping instance %s: query has no in-vocabulary tokens", inst.query_id)
        else:
            active.append(i)
    grad = np.zeros_like(table) if with_grad else None
    if not active:
        return 0.0, grad

    vec_grads: dict[tuple, np.ndarray] = {}
    total = 0.0
    for i in active:
        inst = batch[i]
        cands = [inst.positive_id]
        cands += [d for d in batch_docs if d != inst.positive_id]
        for n in inst.negatives[: config.hard_negatives]:
            if n.doc_id not in cands:
                cands.append(n.doc_id)
        q = enc[("q", i)][0]
        C = np.vstack([enc[("d", d)][0] for d in cands])
        logits = C @ q / tau
        top = logits.max()
        e = np.exp(logits - top)
        z = e.sum()
        total += float(top + np.log(z) - logits[0])
        if not with_grad:
            continue
        coef = e / z
        coef[0] -= 1.0
        coef /= tau
        _acc(vec_grads, ("q", i), coef @ C)
        for d, c in zip(cands, coef):
            _acc(vec_grads, ("d", d), c * q)

    n_active = len(active)
    if with_grad:
        for key, g in vec_grads.items():
            v, norm, ids, w = enc[key]
            if norm == 0.0:
                continue
            gu = (g - v * (v @ g)) / (norm * n_active)
            np.add.at(grad, ids, np.outer(w, gu))
    return total / n_active, grad


def _acc(store, key, value):
    if key in store:
        store[key] = store[key] + value
    else:
        store[key] = value.copy()


class _Optimizer:
    def __init__(self, config: TrainConfig, shape):
        self.config = config
        self.step_count = 0
        if config.optimizer == "adam":
            self.m = np.zeros(shape)
            self.v = np.zeros(shape)

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        c = self.config
        self.step_count += 1
        if c.optimizer == "sgd":
            params -= c.learning_rate * grad
            return
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad * grad
        m_hat = self.m / (1 - c.beta1 ** self.step_count)
        v_hat = self.v / (1 - c.beta2 ** self.step_count)
        params -= c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


@dataclass
class EvalSet:
    queries: Sequence[Query]
    corpus: Sequence[Document]
    qrels: QrelsSet
    k: int = 10


def retrieval_mrr(encoder: ToyEncoder, evalset: EvalSet) -> float:
    docs = VectorStore([d.doc_id for d in evalset.corpus],
                       encoder.encode_many([d.full_text for d in evalset.corpus]))
    qvecs = encoder.encode_many([q.text for q in evalset.queries])
    results = dense_search_many(docs, qvecs, evalset.k, "cosine")
    run = RankedRun("toy", {q.query_id: r for q, r in zip(evalset.queries, results)})
    report = evaluate_run(run, evalset.qrels, MetricSpec(k=evalset.k))
    return next(iter(report.per_dataset.values()))["mrr"]


@dataclass
class TrainHistory:
    records: list[dict] = field(default_factory=list)

    def losses(self) -> list[float]:
        return [r["loss"] for r in self.records if r["epoch"] > 0]

    def mrrs(self) -> list[float]:
        return [r["mrr"] for r in self.records if r.get("mrr") is not None]

    def to_tsv(self) -> str:
        lines = ["epoch\tloss\tmrr@10"]
        for r in self.records:
            loss = "" if r["loss"] is None else f"{r['loss']:.6f}"
            mrr = "" if r.get("mrr") is None else f"{r['mrr']:.6f}"
            lines.append(f"{r['epoch']}\t{loss}\t{mrr}")
        return "\n".join(lines) + "\n"


def train(instances: Sequence[TrainingInstance], config: TrainConfig = TrainConfig(),
          evalset: EvalSet | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> tuple[ToyEncoder, TrainHistory]:
    """Train a fresh encoder; epoch 0 in the history is the initial model."""
    if not instances:
        raise DataError("no training instances")
    instances = list(instances)
    encoder = ToyEncoder.initialize(build_vocab(instances), config.dim, config.seed)
    rng = np.random.default_rng(config.seed + 1)
    opt = _Optimizer(config, encoder.table.shape)
    history = TrainHistory()
    start = {"epoch": 0, "loss": None, "mrr": retrieval_mrr(encoder, evalset) if evalset else None}
    history.records.append(start)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(instances))
        losses = []
        for s in range(0, len(order), config.batch_size):
            batch = [instances[j] for j in order[s: s + config.batch_size]]
            loss, grad = batch_loss_and_grad(encoder.table, encoder, batch, config)
            losses.append(loss)
            opt.step(encoder.table, grad)
        rec = {"epoch": epoch, "loss": float(np.mean(losses)),
               "mrr": retrieval_mrr(encoder, evalset) if evalset else None}
        history.records.append(rec)
        logger.info("epoch %d loss %.4f mrr %s", epoch, rec["loss"], rec["mrr"])
        if on_epoch:
            on_epoch(rec)
    return encoder, history
