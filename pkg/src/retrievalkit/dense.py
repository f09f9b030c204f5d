"""Embedding storage and exact top-k similarity search.

Two vector file layouts are supported:

* JSON-lines, one ``{"id": ..., "vector": [...]}`` object per line.
* Raw binary: row-major little-endian float32 values, no header, with a
  sidecar ``<path>.ids`` text file holding one id per line in row order.
  The dimension is ``n_values / n_ids``.

Vectors are stored as float32; similarities accumulate in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import RankedRun, iter_jsonl, write_jsonl
from .errors import DataError, FormatError

NORM_TOL = 1e-6


@dataclass
class VectorStore:
    ids: list[str]
    vectors: np.ndarray  # (N, d) float32
    normalized: bool = False

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise DataError("vectors must be a 2-d array with one row per id")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("vector ids must be unique")
        if not np.isfinite(self.vectors).all():
            raise DataError("vectors contain non-finite values")
        if self.normalized and len(self.ids):
            # all-zero rows cannot be normalised and are left as they are
            norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
            if (np.abs(norms[norms > 0] - 1.0) > NORM_TOL).any():
                raise DataError("store flagged normalized but rows are not unit length")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.ids)

    def get(self, id_: str) -> np.ndarray:
        return self.vectors[self.ids.index(id_)]

    def normalize(self) -> "VectorStore":
        return VectorStore(list(self.ids), _unit_rows(self.vectors), normalized=True)


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    mat64 = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat64, axis=1, keepdims=True)
    out = np.divide(mat64, norms, out=np.zeros_like(mat64), where=norms > 0)
    return out.astype(np.float32)


def load_vectors(path, expect_dim: int | None = None, normalize: bool = False) -> VectorStore:
    path = Path(path)
    ids_path = path.with_name(path.name + ".ids")
    if ids_path.exists():
        store = _load_binary(path, ids_path, expect_dim)
    else:
        store = _load_jsonl(path, expect_dim)
    return store.normalize() if normalize else store


def _load_jsonl(path, expect_dim):
    ids, rows = [], []
    dim = expect_dim
    for lineno, obj in iter_jsonl(path):
        id_ = obj.get("id")
        vec = obj.get("vector")
        if id_ is None or not isinstance(vec, list):
            raise FormatError(path, lineno, "vector record needs 'id' and 'vector'")
        id_ = str(id_)
        try:
            row = [float(x) for x in vec]
        except (TypeError, ValueError):
            raise FormatError(path, lineno, f"non-numeric component in vector {id_!r}") from None
        if dim is None:
            dim = len(row)
        if len(row) != dim:
            raise FormatError(path, lineno, f"vector {id_!r} has dimension {len(row)}, expected {dim}")
        if not all(math.isfinite(x) for x in row):
            raise FormatError(path, lineno, f"vector {id_!r} has a non-finite component")
        ids.append(id_)
        rows.append(row)
    mat = np.asarray(rows, dtype=np.float32).reshape(len(rows), dim or 0)
    if not np.isfinite(mat).all():
        raise DataError(f"{path}: component overflows float32")
    return VectorStore(ids, mat)


def _load_binary(path, ids_path, expect_dim):
    with open(ids_path, encoding="utf-8") as fh:
        ids = [line.rstrip("\r\n") for line in fh if line.strip()]
    flat = np.fromfile(path, dtype="<f4")
    if not ids:
        if flat.size:
            raise DataError(f"{path}: vectors present but id file is empty")
        return VectorStore([], np.zeros((0, expect_dim or 0), dtype=np.float32))
    if flat.size % len(ids):
        raise DataError(f"{path}: {flat.size} values do not divide into {len(ids)} rows")
    dim = flat.size // len(ids)
    if expect_dim is not None and dim != expect_dim:
        raise DataError(f"{path}: dimension {dim}, expected {expect_dim}")
    mat = flat.reshape(len(ids), dim).astype(np.float32)
    bad = ~np.isfinite(mat).all(axis=1)
    if bad.any():
        raise DataError(f"{path}: vector {ids[int(np.argmax(bad))]!r} has a non-finite component")
    return VectorStore(ids, mat)


def save_vectors(store: VectorStore, path, binary: bool = False) -> None:
    path = Path(path)
    if binary:
        store.vectors.astype("<f4").tofile(path)
        with open(path.with_name(path.name + ".ids"), "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{i}\n" for i in store.ids)
    else:
        write_jsonl(({"id": i, "vector": [float(x) for x in row]}
                     for i, row in zip(store.ids, store.vectors)), path)


def similarities(store: VectorStore, query_vectors, similarity: str = "cosine") -> np.ndarray:
    """Similarity of each query row against every stored vector, in float64.

    A 1-d query gives a 1-d result.  Cosine against a zero vector is 0.
    """
    q = np.asarray(query_vectors, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    if q.shape[1] != store.dim:
        raise DataError(f"query dimension {q.shape[1]} does not match store dimension {store.dim}")
    mat = store.vectors.astype(np.float64)
    scores = q @ mat.T
    if similarity == "cosine":
        denom = np.outer(np.linalg.norm(q, axis=1), np.linalg.norm(mat, axis=1))
        scores = np.divide(scores, denom, out=np.zeros_like(scores), where=denom > 0)
    elif similarity != "dot":
        raise ValueError(f"unknown similarity {similarity!r}")
    return scores[0] if single else scores


def _id_keys(store: VectorStore) -> np.ndarray:
    """Integer sort key per row giving doc_id ascending order."""
    keys = np.empty(len(store.ids), dtype=np.int64)
    keys[sorted(range(len(store.ids)), key=store.ids.__getitem__)] = np.arange(len(store.ids))
    return keys


def _top_k(scores, keys, ids, k):
    order = np.lexsort((keys, -scores))[:k]
    return [(ids[i], float(scores[i])) for i in order]


def dense_search(store: VectorStore, query_vector, k: int,
                 similarity: str = "cosine") -> list[tuple[str, float]]:
    """Exact top-k, ordered by score desc then doc_id asc."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = similarities(store, np.asarray(query_vector).ravel(), similarity)
    if not len(scores):
        return []
    return _top_k(scores, _id_keys(store), store.ids, k)


def dense_search_many(store: VectorStore, query_vectors, k: int,
                      similarity: str = "cosine") -> list[list[tuple[str, float]]]:
    """``dense_search`` for each row of a query matrix."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.atleast_2d(np.asarray(query_vectors))
    if not len(store):
        return [[] for _ in range(len(q))]
    scores = similarities(store, q, similarity)
    keys = _id_keys(store)
    return [_top_k(row, keys, store.ids, k) for row in scores]


def dense_run(docs: VectorStore, queries: VectorStore, k: int, similarity: str = "cosine",
              tag: str = "dense") -> RankedRun:
    if queries.dim != docs.dim:
        raise DataError(f"query dimension {queries.dim} does not match document dimension {docs.dim}")
    results = dense_search_many(docs, queries.vectors, k, similarity)
    return RankedRun(tag, dict(zip(queries.ids, results)))

