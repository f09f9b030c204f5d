"""Data construction, retrieval and evaluation tools for domain-adapted dense retrieval."""

__version__ = "0.1.0"

from .bm25 import BM25Params, InvertedIndex, bm25_score, bm25_search, build_index, tokenize
from .corpus import (Document, QrelsSet, Query, RankedRun, load_corpus, load_qrels, load_queries,
                     read_run, write_run)
from .dense import VectorStore, dense_search, load_vectors
from .errors import DataError, FormatError
from .filtering import PriorityWeights, priority_score, recoverability_filter, select_top
from .metrics import (MetricReport, MetricSpec, aggregate_datasets, evaluate_run, map_at_k,
                      mrr_at_k, ndcg_at_k)
from .mining import (Cutoff, MiningConfig, TrainingInstance, apply_cutoff, filter_short_queries,
                     mine_negatives)
from .mixture import MixtureManifest, build_mixture
from .trainer import ToyEncoder, TrainConfig, infonce_loss, train

__all__ = [
    "BM25Params", "InvertedIndex", "bm25_score", "bm25_search", "build_index", "tokenize",
    "Document", "QrelsSet", "Query", "RankedRun", "load_corpus", "load_qrels", "load_queries",
    "read_run", "write_run", "VectorStore", "dense_search", "load_vectors", "DataError",
    "FormatError", "PriorityWeights", "priority_score", "recoverability_filter", "select_top",
    "MetricReport", "MetricSpec", "aggregate_datasets", "evaluate_run", "map_at_k", "mrr_at_k",
    "ndcg_at_k", "Cutoff", "MiningConfig", "TrainingInstance", "apply_cutoff",
    "filter_short_queries", "mine_negatives", "MixtureManifest", "build_mixture", "ToyEncoder",
    "TrainConfig", "infonce_loss", "train",
]
