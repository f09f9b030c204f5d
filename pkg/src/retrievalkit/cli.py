"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bm25 import BM25Params, InvertedIndex, bm25_run, build_index
from .corpus import (corpus_index, load_corpus, load_qrels, load_queries, read_run,
                     write_run)
from .dense import dense_run, load_vectors
from .errors import DataError
from .filtering import PriorityWeights, filter_and_select
from .leaderboard import (SuiteManifest, build_leaderboard, emit_leaderboard, load_cells,
                          save_cells)
from .metrics import METRICS, MetricSpec, evaluate_run
from .mining import (Cutoff, MiningConfig, filter_short_queries, load_instances, mine_run,
                     save_instances)
from .mixture import build_mixture, parse_source
from .trainer import EvalSet, TrainConfig, train

logger = logging.getLogger("retrievalkit")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def _report_path(output) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".report.json") if not output.is_dir() else output / "report.json"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_index_build(args):
    params = BM25Params(args.k1, args.b)
    corpus = load_corpus(args.corpus, args.format)
    index = build_index(corpus, params, stopwords=args.stopwords)
    path = index.save(args.out)
    report = {"corpus": str(args.corpus), "index": str(path), "documents": index.doc_count,
              "terms": len(index.postings), "avgdl": index.avgdl,
              "params": {"k1": params.k1, "b": params.b}, "stopwords": args.stopwords}
    _write_json(Path(args.out) / "report.json", report)
    logger.info("indexed %d documents, %d terms", index.doc_count, len(index.postings))


def cmd_search_bm25(args):
    index = InvertedIndex.load(args.index)
    params = BM25Params(args.k1 if args.k1 is not None else index.params.k1,
                        args.b if args.b is not None else index.params.b)
    queries = load_queries(args.queries)
    run = bm25_run(index, params, queries, args.k, args.tag, threads=args.threads)
    write_run(run, args.run)
    _write_json(_report_path(args.run), {"run": str(args.run), "tag": args.tag, "queries": len(queries),
                                         "k": args.k, "params": {"k1": params.k1, "b": params.b}})


def cmd_search_dense(args):
    docs = load_vectors(args.vectors)
    queries = load_vectors(args.query_vectors, expect_dim=docs.dim)
    run = dense_run(docs, queries, args.k, args.sim, args.tag)
    write_run(run, args.run)
    _write_json(_report_path(args.run), {"run": str(args.run), "tag": args.tag, "queries": len(queries),
                                         "documents": len(docs), "dim": docs.dim, "k": args.k,
                                         "similarity": args.sim})


def cmd_mine(args):
    config = MiningConfig(Cutoff.parse(args.cutoff), args.max_neg, args.min_neg, args.depth,
                          args.min_query_tokens)
    corpus = corpus_index(load_corpus(args.corpus))
    instances, report = mine_run(read_run(args.run), load_qrels(args.qrels), corpus,
                                 load_queries(args.queries), config, args.source)
    if args.filter_queries:
        instances, dropped = filter_short_queries(instances, config)
        counts: dict[str, int] = {}
        for _, reason in dropped:
            counts[reason] = counts.get(reason, 0) + 1
        report["query_filter"] = counts
        report["instances"] = len(instances)
    save_instances(instances, args.out)
    _write_json(args.report or _report_path(args.out), report)
    logger.info("mined %d instances", len(instances))


def cmd_filter(args):
    weights = PriorityWeights.parse(args.weights, top_rank=args.top_rank, pool_cap=args.pool_cap)
    instances = load_instances(args.instances)
    selected, manifest = filter_and_select(instances, read_run(args.run), args.select, weights)
    save_instances(selected, args.out)
    _write_json(args.manifest or _report_path(args.out), manifest)
    logger.info("kept %d of %d instances", len(selected), len(instances))


def cmd_mix(args):
    sources = [parse_source(s) for s in args.source]
    seed = args.seed if args.seed is not None else args.global_seed
    manifest = build_mixture(sources, seed, args.out)
    manifest.save(args.manifest or _report_path(args.out))
    logger.info("mixture of %d instances (%d duplicates removed)", manifest.total, manifest.dedup_removed)


def cmd_toy_train(args):
    seed = args.seed if args.seed is not None else args.global_seed
    config = TrainConfig(temperature=args.temp, batch_size=args.batch, learning_rate=args.lr,
                         epochs=args.epochs, seed=seed, optimizer=args.optimizer,
                         hard_negatives=args.hard_negatives, dim=args.dim)
    eval_flags = (args.eval_qrels, args.eval_corpus, args.eval_queries)
    if any(eval_flags) and not all(eval_flags):
        raise UsageError("--eval-qrels, --eval-corpus and --eval-queries go together")
    instances = load_instances(args.data)
    evalset = None
    if all(eval_flags):
        evalset = EvalSet(load_queries(args.eval_queries), load_corpus(args.eval_corpus),
                          load_qrels(args.eval_qrels))
    encoder, history = train(instances, config, evalset)
    encoder.save(args.out)
    if args.history:
        Path(args.history).write_text(history.to_tsv(), encoding="utf-8")
    _write_json(_report_path(args.out), {"instances": len(instances), "vocab": len(encoder.vocab),
                                         "config": config.__dict__, "history": history.records})


def _parse_metrics(text: str) -> list[tuple[str, int]]:
    out = []
    for item in text.split(","):
        name, _, k = item.strip().partition("@")
        if name not in METRICS:
            raise UsageError(f"unknown metric {name!r} (choose from {', '.join(METRICS)})")
        try:
            out.append((name, int(k) if k else 10))
        except ValueError:
            raise UsageError(f"bad cutoff in {item!r}") from None
    return out


def cmd_eval(args):
    wanted = _parse_metrics(args.metrics)
    run, qrels = read_run(args.run), load_qrels(args.qrels)
    results, per_query = {}, {}
    for name, k in wanted:
        spec = MetricSpec(k, args.gain, args.rel_threshold, args.map_denominator)
        report = evaluate_run(run, qrels, spec, "run")
        label = f"{name}@{k}"
        results[label] = report.per_dataset["run"][name]
        for qid, vals in report.per_query["run"].items():
            per_query.setdefault(qid, {})[label] = vals[name]
    if args.per_query:
        for qid, vals in per_query.items():
            for label, v in vals.items():
                print(f"{label}\t{qid}\t{v:.4f}")
    for label, v in results.items():
        print(f"{label}\tall\t{v:.4f}")
    if args.report:
        _write_json(args.report, {"run": str(args.run), "qrels": str(args.qrels), "gain": args.gain,
                                  "queries": len(qrels), "metrics": results,
                                  "per_query": per_query if args.per_query else None})


def _emit(board, out_dir: Path | None, stem: str):
    tsv, md = board.to_tsv(), board.to_markdown()
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{stem}.tsv").write_text(tsv, encoding="utf-8")
        (out_dir / f"{stem}.md").write_text(md, encoding="utf-8")
        _write_json(out_dir / f"{stem}.json", board.to_json())
    sys.stdout.write(md)


def cmd_eval_suite(args):
    manifest = SuiteManifest.load(args.manifest)
    spec = MetricSpec(args.k, args.gain, args.rel_threshold, args.map_denominator)
    missing = manifest.missing_runs()
    board, cells = emit_leaderboard(manifest, spec, args.threads)
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_cells(out_dir / "cells.json", cells, manifest.models, manifest.dataset_names,
                   manifest.subsets, spec.k)
    _emit(board, out_dir, "leaderboard")
    if missing and not args.allow_missing:
        for model, ds in missing:
            logger.error("missing run: model %s on dataset %s", model, ds)
        return EXIT_DATA
    return EXIT_OK


def cmd_leaderboard(args):
    cells, models, datasets, subsets, k = load_cells(args.cells)
    board = build_leaderboard(cells, models, datasets, subsets, k)
    _emit(board, Path(args.out_dir) if args.out_dir else None, "leaderboard")
    missing = [(m, d) for m in models for d in datasets if cells.get(m, {}).get(d) is None]
    if missing and not args.allow_missing:
        for model, ds in missing:
            logger.error("missing cell: model %s on dataset %s", model, ds)
        return EXIT_DATA
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_metric_flags(p, with_k=False):
    if with_k:
        p.add_argument("--k", type=int, default=10)
    p.add_argument("--gain", choices=["linear", "exp"], default="linear")
    p.add_argument("--rel-threshold", type=int, default=1)
    p.add_argument("--map-denominator", choices=["full", "min"], default="full",
                   help="AP denominator: all judged relevant docs, or min(R, k)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="retrievalkit", description="Retrieval data construction and evaluation toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--seed", dest="global_seed", type=int, default=0,
                        help="default seed for commands that shuffle or initialise")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("index", help="inverted index management")
    isub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    b = isub.add_parser("build", help="build a BM25 index from a corpus")
    b.add_argument("--corpus", required=True)
    b.add_argument("--format", choices=["jsonl", "tsv"])
    b.add_argument("--out", required=True)
    b.add_argument("--k1", type=float, default=0.9)
    b.add_argument("--b", type=float, default=0.4)
    b.add_argument("--stopwords", action="store_true", help="drop Portuguese function words")
    b.set_defaults(func=cmd_index_build)

    p = sub.add_parser("search", help="first-stage retrieval")
    ssub = p.add_subparsers(dest="engine", required=True, parser_class=_Parser)
    s = ssub.add_parser("bm25")
    s.add_argument("--index", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--k", type=int, default=1000)
    s.add_argument("--tag", default="bm25")
    s.add_argument("--run", required=True)
    s.add_argument("--k1", type=float)
    s.add_argument("--b", type=float)
    s.set_defaults(func=cmd_search_bm25)
    s = ssub.add_parser("dense")
    s.add_argument("--vectors", required=True)
    s.add_argument("--query-vectors", required=True)
    s.add_argument("--k", type=int, default=1000)
    s.add_argument("--sim", choices=["cosine", "dot"], default="cosine")
    s.add_argument("--tag", default="dense")
    s.add_argument("--run", required=True)
    s.set_defaults(func=cmd_search_dense)

    p = sub.add_parser("mine", help="mine hard negatives from a first-stage run")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--cutoff", default="mean", help="mean | mean_plus_std:ALPHA | top_fraction:TAU")
    p.add_argument("--max-neg", type=int, default=20)
    p.add_argument("--min-neg", type=int, default=1)
    p.add_argument("--depth", type=int, default=100)
    p.add_argument("--source", default="other")
    p.add_argument("--filter-queries", action="store_true",
                   help="drop short and ambiguous queries (question-style sources)")
    p.add_argument("--min-query-tokens", type=int, default=4)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("filter", help="recoverability filter and priority selection")
    p.add_argument("--instances", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--top-rank", type=int, default=100)
    p.add_argument("--select", type=int)
    p.add_argument("--weights", default="0.4,0.4,0.2", help="rank,margin,pool")
    p.add_argument("--pool-cap", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("mix", help="build a deduplicated, shuffled training mixture")
    p.add_argument("--source", action="append", required=True, metavar="TAG:PATH")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("toy-train", help="train the small InfoNCE encoder")
    p.add_argument("--data", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--temp", type=float, default=0.05)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--hard-negatives", type=int, default=4)
    p.add_argument("--seed", type=int)
    p.add_argument("--eval-qrels")
    p.add_argument("--eval-corpus")
    p.add_argument("--eval-queries")
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.set_defaults(func=cmd_toy_train)

    p = sub.add_parser("eval", help="evaluate one run")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--metrics", default="ndcg@10,mrr@10,map@10")
    p.add_argument("--per-query", action="store_true")
    p.add_argument("--report")
    _add_metric_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("eval-suite", help="evaluate every model on every dataset of a suite")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--allow-missing", action="store_true")
    _add_metric_flags(p, with_k=True)
    p.set_defaults(func=cmd_eval_suite)

    p = sub.add_parser("leaderboard", help="format precomputed per-dataset cells")
    p.add_argument("--cells", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--allow-missing", action="store_true")
    p.set_defaults(func=cmd_leaderboard)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "gain", None) == "exp":
        args.gain = "exponential"
    try:
        code = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"retrievalkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"retrievalkit: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"retrievalkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return code or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
