"""Cross-dataset evaluation suites and leaderboard tables.

A suite manifest is one JSON document::

    {
      "models": ["base", "legal", "mixed"],
      "datasets": [
        {"name": "JurisTCU", "qrels": "juristcu/qrels.txt",
         "runs": {"base": "runs/base.trec", "legal": "runs/legal.trec", ...}},
        ...
      ],
      "subsets": {"legal4": ["JUA-Juris", "JurisTCU", "NormasTCU", "BR-TaxQA"]}
    }

Relative paths resolve against the manifest's directory.  A cells file holds
already-computed per-dataset values and has the same ``models``/``subsets``
keys plus ``"datasets": [names]`` and
``"cells": {model: {dataset: {"ndcg": x, "mrr": y, "map": z}}}``.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import load_qrels, read_run
from .errors import DataError
from .metrics import METRICS, MetricSpec, aggregate_datasets, evaluate_run

logger = logging.getLogger(__name__)

MISSING = "missing"


@dataclass
class DatasetEntry:
    name: str
    qrels: Path
    runs: dict[str, Path] = field(default_factory=dict)


@dataclass
class SuiteManifest:
    datasets: list[DatasetEntry]
    models: list[str]
    subsets: dict[str, list[str]] = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "SuiteManifest":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: invalid JSON ({exc.msg})") from None
        base = path.parent
        try:
            datasets = [DatasetEntry(d["name"], base / d["qrels"],
                                     {m: base / p for m, p in d.get("runs", {}).items()})
                        for d in raw["datasets"]]
            models = list(raw.get("models") or dict.fromkeys(m for d in datasets for m in d.runs))
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: malformed suite manifest ({exc})") from None
        manifest = cls(datasets, models, {k: list(v) for k, v in raw.get("subsets", {}).items()})
        manifest.validate()
        return manifest

    @property
    def dataset_names(self) -> list[str]:
        return [d.name for d in self.datasets]

    def validate(self) -> None:
        names = self.dataset_names
        if len(set(names)) != len(names):
            raise DataError("duplicate dataset names in suite manifest")
        if not self.models:
            raise DataError("suite manifest lists no models")
        for sub, members in self.subsets.items():
            unknown = [m for m in members if m not in names]
            if unknown:
                raise DataError(f"subset {sub!r} names unknown dataset(s): {', '.join(unknown)}")
        for d in self.datasets:
            if not d.qrels.exists():
                raise DataError(f"qrels for dataset {d.name!r} not found: {d.qrels}")

    def missing_runs(self) -> list[tuple[str, str]]:
        return [(m, d.name) for d in self.datasets for m in self.models
                if m not in d.runs or not d.runs[m].exists()]


Cells = dict[str, dict[str, dict[str, float] | None]]


def evaluate_suite(manifest: SuiteManifest, spec: MetricSpec = MetricSpec(), threads: int = 1) -> Cells:
    """Per-dataset means for every (model, dataset); None marks a missing run."""

    def one(entry: DatasetEntry):
        qrels = load_qrels(entry.qrels)
        out = {}
        for model in manifest.models:
            path = entry.runs.get(model)
            if path is None or not path.exists():
                logger.warning("no run for model %s on %s", model, entry.name)
                out[model] = None
                continue
            report = evaluate_run(read_run(path), qrels, spec, entry.name)
            out[model] = report.per_dataset[entry.name]
        return entry.name, out

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, manifest.datasets))
    else:
        results = [one(e) for e in manifest.datasets]
    cells: Cells = {m: {} for m in manifest.models}
    for name, per_model in results:
        for model, values in per_model.items():
            cells[model][name] = values
    return cells


@dataclass
class Cell:
    value: float
    flagged: bool = False  # missing run, or an average that includes one
    missing: bool = False

    def display(self) -> str:
        if self.missing:
            return MISSING
        return f"{self.value:.3f}" + ("*" if self.flagged else "")


@dataclass
class Leaderboard:
    k: int
    columns: list[str]
    rows: list[tuple[str, list[Cell]]]

    def to_tsv(self) -> str:
        lines = ["\t".join(["model", *self.columns])]
        for model, cells in self.rows:
            lines.append("\t".join([model, *(c.display() for c in cells)]))
        return "\n".join(lines) + "\n"

    def best(self) -> list[set[int]]:
        """Row indices holding the best displayed value in each column (all ties)."""
        out = []
        for j in range(len(self.columns)):
            shown = {i: cells[j].display() for i, (_, cells) in enumerate(self.rows)
                     if not cells[j].flagged and not cells[j].missing}
            top = max(shown.values(), key=float, default=None)
            out.append({i for i, s in shown.items() if top is not None and float(s) == float(top)})
        return out

    def to_markdown(self) -> str:
        best = self.best()
        header = ["model", *self.columns]
        body = []
        for i, (model, cells) in enumerate(self.rows):
            row = [model]
            for j, c in enumerate(cells):
                text = c.display()
                row.append(f"**{text}**" if i in best[j] else text)
            body.append(row)
        widths = [max(len(r[j]) for r in [header, *body]) for j in range(len(header))]

        def fmt(r):
            return "| " + " | ".join(v.ljust(w) if j == 0 else v.rjust(w)
                                     for j, (v, w) in enumerate(zip(r, widths))) + " |"

        sep = "|" + "|".join(("-" * (w + 2)) if j == 0 else ("-" * (w + 1) + ":")
                             for j, w in enumerate(widths)) + "|"
        return "\n".join([fmt(header), sep, *(fmt(r) for r in body)]) + "\n"

    def to_json(self) -> dict:
        return {"k": self.k, "columns": self.columns,
                "rows": [{"model": m, "values": [None if c.missing else c.value for c in cells],
                          "flagged": [c.flagged for c in cells]} for m, cells in self.rows]}

    def value(self, model: str, column: str) -> float:
        j = self.columns.index(column)
        for m, cells in self.rows:
            if m == model:
                return cells[j].value
        raise KeyError(model)


def build_leaderboard(cells: Mapping[str, Mapping[str, Mapping[str, float] | None]],
                      models: Sequence[str], datasets: Sequence[str],
                      subsets: Mapping[str, Sequence[str]] | None = None, k: int = 10,
                      metrics: Sequence[str] = METRICS) -> Leaderboard:
    """One row per model: per-dataset cells, then one average per subset, per metric."""
    subsets = dict(subsets) if subsets else {"all": list(datasets)}
    columns = []
    for metric in metrics:
        columns += [f"{metric}@{k}:{d}" for d in datasets]
        columns += [f"{metric}@{k}:avg[{s}]" for s in subsets]
    rows = []
    for model in models:
        per_ds = cells.get(model, {})
        row: list[Cell] = []
        for metric in metrics:
            values, missing = {}, set()
            for d in datasets:
                entry = per_ds.get(d)
                if entry is None:
                    missing.add(d)
                    values[d] = 0.0
                    row.append(Cell(0.0, flagged=True, missing=True))
                else:
                    values[d] = entry[metric]
                    row.append(Cell(entry[metric]))
            for members in subsets.values():
                avg = aggregate_datasets(values, members)
                row.append(Cell(avg, flagged=bool(missing & set(members))))
        rows.append((model, row))
    return Leaderboard(k, columns, rows)


def emit_leaderboard(manifest: SuiteManifest, spec: MetricSpec = MetricSpec(),
                     threads: int = 1) -> tuple[Leaderboard, Cells]:
    cells = evaluate_suite(manifest, spec, threads)
    board = build_leaderboard(cells, manifest.models, manifest.dataset_names, manifest.subsets, spec.k)
    return board, cells


def save_cells(path, cells: Cells, models, datasets, subsets, k: int) -> None:
    doc = {"k": k, "models": list(models), "datasets": list(datasets),
           "subsets": dict(subsets), "cells": cells}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def load_cells(path) -> tuple[Cells, list[str], list[str], dict[str, list[str]], int]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        cells = doc["cells"]
        models = list(doc.get("models") or cells)
        datasets = list(doc.get("datasets") or dict.fromkeys(d for m in cells.values() for d in m))
        subsets = {k: list(v) for k, v in doc.get("subsets", {}).items()}
        k = int(doc.get("k", 10))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed cells file ({exc})") from None
    for sub, members in subsets.items():
        unknown = [m for m in members if m not in datasets]
        if unknown:
            raise DataError(f"subset {sub!r} names unknown dataset(s): {', '.join(unknown)}")
    return cells, models, datasets, subsets, k
