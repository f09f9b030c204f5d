"""Multi-source training mixture: exact dedup plus a seeded shuffle.

The shuffle is Fisher-Yates driven by the raw 64-bit output of NumPy's PCG64
bit generator (whose stream is fixed for a given seed across NumPy releases
and platforms).  Bounded draws use rejection sampling, so they are unbiased
and independent of any higher-level NumPy sampling routine.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from typing import Sequence

import numpy as np

from .corpus import dumps_line
from .errors import DataError
from .mining import TrainingInstance, load_instances, normalize_query

logger = logging.getLogger(__name__)

PRNG_NAME = "pcg64-raw/fisher-yates"


class _RawStream:
    def __init__(self, seed: int, block: int = 4096):
        self._bitgen = np.random.PCG64(seed)
        self._block = block
        self._buf: list[int] = []

    def next64(self) -> int:
        if not self._buf:
            self._buf = self._bitgen.random_raw(self._block).tolist()[::-1]
        return self._buf.pop()

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next64()
            if x < limit:
                return x % n


def seeded_permutation(n: int, seed: int) -> list[int]:
    order = list(range(n))
    stream = _RawStream(seed)
    for i in range(n - 1, 0, -1):
        j = stream.below(i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def dedup_key(instance: TrainingInstance) -> tuple[str, str]:
    return normalize_query(instance.query), instance.positive_id


@dataclass
class SourceRecord:
    tag: str
    path: str
    input_count: int
    kept_count: int


@dataclass
class MixtureManifest:
    sources: list[SourceRecord] = field(default_factory=list)
    dedup_removed: int = 0
    total: int = 0
    seed: int = 0
    prng: str = PRNG_NAME
    created_at: str = ""

    def check(self) -> None:
        inputs = sum(s.input_count for s in self.sources)
        kept = sum(s.kept_count for s in self.sources)
        if self.total != kept or self.total != inputs - self.dedup_removed:
            raise AssertionError("mixture manifest counts are inconsistent")
        if any(s.kept_count > s.input_count for s in self.sources):
            raise AssertionError("a source kept more instances than it supplied")

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, ensure_ascii=False)
            fh.write("\n")


def mix_instances(sources: Sequence[tuple[str, Sequence[TrainingInstance]]], seed: int,
                  paths: Sequence[str] | None = None) -> tuple[list[TrainingInstance], MixtureManifest]:
    """Deduplicate (first occurrence wins, in source order) and shuffle."""
    if not sources:
        raise DataError("no sources given")
    seen: set[tuple[str, str]] = set()
    merged: list[TrainingInstance] = []
    manifest = MixtureManifest(seed=seed)
    for n, (tag, instances) in enumerate(sources):
        kept = 0
        for inst in instances:
            key = dedup_key(inst)
            if key in seen:
                continue
            seen.add(key)
            merged.append(inst)
            kept += 1
        path = paths[n] if paths else ""
        manifest.sources.append(SourceRecord(tag, path, len(instances), kept))
        if kept < len(instances):
            logger.info("source %s: removed %d duplicates", tag, len(instances) - kept)
    manifest.dedup_removed = sum(s.input_count - s.kept_count for s in manifest.sources)
    manifest.total = len(merged)
    manifest.created_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
    manifest.check()
    order = seeded_permutation(len(merged), seed)
    return [merged[i] for i in order], manifest


def build_mixture(sources: Sequence[tuple[str, str]], seed: int, out_path) -> MixtureManifest:
    """Read ``(tag, path)`` sources, mix them and write JSON-lines to ``out_path``.

    Instances without a source tag inherit the tag they were listed under.
    """
    if not sources:
        raise DataError("no sources given")
    loaded = []
    for tag, path in sources:
        try:
            instances = load_instances(path)
        except OSError as exc:
            raise DataError(f"cannot read source {tag!r} ({path}): {exc.strerror or exc}") from None
        except DataError as exc:
            raise DataError(f"source {tag!r}: {exc}") from None
        loaded.append((tag, [replace(i, source=tag) if i.source == "other" else i
                             for i in instances]))
    mixed, manifest = mix_instances(loaded, seed, [str(p) for _, p in sources])
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in mixed:
            fh.write(dumps_line(inst.to_json()))
    return manifest


def parse_source(text: str) -> tuple[str, str]:
    tag, sep, path = text.partition(":")
    if not sep or not tag or not path:
        raise ValueError(f"expected TAG:PATH, got {text!r}")
    return tag, path
