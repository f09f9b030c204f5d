from collections import Counter

import pytest

from retrievalkit.errors import DataError
from retrievalkit.mining import TrainingInstance, save_instances
from retrievalkit.mixture import build_mixture, mix_instances, parse_source, seeded_permutation


def make(tag, n, offset=0):
    return [TrainingInstance(f"{tag}-{i}", f"query {tag} {i + offset}", f"{tag}-doc{i}", "t", source=tag)
            for i in range(n)]


def test_disjoint_sources_counted():
    sources = [("a", make("a", 5)), ("b", make("b", 3))]
    mixed, manifest = mix_instances(sources, seed=1)
    assert manifest.total == 8 and manifest.dedup_removed == 0
    assert [(s.tag, s.input_count, s.kept_count) for s in manifest.sources] == [("a", 5, 5), ("b", 3, 3)]


def test_cross_source_duplicate_keeps_first():
    a = make("a", 2)
    dup = TrainingInstance("other", "  QUERY a 0 ", a[0].positive_id, "t", source="b")
    mixed, manifest = mix_instances([("a", a), ("b", [dup] + make("b", 2))], seed=0)
    assert manifest.total == 4 and manifest.dedup_removed == 1
    survivors = [i for i in mixed if i.positive_id == a[0].positive_id]
    assert len(survivors) == 1 and survivors[0].source == "a"
    manifest.check()


def test_same_query_different_positive_is_not_duplicate():
    a = TrainingInstance("q", "same", "d1", "t")
    b = TrainingInstance("q", "same", "d2", "t")
    assert mix_instances([("x", [a, b])], 0)[1].dedup_removed == 0


def test_shuffle_is_permutation():
    items = make("a", 50)
    mixed, _ = mix_instances([("a", items)], seed=3)
    assert Counter(mixed) == Counter(items)
    assert mixed != items


def test_seeded_permutation_properties():
    p = seeded_permutation(1000, 42)
    assert sorted(p) == list(range(1000))
    assert p == seeded_permutation(1000, 42)
    assert p != seeded_permutation(1000, 43)
    assert seeded_permutation(0, 1) == [] and seeded_permutation(1, 1) == [0]


def test_seeded_permutation_pinned():
    # Snapshot: a change here means previously built mixtures no longer reproduce.
    assert seeded_permutation(10, 42) == [9, 2, 3, 5, 7, 1, 6, 4, 8, 0]


def test_empty_sources():
    with pytest.raises(DataError):
        mix_instances([], 0)


def test_build_mixture_files(tmp_path):
    paths = []
    for tag, n in (("jua-juris", 4), ("squad-pt", 3)):
        p = tmp_path / f"{tag}.jsonl"
        save_instances([TrainingInstance(f"{tag}{i}", f"q {tag} {i}", f"d{tag}{i}", "t") for i in range(n)], p)
        paths.append((tag, str(p)))
    outs = []
    for run in range(2):
        out = tmp_path / f"mixed{run}.jsonl"
        manifest = build_mixture(paths, 7, out)
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert manifest.total == 7 and manifest.seed == 7
    from retrievalkit.mining import load_instances

    tags = Counter(i.source for i in load_instances(tmp_path / "mixed0.jsonl"))
    assert tags == {"jua-juris": 4, "squad-pt": 3}


def test_unreadable_source_names_tag(tmp_path):
    with pytest.raises(DataError, match="ulysses"):
        build_mixture([("ulysses", str(tmp_path / "nope.jsonl"))], 0, tmp_path / "out.jsonl")


def test_parse_source():
    assert parse_source("squad-pt:data/a:b.jsonl") == ("squad-pt", "data/a:b.jsonl")
    with pytest.raises(ValueError):
        parse_source("nopath")
