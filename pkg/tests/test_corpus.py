"""Corpus layout, description maps, spec items, and part-count buckets."""

from __future__ import annotations

import json
import random

import pytest

from partscout import corpus
from partscout.corpus import PartCountBucket, bucket_of
from conftest import build_corpus, write_png


def test_scan_empty_directory(tmp_path):
    index = corpus.scan_dataset(tmp_path)
    assert len(index) == 0
    assert index.errors == ()


def test_scan_two_assemblies_with_three_and_five_parts(tmp_path):
    # hand count: a1 gets part1..part3, a2 gets part1..part5
    build_corpus(tmp_path, {"a1": 3, "a2": 5})
    index = corpus.scan_dataset(tmp_path)
    assert [record.assembly_id for record in index] == ["a1", "a2"]
    assert [record.part_count for record in index] == [3, 5]
    assert index.get("a2").part_filenames() == [f"part{i}.png" for i in range(1, 6)]


def test_missing_assembly_image_excludes_with_error(tmp_path):
    build_corpus(tmp_path, {"ok": 2})
    broken = tmp_path / "broken"
    broken.mkdir()
    write_png(broken / "part1.png", seed="x")
    index = corpus.scan_dataset(tmp_path)
    assert [record.assembly_id for record in index] == ["ok"]
    assert len(index.errors) == 1
    assert index.errors[0].assembly_id == "broken"


def test_scan_is_idempotent(tmp_path):
    build_corpus(tmp_path, {"a1": 3, "a2": 2})
    first = corpus.scan_dataset(tmp_path)
    second = corpus.scan_dataset(tmp_path)
    assert first.assemblies == second.assemblies
    assert first.errors == second.errors


def test_scan_missing_root(tmp_path):
    with pytest.raises(FileNotFoundError):
        corpus.scan_dataset(tmp_path / "nope")


def test_load_description_map_single_entry(tmp_path):
    path = tmp_path / "descriptions.json"
    path.write_text('{"part1.png": "A cylindrical pin"}')
    assert corpus.load_description_map(path) == {"part1.png": "A cylindrical pin"}


def test_load_description_map_empty_object(tmp_path):
    path = tmp_path / "descriptions.json"
    path.write_text("{}")
    assert corpus.load_description_map(path) == {}


def test_load_description_map_non_string_value(tmp_path):
    path = tmp_path / "descriptions.json"
    path.write_text('{"a.png": 3}')
    with pytest.raises(corpus.DescriptionSchemaError):
        corpus.load_description_map(path)


def test_load_description_map_malformed_json(tmp_path):
    path = tmp_path / "descriptions.json"
    path.write_text("{not json")
    with pytest.raises(json.JSONDecodeError):
        corpus.load_description_map(path)


def test_description_map_round_trip_preserves_order(tmp_path):
    rng = random.Random(5)
    for trial in range(20):
        entries = {
            f"part{i}.png": f"desc {rng.randrange(10_000)}"
            for i in rng.sample(range(100), rng.randrange(1, 12))
        }
        path = tmp_path / f"d{trial}.json"
        corpus.save_description_map(entries, path)
        loaded = corpus.load_description_map(path)
        assert loaded == entries
        assert list(loaded) == list(entries)


def test_bucket_boundaries():
    assert bucket_of(1) is PartCountBucket.LT10
    assert bucket_of(9) is PartCountBucket.LT10
    assert bucket_of(10) is PartCountBucket.B10_20
    assert bucket_of(19) is PartCountBucket.B10_20
    assert bucket_of(20) is PartCountBucket.B20_50
    assert bucket_of(49) is PartCountBucket.B20_50
    assert bucket_of(50) is PartCountBucket.GT50
    assert bucket_of(400) is PartCountBucket.GT50


def test_bucket_rejects_non_positive():
    for bad in (0, -1, -50):
        with pytest.raises(ValueError):
            bucket_of(bad)


def test_buckets_partition_positive_integers():
    # total function: every count lands in exactly one bucket
    for count in range(1, 400):
        assert bucket_of(count) in PartCountBucket


def test_reference_distribution_reproduces_bucket_totals():
    # 715 synthetic part counts spread like the published corpus
    rng = random.Random(42)
    counts = (
        [rng.randrange(1, 10) for _ in range(361)]
        + [rng.randrange(10, 20) for _ in range(156)]
        + [rng.randrange(20, 50) for _ in range(118)]
        + [rng.randrange(50, 120) for _ in range(80)]
    )
    sizes = {bucket: 0 for bucket in PartCountBucket}
    for count in counts:
        sizes[bucket_of(count)] += 1
    assert sizes[PartCountBucket.LT10] == 361
    assert sizes[PartCountBucket.B10_20] == 156
    assert sizes[PartCountBucket.B20_50] == 118
    assert sizes[PartCountBucket.GT50] == 80
    assert sum(sizes.values()) == 715


def test_spec_items_round_trip(tmp_path):
    items = [
        corpus.SpecItem("s-a1", "a1", "The pin must fit the plate.", ("part1.png", "part2.png")),
        corpus.SpecItem(
            "s-a2", "a2", "The cap must seal the bottle.", ("part1.png",),
            source=corpus.SOURCE_HUMAN_PREFERENCE,
        ),
    ]
    path = tmp_path / "specs.jsonl"
    corpus.save_spec_items(items, path)
    assert corpus.load_spec_items(path) == items


def test_spec_item_validation():
    with pytest.raises(corpus.CorpusError):
        corpus.SpecItem("s", "a", "", ("p.png",))
    with pytest.raises(corpus.CorpusError):
        corpus.SpecItem("s", "a", "text", ())
    with pytest.raises(corpus.CorpusError):
        corpus.SpecItem("s", "a", "text", ("p.png",), source="weird")


def test_validate_spec_items_against_corpus(tmp_path):
    build_corpus(tmp_path, {"a1": 2})
    index = corpus.scan_dataset(tmp_path)
    good = corpus.SpecItem("s1", "a1", "ok", ("part1.png", "part2.png"))
    ghost_part = corpus.SpecItem("s2", "a1", "ok", ("ghost.png",))
    ghost_assembly = corpus.SpecItem("s3", "zz", "ok", ("part1.png",))
    problems = corpus.validate_spec_items([good, ghost_part, ghost_assembly], index)
    assert len(problems) == 2
    assert any("ghost.png" in p for p in problems)
    assert any("zz" in p for p in problems)


def test_scan_accepts_jpeg_parts(tmp_path):
    directory = tmp_path / "a1"
    directory.mkdir()
    write_png(directory / "assembly.png", seed="a")
    write_png(directory / "part1.jpg", seed="p1")
    write_png(directory / "part2.png", seed="p2")
    (directory / "notes.txt").write_text("ignored")
    record = corpus.scan_dataset(tmp_path).get("a1")
    assert record.part_filenames() == ["part1.jpg", "part2.png"]


def test_step_sibling_discovered(tmp_path):
    build_corpus(tmp_path, {"a1": 2}, with_step=True)
    record = corpus.scan_dataset(tmp_path).get("a1")
    assert record.step_path is not None
    assert all(part.step_path is not None for part in record.parts)
