"""Eval harness: rounding, bucketed scoring, report rendering, ablation
sweeps with cell caching."""

from __future__ import annotations

import csv
import io
import random

import pytest

from partscout import corpus
from partscout.corpus import PartCountBucket
from partscout.evaluate import (
    EMPTY_CELL,
    ItemVerdict,
    emit_ablation,
    emit_report,
    percent,
    run_ablation,
    score_run,
    summarize_verdicts,
)
from partscout.gateway import FunctionBackend, ReplayFixture, RecordingBackend, replay_backend
from partscout.notebook import ErrorNotebook, NotebookEntry, ORIGIN_CORRECTED
from partscout.pipeline import (
    PARSE_FAILED,
    PARSE_OK,
    RetrievalResult,
    format_final_answer,
)
from conftest import build_corpus, fake_description_for_file, spec_sentence


def test_percent_rounds_half_up_to_one_decimal():
    assert percent(240, 715) == 33.6
    assert percent(185, 361) == 51.2
    assert percent(37, 156) == 23.7
    assert percent(14, 118) == 11.9
    assert percent(4, 80) == 5.0
    assert percent(107, 715) == 15.0
    assert percent(1, 800) == 0.1  # 0.125 rounds up
    assert percent(0, 5) == 0.0
    assert percent(0, 0) is None


def _verdicts(bucket_counts):
    """bucket_counts: list of (part_count range, correct, total)."""
    rng = random.Random(13)
    verdicts = []
    i = 0
    for (low, high), correct, total in bucket_counts:
        for j in range(total):
            verdicts.append(
                ItemVerdict(f"s{i}", rng.randrange(low, high), j < correct)
            )
            i += 1
    return verdicts


FIG4 = [((1, 10), 185, 361), ((10, 20), 37, 156), ((20, 50), 14, 118), ((50, 200), 4, 80)]


def test_fig4_distribution_reproduces_published_numbers():
    report = summarize_verdicts(_verdicts(FIG4), run_id="pipeline")
    assert report.overall.correct == 240
    assert report.overall.total == 715
    assert report.overall.accuracy == 33.6
    assert report.buckets[PartCountBucket.LT10].accuracy == 51.2
    assert report.buckets[PartCountBucket.B10_20].accuracy == 23.7
    assert report.buckets[PartCountBucket.B20_50].accuracy == 11.9
    assert report.buckets[PartCountBucket.GT50].accuracy == 5.0


def test_image_only_baseline_fixture():
    verdicts = _verdicts([((1, 10), 60, 361), ((10, 20), 30, 156), ((20, 50), 12, 118), ((50, 200), 5, 80)])
    report = summarize_verdicts(verdicts)
    assert report.overall.correct == 107
    assert report.overall.accuracy == 15.0


def test_all_correct_fixture_scores_100_everywhere():
    verdicts = _verdicts([((1, 10), 5, 5), ((10, 20), 4, 4), ((20, 50), 3, 3), ((50, 99), 2, 2)])
    report = summarize_verdicts(verdicts)
    assert report.overall.accuracy == 100.0
    for bucket in PartCountBucket:
        assert report.buckets[bucket].accuracy == 100.0


def test_bucket_totals_partition_items():
    rng = random.Random(3)
    verdicts = [
        ItemVerdict(f"s{i}", rng.randrange(1, 120), rng.random() < 0.4) for i in range(500)
    ]
    report = summarize_verdicts(verdicts)
    assert sum(s.total for s in report.buckets.values()) == report.overall.total == 500
    assert sum(s.correct for s in report.buckets.values()) == report.overall.correct


def test_accuracy_monotone_under_false_to_true_flip():
    rng = random.Random(7)
    for _ in range(30):
        verdicts = [
            ItemVerdict(f"s{i}", rng.randrange(1, 120), rng.random() < 0.5)
            for i in range(60)
        ]
        base = summarize_verdicts(verdicts)
        wrong = [i for i, v in enumerate(verdicts) if not v.correct]
        if not wrong:
            continue
        pick = rng.choice(wrong)
        flipped = list(verdicts)
        flipped[pick] = ItemVerdict(
            verdicts[pick].spec_id, verdicts[pick].part_count, True
        )
        improved = summarize_verdicts(flipped)
        assert improved.overall.accuracy >= base.overall.accuracy
        bucket = corpus.bucket_of(verdicts[pick].part_count)
        assert improved.buckets[bucket].accuracy >= (base.buckets[bucket].accuracy or 0.0)


def test_markdown_report_contains_published_row():
    report = summarize_verdicts(_verdicts(FIG4), run_id="two-stage")
    text = emit_report(report, "markdown")
    assert "| 33.6 | 51.2 | 23.7 | 11.9 | 5.0 |" in text


def test_markdown_empty_bucket_renders_placeholder_not_crash():
    verdicts = _verdicts([((1, 10), 2, 3)])
    text = emit_report(summarize_verdicts(verdicts), "markdown")
    assert EMPTY_CELL in text


def test_csv_round_trips_through_reader():
    report = summarize_verdicts(_verdicts(FIG4), run_id="r")
    rows = list(csv.reader(io.StringIO(emit_report(report, "csv"))))
    assert rows[0] == ["group", "bucket", "correct", "total", "accuracy"]
    assert rows[1] == ["r", "Overall", "240", "715", "33.6"]
    assert rows[2] == ["r", "<10", "185", "361", "51.2"]
    assert rows[5] == ["r", ">50", "4", "80", "5.0"]


def test_summarize_is_bit_identical_across_calls():
    import json

    verdicts = _verdicts(FIG4)
    first = summarize_verdicts(verdicts, run_id="x")
    second = summarize_verdicts(verdicts, run_id="x")
    assert json.dumps(first.to_json(), sort_keys=True) == json.dumps(
        second.to_json(), sort_keys=True
    )


@pytest.fixture
def scored_setup(tmp_path):
    build_corpus(tmp_path / "corpus", {"a1": 3, "a2": 12})
    index = corpus.scan_dataset(tmp_path / "corpus")
    items = [
        corpus.SpecItem("s-a1", "a1", "spec one", ("part1.png", "part2.png")),
        corpus.SpecItem("s-a2", "a2", "spec two", ("part1.png",)),
    ]
    return index, items


def test_score_run_grades_and_buckets(scored_setup):
    index, items = scored_setup
    results = [
        RetrievalResult("s-a1", ("part2.png", "part1.png"), "cot", PARSE_OK),
        RetrievalResult("s-a2", ("part1.png", "part9.png"), "cot", PARSE_OK),
    ]
    report = score_run(results, items, index)
    assert report.overall.correct == 1
    assert report.overall.total == 2
    assert report.buckets[PartCountBucket.LT10].correct == 1
    assert report.buckets[PartCountBucket.B10_20].total == 1
    assert 0.0 < report.diagnostics["mean_jaccard"] < 1.0


def test_score_run_failed_parse_counts_incorrect(scored_setup):
    index, items = scored_setup
    results = [
        RetrievalResult("s-a1", ("part1.png", "part2.png"), "", PARSE_FAILED),
        RetrievalResult("s-a2", ("part1.png",), "cot", PARSE_OK),
    ]
    report = score_run(results, items, index)
    assert report.overall.correct == 1  # the failed parse scored wrong despite matching set


def test_score_run_missing_result_counts_incorrect(scored_setup):
    index, items = scored_setup
    results = [RetrievalResult("s-a1", ("part1.png", "part2.png"), "cot", PARSE_OK)]
    report = score_run(results, items, index)
    assert report.overall.total == 2
    assert report.overall.correct == 1
    missing = [v for v in report.verdicts if v.spec_id == "s-a2"]
    assert missing[0].parse_status == "missing"


def test_score_run_orphan_result_is_error(scored_setup):
    index, items = scored_setup
    with pytest.raises(ValueError):
        score_run([RetrievalResult("s-ghost", (), "", PARSE_OK)], items, index)


def test_score_run_step_count_cross_check_warns(tmp_path):
    build_corpus(tmp_path / "corpus", {"a1": 3}, with_step=True)
    index = corpus.scan_dataset(tmp_path / "corpus")
    # agreement: no warning
    items = [corpus.SpecItem("s-a1", "a1", "spec", ("part1.png",))]
    results = [RetrievalResult("s-a1", ("part1.png",), "cot", PARSE_OK)]
    report = score_run(results, items, index)
    assert report.warnings == ()
    # remove one part image so catalog count (2) disagrees with STEP (3)
    (tmp_path / "corpus" / "a1" / "part3.png").unlink()
    index = corpus.scan_dataset(tmp_path / "corpus")
    report = score_run(results, items, index)
    assert any("STEP file lists 3" in w for w in report.warnings)


def _rag_fixture(tmp_path):
    build_corpus(tmp_path / "corpus", {"a1": 3, "a2": 3})
    index = corpus.scan_dataset(tmp_path / "corpus")
    desc_maps = {}
    items = []
    entries = []
    for n, record in enumerate(index):
        desc_map = {
            p.filename: fake_description_for_file(p.image) for p in record.parts
        }
        desc_maps[record.assembly_id] = desc_map
        names = list(desc_map)
        gt = (names[0], names[1])
        sentence = spec_sentence(desc_map[names[0]], desc_map[names[1]])
        items.append(corpus.SpecItem(f"s-{record.assembly_id}", record.assembly_id, sentence, gt))
        entries.append(
            NotebookEntry(
                entry_id=f"e{n}",
                spec_id=f"other-{n}",
                specification=f"unrelated spec {n} about flanges and hubs",
                desc_map={"z.png": "A flange"},
                corrected_cot="steps\n" + format_final_answer(["z.png"]),
                final_answer=("z.png",),
                origin=ORIGIN_CORRECTED,
            )
        )
    return index, desc_maps, items, ErrorNotebook(tuple(entries))


def test_run_ablation_cells_and_cache(tmp_path, fake_vlm):
    index, desc_maps, items, notebook = _rag_fixture(tmp_path)

    fixture = ReplayFixture()
    recorder = RecordingBackend(FunctionBackend(fake_vlm), fixture)
    cache = tmp_path / "cache"
    table = run_ablation(
        items, index, desc_maps, notebook, recorder, "m",
        counts=(1, 2), modes=("cot", "answer_only"), cache_dir=cache,
    )
    assert len(table.cells) == 4
    totals = {cell.report.overall.total for cell in table.cells if cell.report}
    assert totals == {len(items)}
    assert all(cell.error is None for cell in table.cells)

    # resumed run: every cell cached, so the backend is never queried
    replay = replay_backend(fixture)
    resumed = run_ablation(
        items, index, desc_maps, notebook, replay, "m",
        counts=(1, 2), modes=("cot", "answer_only"), cache_dir=cache,
    )
    assert replay.hits == 0
    assert len(resumed.cells) == 4

    rendered = emit_ablation(table, "markdown")
    assert "| 1 | cot |" in rendered
    rendered_csv = emit_ablation(table, "csv")
    assert "exemplars,mode,bucket" in rendered_csv.splitlines()[0]


def test_run_ablation_single_cell(tmp_path, fake_vlm):
    index, desc_maps, items, notebook = _rag_fixture(tmp_path)
    table = run_ablation(
        items, index, desc_maps, notebook, FunctionBackend(fake_vlm), "m",
        counts=(1,), modes=("cot",),
    )
    assert len(table.cells) == 1
    assert table.cells[0].report is not None
