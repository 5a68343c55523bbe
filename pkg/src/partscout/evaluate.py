"""Scoring, bucketed reporting, and ablation sweeps.

Grading is exact set equality per item (failed parses score as incorrect,
so denominators stay constant across strategies); accuracy percentages are
rounded half-up to one decimal. Partial-credit metrics (precision, recall,
Jaccard) ride along as diagnostics only.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Optional, Sequence, Union

from .corpus import CorpusIndex, PartCountBucket, SpecItem, bucket_of
from .gateway import Backend, RetryPolicy, parallel_map
from .notebook import ErrorNotebook, grade_prediction
from .pipeline import PARSE_FAILED, RetrievalResult, load_results, save_results
from .rag import MODES, build_index, rag_infer
from . import step21

BUCKET_ORDER = (
    PartCountBucket.LT10,
    PartCountBucket.B10_20,
    PartCountBucket.B20_50,
    PartCountBucket.GT50,
)

EMPTY_CELL = "—"  # report placeholder for buckets with no items


def percent(correct: int, total: int) -> Optional[float]:
    """100*correct/total rounded half-up to one decimal; None when empty."""
    if total == 0:
        return None
    value = Decimal(100 * correct) / Decimal(total)
    return float(value.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class BucketScore:
    label: str
    correct: int
    total: int

    @property
    def accuracy(self) -> Optional[float]:
        return percent(self.correct, self.total)


@dataclass(frozen=True)
class ItemVerdict:
    spec_id: str
    part_count: int
    correct: bool
    assembly_id: str = ""
    parse_status: str = ""
    precision: float = 0.0
    recall: float = 0.0
    jaccard: float = 0.0


@dataclass
class EvalReport:
    run_id: str
    verdicts: tuple[ItemVerdict, ...]
    overall: BucketScore
    buckets: dict[PartCountBucket, BucketScore]
    config: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "overall": {"correct": self.overall.correct, "total": self.overall.total,
                        "accuracy": self.overall.accuracy},
            "buckets": {
                bucket.label: {
                    "correct": score.correct,
                    "total": score.total,
                    "accuracy": score.accuracy,
                }
                for bucket, score in self.buckets.items()
            },
            "config": self.config,
            "diagnostics": self.diagnostics,
            "warnings": list(self.warnings),
        }


def _set_overlap(predicted: Sequence[str], gt: Sequence[str]) -> tuple[float, float, float]:
    pred, truth = set(predicted), set(gt)
    hit = len(pred & truth)
    precision = hit / len(pred) if pred else 0.0
    recall = hit / len(truth) if truth else 0.0
    union = len(pred | truth)
    jaccard = hit / union if union else 1.0
    return precision, recall, jaccard


def summarize_verdicts(
    verdicts: Sequence[ItemVerdict],
    run_id: str = "",
    config: Optional[dict] = None,
    warnings: Sequence[str] = (),
) -> EvalReport:
    """Aggregate per-item verdicts into overall and per-bucket scores."""
    per_bucket = {bucket: [0, 0] for bucket in BUCKET_ORDER}
    correct_total = 0
    for verdict in verdicts:
        bucket = bucket_of(verdict.part_count)
        per_bucket[bucket][1] += 1
        if verdict.correct:
            per_bucket[bucket][0] += 1
            correct_total += 1

    buckets = {
        bucket: BucketScore(bucket.label, hit, total)
        for bucket, (hit, total) in per_bucket.items()
    }
    n = len(verdicts)
    diagnostics = {
        "mean_precision": round(sum(v.precision for v in verdicts) / n, 4) if n else 0.0,
        "mean_recall": round(sum(v.recall for v in verdicts) / n, 4) if n else 0.0,
        "mean_jaccard": round(sum(v.jaccard for v in verdicts) / n, 4) if n else 0.0,
    }
    return EvalReport(
        run_id=run_id,
        verdicts=tuple(verdicts),
        overall=BucketScore("Overall", correct_total, n),
        buckets=buckets,
        config=dict(config or {}),
        diagnostics=diagnostics,
        warnings=tuple(warnings),
    )


def score_run(
    results: Sequence[RetrievalResult],
    spec_items: Sequence[SpecItem],
    index: CorpusIndex,
    run_id: str = "",
    config: Optional[dict] = None,
) -> EvalReport:
    """Grade a result set against its spec items.

    Every spec item counts toward the denominator; a spec item with no
    result row scores incorrect. A result without a matching spec item is
    a consistency error. Part counts are cross-checked against any
    assembly-level STEP file (warning only).
    """
    specs_by_id = {item.spec_id: item for item in spec_items}
    for result in results:
        if result.spec_id not in specs_by_id:
            raise ValueError(f"result {result.spec_id} has no matching spec item")
    results_by_id = {result.spec_id: result for result in results}

    warnings = []
    checked_assemblies = set()
    verdicts = []
    for item in spec_items:
        record = index.get(item.assembly_id)
        if record.step_path and record.assembly_id not in checked_assemblies:
            checked_assemblies.add(record.assembly_id)
            try:
                parsed = step21.part_count(step21.load_step(record.step_path))
                if parsed != record.part_count:
                    warnings.append(
                        f"{record.assembly_id}: catalog has {record.part_count} parts "
                        f"but STEP file lists {parsed}"
                    )
            except step21.StepError as err:
                warnings.append(f"{record.assembly_id}: unreadable STEP file: {err}")

        result = results_by_id.get(item.spec_id)
        if result is None:
            verdicts.append(
                ItemVerdict(item.spec_id, record.part_count, False,
                            assembly_id=item.assembly_id, parse_status="missing")
            )
            continue
        correct = result.parse_status != PARSE_FAILED and grade_prediction(
            result.predicted, item.gt_filenames
        )
        precision, recall, jaccard = _set_overlap(result.predicted, item.gt_filenames)
        verdicts.append(
            ItemVerdict(
                item.spec_id,
                record.part_count,
                bool(correct),
                assembly_id=item.assembly_id,
                parse_status=result.parse_status,
                precision=precision,
                recall=recall,
                jaccard=jaccard,
            )
        )
    return summarize_verdicts(verdicts, run_id=run_id, config=config, warnings=warnings)


def _format_cell(accuracy: Optional[float]) -> str:
    return EMPTY_CELL if accuracy is None else f"{accuracy:.1f}"


def _report_row(report: EvalReport) -> list[str]:
    cells = [_format_cell(report.overall.accuracy)]
    cells.extend(_format_cell(report.buckets[bucket].accuracy) for bucket in BUCKET_ORDER)
    return cells


def emit_report(report: EvalReport, fmt: str = "markdown") -> str:
    """Render one report as a markdown table or CSV (1-decimal percentages)."""
    if fmt == "markdown":
        lines = [
            "| Run | Overall | <10 | 10-20 | 20-50 | >50 |",
            "| --- | --- | --- | --- | --- | --- |",
            "| " + " | ".join([report.run_id or "run"] + _report_row(report)) + " |",
            "",
            f"Diagnostics: precision {report.diagnostics.get('mean_precision', 0.0)}, "
            f"recall {report.diagnostics.get('mean_recall', 0.0)}, "
            f"jaccard {report.diagnostics.get('mean_jaccard', 0.0)}",
        ]
        for warning in report.warnings:
            lines.append(f"Warning: {warning}")
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerow(["group", "bucket", "correct", "total", "accuracy"])
        rows = [(report.run_id or "run", report.overall)] + [
            (report.run_id or "run", report.buckets[bucket]) for bucket in BUCKET_ORDER
        ]
        for group, score in rows:
            accuracy = score.accuracy
            writer.writerow(
                [group, score.label, score.correct, score.total,
                 "" if accuracy is None else f"{accuracy:.1f}"]
            )
        return buffer.getvalue()
    raise ValueError(f"unknown report format {fmt!r}")


@dataclass
class AblationCell:
    exemplar_count: int
    mode: str
    report: Optional[EvalReport] = None
    error: Optional[str] = None


@dataclass
class AblationTable:
    cells: list[AblationCell] = field(default_factory=list)


def emit_ablation(table: AblationTable, fmt: str = "markdown") -> str:
    if fmt == "markdown":
        lines = [
            "| Exemplars | Mode | Overall | <10 | 10-20 | 20-50 | >50 |",
            "| --- | --- | --- | --- | --- | --- | --- |",
        ]
        for cell in table.cells:
            if cell.report is None:
                row = [str(cell.exemplar_count), cell.mode, f"error: {cell.error}"]
                row += [EMPTY_CELL] * 4
            else:
                row = [str(cell.exemplar_count), cell.mode] + _report_row(cell.report)
            lines.append("| " + " | ".join(row) + " |")
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerow(["exemplars", "mode", "bucket", "correct", "total", "accuracy"])
        for cell in table.cells:
            if cell.report is None:
                writer.writerow([cell.exemplar_count, cell.mode, "error", "", "", ""])
                continue
            scores = [cell.report.overall] + [
                cell.report.buckets[bucket] for bucket in BUCKET_ORDER
            ]
            for score in scores:
                accuracy = score.accuracy
                writer.writerow(
                    [cell.exemplar_count, cell.mode, score.label, score.correct,
                     score.total, "" if accuracy is None else f"{accuracy:.1f}"]
                )
        return buffer.getvalue()
    raise ValueError(f"unknown report format {fmt!r}")


def _atomic_write(path: Path, write) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    write(tmp)
    os.replace(tmp, path)


def run_ablation(
    spec_items: Sequence[SpecItem],
    index: CorpusIndex,
    desc_maps: dict[str, dict[str, str]],
    notebook: ErrorNotebook,
    backend: Backend,
    model_name: str,
    counts: Sequence[int] = (1, 5, 10, 20, 50),
    modes: Sequence[str] = MODES,
    cache_dir: Optional[Union[str, Path]] = None,
    worker_limit: int = 4,
    policy: RetryPolicy = RetryPolicy(),
    template=None,
    clock=None,
) -> AblationTable:
    """One RAG sweep per (exemplar count, mode) cell over the same spec set.

    Cell results are cached (atomic write-then-rename) so interrupted runs
    resume without re-querying; per-cell failures leave the table partial.
    """
    spec_index = build_index(notebook)
    cache_dir = Path(cache_dir) if cache_dir else None
    if cache_dir:
        cache_dir.mkdir(parents=True, exist_ok=True)

    table = AblationTable()
    for count in counts:
        for mode in modes:
            cell = AblationCell(count, mode)
            cache_path = (
                cache_dir / f"cell-k{count}-{mode}.results.jsonl" if cache_dir else None
            )
            try:
                if cache_path and cache_path.exists():
                    results = load_results(cache_path)
                else:
                    def infer(item: SpecItem) -> RetrievalResult:
                        assembly = index.get(item.assembly_id)
                        return rag_infer(
                            item,
                            assembly,
                            desc_maps[item.assembly_id],
                            notebook,
                            backend,
                            model_name,
                            k=count,
                            mode=mode,
                            index=spec_index,
                            policy=policy,
                            template=template,
                            clock=clock,
                        )

                    outcomes = parallel_map(spec_items, worker_limit, infer)
                    results = []
                    for item, outcome in zip(spec_items, outcomes):
                        if outcome.ok:
                            results.append(outcome.value)
                        else:
                            raise outcome.error
                    if cache_path:
                        _atomic_write(cache_path, lambda tmp: save_results(results, tmp))
                cell.report = score_run(
                    results,
                    spec_items,
                    index,
                    run_id=f"k={count} {mode}",
                    config={"model": model_name, "k": count, "mode": mode},
                )
            except Exception as err:
                cell.error = str(err)
            table.cells.append(cell)
    return table


def save_report_json(report: EvalReport, path: Union[str, Path]) -> None:
    Path(path).write_text(
        json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
