"""Error notebook: corrected reasoning trajectories built from graded runs.

Baseline results are graded against ground truth; wrong items get a
correction prompt that replays the previous reasoning, pivots at the first
mistake with a reflective transition, and must end on the ground-truth
answer. Correct items are stored as passthrough entries so the notebook
can also serve answer-only exemplars. Every persisted entry re-validates
on load: parsing its trajectory yields exactly the ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .corpus import AssemblyRecord, CorpusIndex, SpecItem
from .gateway import (
    Backend,
    ChatRequest,
    GatewayError,
    ImageBlock,
    RetryPolicy,
    TextBlock,
    encode_image_attachment,
    parallel_map,
    send_chat,
)
from .pipeline import RetrievalResult, parse_final_answer
from .prompts import PromptTemplate, description_lines, template_or_default

ORIGIN_CORRECTED = "corrected"
ORIGIN_PASSTHROUGH = "passthrough"

# One initial correction call plus two retries on validation failure.
MAX_CORRECTION_ATTEMPTS = 3


class NotebookValidationError(ValueError):
    """A trajectory does not end on the expected ground truth."""


class NotebookConsistencyError(ValueError):
    """Results and spec items do not line up."""


def grade_prediction(predicted: Iterable[str], gt: Iterable[str]) -> bool:
    """Exact set equality, order-insensitive (binary per-item verdict)."""
    return set(predicted) == set(gt)


@dataclass(frozen=True)
class NotebookEntry:
    entry_id: str
    spec_id: str
    specification: str
    desc_map: dict
    corrected_cot: str
    final_answer: tuple[str, ...]
    origin: str
    correction_attempts: int = 0

    def __post_init__(self) -> None:
        if not self.corrected_cot.strip():
            raise NotebookValidationError(f"entry {self.entry_id}: empty trajectory")
        if self.origin not in (ORIGIN_CORRECTED, ORIGIN_PASSTHROUGH):
            raise NotebookValidationError(f"entry {self.entry_id}: bad origin {self.origin!r}")

    def to_json(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "spec_id": self.spec_id,
            "specification": self.specification,
            "desc_map": dict(self.desc_map),
            "corrected_cot": self.corrected_cot,
            "final_answer": list(self.final_answer),
            "origin": self.origin,
            "correction_attempts": self.correction_attempts,
        }

    @classmethod
    def from_json(cls, record: dict) -> "NotebookEntry":
        return cls(
            entry_id=record["entry_id"],
            spec_id=record["spec_id"],
            specification=record["specification"],
            desc_map=dict(record["desc_map"]),
            corrected_cot=record["corrected_cot"],
            final_answer=tuple(record["final_answer"]),
            origin=record["origin"],
            correction_attempts=record.get("correction_attempts", 0),
        )


@dataclass
class ErrorNotebook:
    entries: tuple[NotebookEntry, ...]
    source_run_id: str = ""
    model_name: str = ""

    def __post_init__(self) -> None:
        spec_ids = [entry.spec_id for entry in self.entries]
        if len(set(spec_ids)) != len(spec_ids):
            raise NotebookValidationError("duplicate spec_ids in notebook")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def by_entry_id(self, entry_id: str) -> NotebookEntry:
        for entry in self.entries:
            if entry.entry_id == entry_id:
                return entry
        raise KeyError(entry_id)


@dataclass(frozen=True)
class ExclusionRecord:
    """An item the notebook could not absorb, with the reason."""

    spec_id: str
    reason: str
    attempts: int


def build_correction_prompt(
    assembly_image: Union[str, Path],
    desc_map: dict[str, str],
    specification: str,
    previous_cot: str,
    gt_filenames: Sequence[str],
    model_name: str,
    template: Optional[PromptTemplate] = None,
    temperature: float = 0.0,
) -> ChatRequest:
    """Correction request: previous reasoning verbatim between delimiters,
    description lines, specification, and the ground-truth list."""
    if not previous_cot.strip():
        raise ValueError("previous_cot must be non-empty")
    if not desc_map:
        raise ValueError("desc_map must be non-empty")
    rendered = template_or_default(template, "cot_correction").render(
        desc_lines=description_lines(desc_map),
        specification=specification,
        previous_reasoning=previous_cot,
        gt_list=";".join(gt_filenames),
    )
    return ChatRequest(
        model_name=model_name,
        user_blocks=(
            ImageBlock(encode_image_attachment(assembly_image)),
            TextBlock(rendered),
        ),
        temperature=temperature,
    )


def validate_corrected_trajectory(text: str, gt_filenames: Iterable[str]) -> tuple[str, tuple[str, ...]]:
    """Accept a trajectory only if its parsed final answer equals the
    ground truth exactly; returns (trajectory, parsed answer)."""
    if not text.strip():
        raise NotebookValidationError("empty trajectory")
    parsed = parse_final_answer(text)
    if parsed.status == "failed":
        raise NotebookValidationError("trajectory has no Final Answer line")
    if set(parsed.filenames) != set(gt_filenames):
        raise NotebookValidationError(
            f"trajectory answer {sorted(parsed.filenames)} != ground truth {sorted(gt_filenames)}"
        )
    return text, parsed.filenames


def _correct_one(
    result: RetrievalResult,
    spec: SpecItem,
    assembly: AssemblyRecord,
    desc_map: dict[str, str],
    backend: Backend,
    model_name: str,
    policy: RetryPolicy,
    template: Optional[PromptTemplate],
    max_attempts: int,
    clock,
) -> NotebookEntry:
    previous = result.cot_text if result.cot_text.strip() else "(no previous reasoning)"
    request = build_correction_prompt(
        assembly.assembly_image,
        desc_map,
        spec.specification,
        previous,
        spec.gt_filenames,
        model_name,
        template,
    )
    last_error: Exception = NotebookValidationError("no correction attempted")
    for attempt in range(1, max_attempts + 1):
        try:
            response = send_chat(request, backend, policy, clock=clock)
        except GatewayError as err:
            raise NotebookValidationError(f"transport failure: {err}") from err
        try:
            trajectory, answer = validate_corrected_trajectory(
                response.text, spec.gt_filenames
            )
        except NotebookValidationError as err:
            last_error = err
            continue
        return NotebookEntry(
            entry_id=f"e-{spec.spec_id}",
            spec_id=spec.spec_id,
            specification=spec.specification,
            desc_map=desc_map,
            corrected_cot=trajectory,
            final_answer=answer,
            origin=ORIGIN_CORRECTED,
            correction_attempts=attempt,
        )
    raise NotebookValidationError(
        f"correction never reached ground truth in {max_attempts} attempts: {last_error}"
    )


def build_notebook(
    baseline_results: Sequence[RetrievalResult],
    spec_items: Sequence[SpecItem],
    index: CorpusIndex,
    desc_maps: dict[str, dict[str, str]],
    backend: Backend,
    model_name: str,
    policy: RetryPolicy = RetryPolicy(),
    worker_limit: int = 4,
    max_correction_attempts: int = MAX_CORRECTION_ATTEMPTS,
    run_id: str = "",
    template: Optional[PromptTemplate] = None,
    clock=None,
) -> tuple[ErrorNotebook, list[ExclusionRecord]]:
    """Grade every baseline result and assemble the notebook.

    Correct items become passthrough entries (their reasoning is kept as
    is); wrong items go through the correction prompt with up to
    ``max_correction_attempts`` total tries; items that never validate are
    excluded and reported.
    """
    specs_by_id = {item.spec_id: item for item in spec_items}
    for result in baseline_results:
        if result.spec_id not in specs_by_id:
            raise NotebookConsistencyError(f"result {result.spec_id} has no spec item")

    def process(result: RetrievalResult) -> NotebookEntry:
        spec = specs_by_id[result.spec_id]
        assembly = index.get(spec.assembly_id)
        desc_map = desc_maps[spec.assembly_id]
        if grade_prediction(result.predicted, spec.gt_filenames):
            try:
                trajectory, answer = validate_corrected_trajectory(
                    result.cot_text, spec.gt_filenames
                )
                return NotebookEntry(
                    entry_id=f"e-{spec.spec_id}",
                    spec_id=spec.spec_id,
                    specification=spec.specification,
                    desc_map=desc_map,
                    corrected_cot=trajectory,
                    final_answer=answer,
                    origin=ORIGIN_PASSTHROUGH,
                )
            except NotebookValidationError:
                # Graded correct only after hallucination filtering; the raw
                # trajectory is non-canonical, so route it through correction.
                pass
        return _correct_one(
            result,
            spec,
            assembly,
            desc_map,
            backend,
            model_name,
            policy,
            template,
            max_correction_attempts,
            clock,
        )

    ordered = sorted(baseline_results, key=lambda r: r.spec_id)
    outcomes = parallel_map(ordered, worker_limit, process)
    entries: list[NotebookEntry] = []
    exclusions: list[ExclusionRecord] = []
    for result, outcome in zip(ordered, outcomes):
        if outcome.ok:
            entries.append(outcome.value)
        else:
            exclusions.append(
                ExclusionRecord(result.spec_id, str(outcome.error), max_correction_attempts)
            )
    notebook = ErrorNotebook(tuple(entries), source_run_id=run_id, model_name=model_name)
    return notebook, exclusions


def save_notebook(notebook: ErrorNotebook, path: Union[str, Path]) -> None:
    """One entry per line; run metadata goes to a sidecar meta file."""
    path = Path(path)
    lines = [
        json.dumps(entry.to_json(), sort_keys=True, ensure_ascii=False)
        for entry in notebook.entries
    ]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    meta = {"source_run_id": notebook.source_run_id, "model_name": notebook.model_name}
    path.with_suffix(path.suffix + ".meta.json").write_text(
        json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_notebook(path: Union[str, Path], validate: bool = True) -> ErrorNotebook:
    """Load notebook.jsonl; with ``validate`` every entry's trajectory is
    re-parsed and must equal its stored final answer."""
    path = Path(path)
    entries = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        entry = NotebookEntry.from_json(json.loads(line))
        if validate:
            validate_corrected_trajectory(entry.corrected_cot, entry.final_answer)
        entries.append(entry)
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    source_run_id = ""
    model_name = ""
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        source_run_id = meta.get("source_run_id", "")
        model_name = meta.get("model_name", "")
    return ErrorNotebook(tuple(entries), source_run_id=source_run_id, model_name=model_name)
