"""Dataset construction: specification generation, ground-truth resolution,
and annotation bundles for the human-preference loop.

The model picks two related part descriptions and writes one inspection
sentence; the two descriptions are resolved back to filenames by
normalized exact match (fuzzy matching would silently corrupt ground
truth, so near-misses surface as errors instead). Bundles pair each kept
specification with a merged-part render request for human review.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from .corpus import (
    AssemblyRecord,
    CorpusIndex,
    SpecItem,
)
from .gateway import (
    Backend,
    ChatRequest,
    ImageBlock,
    RetryPolicy,
    TextBlock,
    encode_image_attachment,
    parallel_map,
    send_chat,
)
from .prompts import PromptTemplate, numbered_descriptions, template_or_default

BUNDLE_FILE = "bundle.json"

STATUS_PENDING = "pending"
STATUS_KEPT = "kept"
STATUS_DISCARDED = "discarded"

FLAG_MISSING_STEP = "missing_step"
FLAG_RENDER_FAILED = "render_failed"


class SpecgenFormatError(ValueError):
    """Model output does not follow the two-line answer grammar."""


class UnresolvedDescriptionError(ValueError):
    """A generated description matches no part description."""

    def __init__(self, description: str, closest: list[str]) -> None:
        super().__init__(
            f"description {description!r} matches no part; closest values: {closest}"
        )
        self.description = description
        self.closest = closest


class AmbiguousDescriptionError(ValueError):
    """A generated description matches more than one part (or both
    descriptions collapse onto one part)."""


@dataclass(frozen=True)
class SpecDraft:
    """Parsed spec-generation output before ground-truth resolution."""

    assembly_id: str
    desc_a: str
    desc_b: str
    sentence: str

    def __post_init__(self) -> None:
        if self.desc_a == self.desc_b:
            raise SpecgenFormatError("the two selected descriptions must differ")


@dataclass
class AnnotationBundle:
    """One human-review item: images plus the candidate specification."""

    bundle_id: str
    assembly_id: str
    assembly_image: str
    specification: str
    gt_filenames: tuple[str, ...]
    merged_image: Optional[str] = None
    status: str = STATUS_PENDING
    reason_code: Optional[int] = None
    flags: tuple[str, ...] = ()
    source_spec_id: str = ""

    def to_json(self) -> dict:
        return {
            "bundle_id": self.bundle_id,
            "assembly_id": self.assembly_id,
            "assembly_image": self.assembly_image,
            "specification": self.specification,
            "gt_filenames": list(self.gt_filenames),
            "merged_image": self.merged_image,
            "status": self.status,
            "reason_code": self.reason_code,
            "flags": list(self.flags),
            "source_spec_id": self.source_spec_id,
        }

    @classmethod
    def from_json(cls, record: dict) -> "AnnotationBundle":
        return cls(
            bundle_id=record["bundle_id"],
            assembly_id=record["assembly_id"],
            assembly_image=record["assembly_image"],
            specification=record["specification"],
            gt_filenames=tuple(record["gt_filenames"]),
            merged_image=record.get("merged_image"),
            status=record.get("status", STATUS_PENDING),
            reason_code=record.get("reason_code"),
            flags=tuple(record.get("flags", ())),
            source_spec_id=record.get("source_spec_id", ""),
        )


@dataclass(frozen=True)
class RenderManifest:
    """Request handed to the renderer subprocess (one command per call)."""

    command: str  # split | merge | render
    inputs: tuple[str, ...]
    output: str
    image_size: tuple[int, int] = (800, 800)

    def to_json(self) -> dict:
        return {
            "command": self.command,
            "inputs": list(self.inputs),
            "output": self.output,
            "image_size": list(self.image_size),
        }

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")
        return path


def build_specgen_prompt(
    assembly_image: Union[str, Path],
    desc_map: dict[str, str],
    model_name: str,
    template: Optional[PromptTemplate] = None,
    temperature: float = 0.0,
) -> ChatRequest:
    """Request embedding the numbered description list and the selection
    rules with the worked example."""
    if len(desc_map) < 2:
        raise ValueError("spec generation needs at least 2 part descriptions")
    rendered = template_or_default(template, "spec_generation").render(
        desc_list=numbered_descriptions(desc_map)
    )
    return ChatRequest(
        model_name=model_name,
        user_blocks=(
            ImageBlock(encode_image_attachment(assembly_image)),
            TextBlock(rendered),
        ),
        temperature=temperature,
    )


def parse_specgen_output(text: str, assembly_id: str = "") -> SpecDraft:
    """First non-empty line: exactly two descriptions split on ';'.
    Next non-empty line: the specification sentence."""
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise SpecgenFormatError("empty spec-generation output")
    segments = [piece.strip() for piece in lines[0].split(";")]
    if len(segments) != 2 or not all(segments):
        raise SpecgenFormatError(
            f"expected exactly two ';'-separated descriptions, got {lines[0]!r}"
        )
    if len(lines) < 2:
        raise SpecgenFormatError("missing specification sentence line")
    return SpecDraft(assembly_id, segments[0], segments[1], lines[1])


def _normalize(text: str) -> str:
    return " ".join(text.split()).casefold().removesuffix(".")


def _edit_distance(a: str, b: str) -> int:
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        current = [i]
        for j, cb in enumerate(b, 1):
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb))
            )
        previous = current
    return previous[-1]


def resolve_ground_truth(draft: SpecDraft, desc_map: dict[str, str]) -> tuple[str, str]:
    """Map both selected descriptions back to filenames by normalized exact
    match; anything else is an explicit error for the human queue."""
    normalized = {}
    for filename, description in desc_map.items():
        normalized.setdefault(_normalize(description), []).append(filename)

    resolved = []
    for target in (draft.desc_a, draft.desc_b):
        matches = normalized.get(_normalize(target), [])
        if not matches:
            ranked = sorted(
                desc_map.values(), key=lambda d: (_edit_distance(_normalize(target), _normalize(d)), d)
            )
            raise UnresolvedDescriptionError(target, ranked[:3])
        if len(matches) > 1:
            raise AmbiguousDescriptionError(
                f"description {target!r} matches several parts: {sorted(matches)}"
            )
        resolved.append(matches[0])
    if resolved[0] == resolved[1]:
        raise AmbiguousDescriptionError(
            f"both descriptions resolve to the same part {resolved[0]!r}"
        )
    return (resolved[0], resolved[1])


@dataclass
class SpecgenReport:
    items: list[SpecItem] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)  # assembly_id -> reason


def generate_spec_items(
    index: CorpusIndex,
    desc_maps: dict[str, dict[str, str]],
    backend: Backend,
    model_name: str,
    worker_limit: int = 4,
    policy: RetryPolicy = RetryPolicy(),
    per_assembly: int = 1,
    template: Optional[PromptTemplate] = None,
    clock=None,
) -> SpecgenReport:
    """One (by default) self-generated spec item per assembly with a usable
    description map; unresolved or malformed drafts land in the failure queue."""

    eligible = [a for a in index if len(desc_maps.get(a.assembly_id, {})) >= 2]

    def generate_one(assembly: AssemblyRecord) -> list[SpecItem]:
        desc_map = desc_maps[assembly.assembly_id]
        items = []
        for position in range(per_assembly):
            request = build_specgen_prompt(
                assembly.assembly_image, desc_map, model_name, template
            )
            text = send_chat(request, backend, policy, clock=clock).text
            draft = parse_specgen_output(text, assembly.assembly_id)
            gt = resolve_ground_truth(draft, desc_map)
            suffix = "" if per_assembly == 1 else f"-{position + 1}"
            items.append(
                SpecItem(
                    spec_id=f"s-{assembly.assembly_id}{suffix}",
                    assembly_id=assembly.assembly_id,
                    specification=draft.sentence,
                    gt_filenames=gt,
                )
            )
        return items

    report = SpecgenReport()
    outcomes = parallel_map(eligible, worker_limit, generate_one)
    for assembly, outcome in zip(eligible, outcomes):
        if outcome.ok:
            report.items.extend(outcome.value)
        else:
            report.failures[assembly.assembly_id] = str(outcome.error)
    report.items.sort(key=lambda item: item.spec_id)
    return report


def subprocess_invoker(renderer_cmd: Sequence[str]) -> Callable[[Path], int]:
    """Invoker running ``<renderer> --manifest <path>`` and returning its
    exit code (the subprocess contract render tooling must follow)."""

    def invoke(manifest_path: Path) -> int:
        completed = subprocess.run(
            [*renderer_cmd, "--manifest", str(manifest_path)],
            capture_output=True,
            text=True,
        )
        return completed.returncode

    return invoke


def make_annotation_bundles(
    spec_items: Sequence[SpecItem],
    index: CorpusIndex,
    render_invoker: Callable[[Path], int],
    out_dir: Union[str, Path],
    image_size: tuple[int, int] = (800, 800),
) -> list[AnnotationBundle]:
    """Emit one bundle per spec item: merge the ground-truth parts' STEP
    files and render the merged image via the invoker.

    Items whose parts lack STEP paths are flagged and skipped by the
    renderer; renderer failures flag the bundle but never stop the run.
    """
    out_dir = Path(out_dir)
    bundles = []
    for item in spec_items:
        assembly = index.get(item.assembly_id)
        bundle_id = f"b-{item.spec_id}"
        bundle_dir = out_dir / bundle_id
        bundle_dir.mkdir(parents=True, exist_ok=True)
        bundle = AnnotationBundle(
            bundle_id=bundle_id,
            assembly_id=item.assembly_id,
            assembly_image=str(assembly.assembly_image),
            specification=item.specification,
            gt_filenames=item.gt_filenames,
            source_spec_id=item.spec_id,
        )

        step_paths = []
        for name in item.gt_filenames:
            ref = assembly.part(name)
            if ref.step_path is None:
                step_paths = []
                break
            step_paths.append(str(ref.step_path))

        if not step_paths:
            bundle.flags = (FLAG_MISSING_STEP,)
        else:
            merged_step = bundle_dir / "merged.step"
            merged_png = bundle_dir / "merged.png"
            merge_manifest = RenderManifest(
                "merge", tuple(step_paths), str(merged_step)
            ).write(bundle_dir / "merge.manifest.json")
            render_manifest = RenderManifest(
                "render", (str(merged_step),), str(merged_png), image_size
            ).write(bundle_dir / "render.manifest.json")
            if render_invoker(merge_manifest) != 0 or render_invoker(render_manifest) != 0:
                bundle.flags = (FLAG_RENDER_FAILED,)
            else:
                bundle.merged_image = str(merged_png)

        (bundle_dir / BUNDLE_FILE).write_text(
            json.dumps(bundle.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        bundles.append(bundle)
    return bundles
