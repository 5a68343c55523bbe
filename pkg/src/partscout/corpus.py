"""Data model and on-disk layout for assemblies, descriptions, and spec items.

Layout is one directory per assembly under a corpus root:

    <root>/<assembly_id>/assembly.png      required assembly image
    <root>/<assembly_id>/*.png             one image per part
    <root>/<assembly_id>/<part stem>.step  optional per-part STEP file
    <root>/<assembly_id>/assembly.step     optional assembly-level STEP file
    <root>/<assembly_id>/descriptions.json flat JSON object filename -> description
    specs.jsonl                            one spec item per line
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

ASSEMBLY_IMAGE_NAME = "assembly.png"
DESCRIPTIONS_NAME = "descriptions.json"

SOURCE_SELF_GENERATED = "self_generated"
SOURCE_HUMAN_PREFERENCE = "human_preference"
SPEC_SOURCES = (SOURCE_SELF_GENERATED, SOURCE_HUMAN_PREFERENCE)


class CorpusError(ValueError):
    """Invalid corpus content."""


class DescriptionSchemaError(CorpusError):
    """descriptions.json is valid JSON but not a string-to-string object."""


@dataclass(frozen=True)
class PartRef:
    filename: str
    image: Path
    step_path: Optional[Path] = None

    def __post_init__(self) -> None:
        if not self.filename:
            raise CorpusError("part filename must be non-empty")


@dataclass(frozen=True)
class AssemblyRecord:
    assembly_id: str
    assembly_image: Path
    parts: tuple[PartRef, ...]
    step_path: Optional[Path] = None

    def __post_init__(self) -> None:
        names = [part.filename for part in self.parts]
        if len(set(names)) != len(names):
            raise CorpusError(f"duplicate part filenames in assembly {self.assembly_id}")
        if not self.parts:
            raise CorpusError(f"assembly {self.assembly_id} has no parts")

    @property
    def part_count(self) -> int:
        return len(self.parts)

    @property
    def directory(self) -> Path:
        return self.assembly_image.parent

    def part_filenames(self) -> list[str]:
        return [part.filename for part in self.parts]

    def part(self, filename: str) -> PartRef:
        for ref in self.parts:
            if ref.filename == filename:
                return ref
        raise KeyError(filename)


@dataclass(frozen=True)
class SpecItem:
    """One retrieval task: a specification sentence with its ground truth."""

    spec_id: str
    assembly_id: str
    specification: str
    gt_filenames: tuple[str, ...]
    source: str = SOURCE_SELF_GENERATED

    def __post_init__(self) -> None:
        if not self.spec_id:
            raise CorpusError("spec_id must be non-empty")
        if not self.specification.strip():
            raise CorpusError(f"spec {self.spec_id}: specification must be non-empty")
        if not self.gt_filenames:
            raise CorpusError(f"spec {self.spec_id}: gt_filenames must be non-empty")
        if len(set(self.gt_filenames)) != len(self.gt_filenames):
            raise CorpusError(f"spec {self.spec_id}: duplicate gt filenames")
        if self.source not in SPEC_SOURCES:
            raise CorpusError(f"spec {self.spec_id}: unknown source {self.source!r}")

    def to_json(self) -> dict:
        return {
            "spec_id": self.spec_id,
            "assembly_id": self.assembly_id,
            "specification": self.specification,
            "gt_filenames": list(self.gt_filenames),
            "source": self.source,
        }

    @classmethod
    def from_json(cls, record: dict) -> "SpecItem":
        return cls(
            spec_id=record["spec_id"],
            assembly_id=record["assembly_id"],
            specification=record["specification"],
            gt_filenames=tuple(record["gt_filenames"]),
            source=record.get("source", SOURCE_SELF_GENERATED),
        )


class PartCountBucket(enum.Enum):
    """Difficulty stratum by assembly part count; the four buckets
    partition all positive counts."""

    LT10 = "<10"
    B10_20 = "10-20"
    B20_50 = "20-50"
    GT50 = ">50"

    @property
    def label(self) -> str:
        return self.value


DEFAULT_BUCKET_BOUNDARIES = (10, 20, 50)


def bucket_of(
    part_count: int, boundaries: tuple[int, int, int] = DEFAULT_BUCKET_BOUNDARIES
) -> PartCountBucket:
    """Bucket for a part count, half-open ranges [1,10) [10,20) [20,50) [50,inf)."""
    if part_count < 1:
        raise ValueError(f"part_count must be >= 1, got {part_count}")
    low, mid, high = boundaries
    if part_count < low:
        return PartCountBucket.LT10
    if part_count < mid:
        return PartCountBucket.B10_20
    if part_count < high:
        return PartCountBucket.B20_50
    return PartCountBucket.GT50


@dataclass(frozen=True)
class CorpusValidationError:
    assembly_id: str
    message: str


@dataclass(frozen=True)
class CorpusIndex:
    root: Path
    assemblies: tuple[AssemblyRecord, ...]
    errors: tuple[CorpusValidationError, ...] = ()
    _by_id: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._by_id.update({record.assembly_id: record for record in self.assemblies})

    def __len__(self) -> int:
        return len(self.assemblies)

    def __iter__(self) -> Iterator[AssemblyRecord]:
        return iter(self.assemblies)

    def get(self, assembly_id: str) -> AssemblyRecord:
        return self._by_id[assembly_id]

    def __contains__(self, assembly_id: str) -> bool:
        return assembly_id in self._by_id


_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
_STEP_SUFFIXES = (".step", ".stp")


def _step_sibling(image_path: Path) -> Optional[Path]:
    for suffix in _STEP_SUFFIXES:
        candidate = image_path.with_suffix(suffix)
        if candidate.exists():
            return candidate
    return None


def scan_dataset(root: Union[str, Path]) -> CorpusIndex:
    """Discover assemblies under ``root``.

    Validation collects per-assembly errors instead of failing fast; broken
    assemblies are excluded and reported so a partly damaged corpus stays
    usable. Ordering is deterministic (by assembly_id).
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus root {root} is not a readable directory")

    assemblies: list[AssemblyRecord] = []
    errors: list[CorpusValidationError] = []
    for directory in sorted(p for p in root.iterdir() if p.is_dir()):
        assembly_id = directory.name
        assembly_image = directory / ASSEMBLY_IMAGE_NAME
        if not assembly_image.exists():
            errors.append(CorpusValidationError(assembly_id, f"missing {ASSEMBLY_IMAGE_NAME}"))
            continue
        parts = []
        for image in sorted(directory.iterdir()):
            if image.name == ASSEMBLY_IMAGE_NAME or image.suffix.lower() not in _IMAGE_SUFFIXES:
                continue
            parts.append(PartRef(image.name, image, _step_sibling(image)))
        if not parts:
            errors.append(CorpusValidationError(assembly_id, "no part images"))
            continue
        step_path = None
        for suffix in _STEP_SUFFIXES:
            candidate = directory / f"assembly{suffix}"
            if candidate.exists():
                step_path = candidate
                break
        assemblies.append(AssemblyRecord(assembly_id, assembly_image, tuple(parts), step_path))

    return CorpusIndex(root, tuple(assemblies), tuple(errors))


def load_description_map(path: Union[str, Path]) -> dict[str, str]:
    """Load a descriptions.json object; keys are preserved verbatim.

    Raises json.JSONDecodeError on malformed JSON and
    :class:`DescriptionSchemaError` when the document is not a flat object
    of non-empty strings.
    """
    with open(path, encoding="utf-8") as handle:
        data = json.load(handle)
    if not isinstance(data, dict):
        raise DescriptionSchemaError(f"{path}: expected a JSON object")
    for key, value in data.items():
        if not isinstance(key, str) or not isinstance(value, str):
            raise DescriptionSchemaError(f"{path}: entry {key!r} is not string -> string")
        if not value:
            raise DescriptionSchemaError(f"{path}: empty description for {key!r}")
    return data


def save_description_map(descriptions: dict[str, str], path: Union[str, Path]) -> None:
    """Write descriptions.json preserving entry order (the corpus order)."""
    text = json.dumps(descriptions, indent=2, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def validate_description_map(descriptions: dict[str, str], assembly: AssemblyRecord) -> list[str]:
    """Return problems ('unknown key ...') without raising."""
    known = set(assembly.part_filenames())
    return [f"unknown key {key!r}" for key in descriptions if key not in known]


def load_spec_items(path: Union[str, Path]) -> list[SpecItem]:
    items = []
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            items.append(SpecItem.from_json(json.loads(line)))
        except (KeyError, json.JSONDecodeError) as err:
            raise CorpusError(f"{path}:{number}: bad spec record: {err}") from err
    return items


def save_spec_items(items: Sequence[SpecItem], path: Union[str, Path]) -> None:
    lines = [json.dumps(item.to_json(), sort_keys=True, ensure_ascii=False) for item in items]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def validate_spec_items(items: Sequence[SpecItem], index: CorpusIndex) -> list[str]:
    """Cross-check spec items against a corpus; returns problem strings."""
    problems = []
    for item in items:
        if item.assembly_id not in index:
            problems.append(f"{item.spec_id}: unknown assembly {item.assembly_id}")
            continue
        known = set(index.get(item.assembly_id).part_filenames())
        for name in item.gt_filenames:
            if name not in known:
                problems.append(f"{item.spec_id}: gt filename {name!r} not in assembly")
    return problems
