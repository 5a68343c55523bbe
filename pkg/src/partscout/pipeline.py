"""Two-stage retrieval pipeline.

Stage 1 turns (assembly image, part image) pairs into concise part
descriptions; Stage 2 selects the parts matching a specification via
chain-of-thought output and strict final-answer parsing. The image-only
baseline (part images attached instead of description lines) reuses the
same request shape and parser.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .corpus import (
    DESCRIPTIONS_NAME,
    AssemblyRecord,
    SpecItem,
    save_description_map,
)
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
from .prompts import (
    ASSEMBLY_IMAGE_HEADER,
    FEWSHOT_TRANSITION,
    PromptTemplate,
    description_lines,
    template_or_default,
)

PARSE_OK = "ok"
PARSE_RECOVERED = "recovered"
PARSE_FAILED = "failed"

# Leading decoration tolerated before the marker: whitespace, markdown
# emphasis/heading/list/quote characters.
_MARKER_RE = re.compile(r"^[\s>#*\-`_]*final\s*answer\b\s*(:)?\s*(.*)$", re.IGNORECASE)
_TOKEN_RE = re.compile(r"[\w.\-]+\Z")
# underscores and hyphens are legitimate filename characters, never stripped
_STRIP_CHARS = " \t'\"`*()[]{}"
_TRAILING_PUNCT = ".,;:!?"


@dataclass(frozen=True)
class AnswerParse:
    filenames: tuple[str, ...]
    status: str


@dataclass
class RetrievalResult:
    """Outcome of one Stage-2 (or RAG) query."""

    spec_id: str
    predicted: tuple[str, ...]
    cot_text: str
    parse_status: str
    warnings: tuple[str, ...] = ()
    exemplar_ids: tuple[str, ...] = ()
    transport_error: Optional[str] = None
    attempt_count: int = 0

    def to_json(self) -> dict:
        record = {
            "spec_id": self.spec_id,
            "predicted": list(self.predicted),
            "cot_text": self.cot_text,
            "parse_status": self.parse_status,
            "warnings": list(self.warnings),
            "exemplar_ids": list(self.exemplar_ids),
            "attempt_count": self.attempt_count,
        }
        if self.transport_error is not None:
            record["transport_error"] = self.transport_error
        return record

    @classmethod
    def from_json(cls, record: dict) -> "RetrievalResult":
        return cls(
            spec_id=record["spec_id"],
            predicted=tuple(record.get("predicted", ())),
            cot_text=record.get("cot_text", ""),
            parse_status=record.get("parse_status", PARSE_FAILED),
            warnings=tuple(record.get("warnings", ())),
            exemplar_ids=tuple(record.get("exemplar_ids", ())),
            transport_error=record.get("transport_error"),
            attempt_count=record.get("attempt_count", 0),
        )


def format_final_answer(filenames: Sequence[str]) -> str:
    """Canonical answer footer: 'Final Answer:' then semicolon-joined names."""
    return "Final Answer:\n" + ";".join(filenames)


def _clean_token(raw: str) -> str:
    token = raw.strip(_STRIP_CHARS)
    return token.rstrip(_TRAILING_PUNCT).strip(_STRIP_CHARS)


def _tokens_from(text: str) -> list[str]:
    seen = set()
    out = []
    for piece in text.split(";"):
        token = _clean_token(piece)
        if token and token not in seen:
            seen.add(token)
            out.append(token)
    return out


def parse_final_answer(text: str) -> AnswerParse:
    """Extract the filename set from a chain-of-thought answer.

    The last line starting with 'Final Answer:' wins; names come from the
    remainder of that line or, when the remainder is empty, from the next
    non-empty line (the format dictated by the retrieval prompt's example
    output). Extractions needing extra salvage (no colon, junk lines to
    skip, tokens that are not filename-shaped) are flagged ``recovered``;
    no marker at all is ``failed``.
    """
    lines = text.splitlines()
    marker_index = None
    marker_match = None
    for i, line in enumerate(lines):
        match = _MARKER_RE.match(line)
        if match:
            marker_index = i
            marker_match = match
    if marker_index is None or marker_match is None:
        return AnswerParse((), PARSE_FAILED)

    canonical = marker_match.group(1) == ":"
    tokens = _tokens_from(marker_match.group(2))
    skipped_junk = False
    if not tokens:
        nonempty_seen = 0
        for line in lines[marker_index + 1 :]:
            if not line.strip():
                continue
            nonempty_seen += 1
            tokens = _tokens_from(line)
            if tokens:
                if nonempty_seen > 1:
                    skipped_junk = True
                break
            skipped_junk = True
            if nonempty_seen >= 3:
                break
    if not tokens:
        return AnswerParse((), PARSE_FAILED)

    shapely = all(_TOKEN_RE.match(token) for token in tokens)
    if canonical and not skipped_junk and shapely:
        return AnswerParse(tuple(tokens), PARSE_OK)
    return AnswerParse(tuple(tokens), PARSE_RECOVERED)


def build_description_prompt(
    assembly_image: Union[str, Path],
    part_image: Union[str, Path],
    model_name: str,
    template: Optional[PromptTemplate] = None,
    temperature: float = 0.0,
) -> ChatRequest:
    """Stage-1 request: instruction text plus exactly two image attachments,
    assembly first, part second."""
    instruction = template_or_default(template, "part_description").render()
    return ChatRequest(
        model_name=model_name,
        user_blocks=(
            TextBlock(instruction),
            ImageBlock(encode_image_attachment(assembly_image)),
            ImageBlock(encode_image_attachment(part_image)),
        ),
        temperature=temperature,
    )


def normalize_description(text: str) -> str:
    """Trim whitespace and strip one trailing period."""
    return text.strip().removesuffix(".").strip()


@dataclass
class DescribeReport:
    """Stage-1 output for one assembly: the map plus per-part failures."""

    assembly_id: str
    descriptions: dict[str, str] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return not self.failures


def describe_parts(
    assembly: AssemblyRecord,
    backend: Backend,
    model_name: str,
    worker_limit: int = 4,
    policy: RetryPolicy = RetryPolicy(),
    template: Optional[PromptTemplate] = None,
    out_path: Optional[Union[str, Path]] = None,
    clock=None,
) -> DescribeReport:
    """Generate one description per part and persist descriptions.json.

    A part whose call fails after retries (or returns an empty phrase) is
    recorded in ``failures``; the map is written partial.
    """

    def describe_one(part) -> str:
        request = build_description_prompt(
            assembly.assembly_image, part.image, model_name, template
        )
        phrase = normalize_description(
            send_chat(request, backend, policy, clock=clock).text
        )
        if not phrase:
            raise GatewayError(f"empty description for {part.filename}")
        return phrase

    report = DescribeReport(assembly.assembly_id)
    outcomes = parallel_map(assembly.parts, worker_limit, describe_one)
    for part, outcome in zip(assembly.parts, outcomes):
        if outcome.ok:
            report.descriptions[part.filename] = outcome.value
        else:
            report.failures[part.filename] = str(outcome.error)

    target = Path(out_path) if out_path else assembly.directory / DESCRIPTIONS_NAME
    save_description_map(report.descriptions, target)
    return report


def build_retrieval_prompt(
    assembly_image: Union[str, Path],
    desc_map: Optional[dict[str, str]],
    specification: str,
    model_name: str,
    fewshot_block: Optional[str] = None,
    image_only_parts: Optional[Sequence] = None,
    template: Optional[PromptTemplate] = None,
    temperature: float = 0.0,
) -> ChatRequest:
    """Stage-2 request: [few-shot block] + assembly image + description
    lines + specification + task instructions with the example output.

    With ``image_only_parts`` set, per-part images stand in for the
    description lines (the single-step baseline); the parser downstream is
    unchanged.
    """
    if not specification.strip():
        raise ValueError("specification must be non-empty")
    image_only = image_only_parts is not None
    if not image_only and not desc_map:
        raise ValueError("desc_map must be non-empty")

    blocks: list = []
    header = ASSEMBLY_IMAGE_HEADER
    if fewshot_block:
        header = f"{fewshot_block}\n\n{FEWSHOT_TRANSITION}\n\n{header}"
    blocks.append(TextBlock(header))
    blocks.append(ImageBlock(encode_image_attachment(assembly_image)))

    task = template_or_default(template, "retrieval_task")
    if image_only:
        for part in image_only_parts:
            blocks.append(TextBlock(f"{part.filename}:"))
            blocks.append(ImageBlock(encode_image_attachment(part.image)))
        rendered = task.render(
            desc_lines="(see the attached part images; the filename precedes each image)",
            specification=specification,
        )
    else:
        rendered = task.render(
            desc_lines=description_lines(desc_map), specification=specification
        )
    blocks.append(TextBlock(rendered))
    return ChatRequest(model_name=model_name, user_blocks=tuple(blocks), temperature=temperature)


def retrieve_parts(
    assembly: AssemblyRecord,
    desc_map: Optional[dict[str, str]],
    spec_item: SpecItem,
    backend: Backend,
    model_name: str,
    fewshot_block: Optional[str] = None,
    policy: RetryPolicy = RetryPolicy(),
    image_only: bool = False,
    template: Optional[PromptTemplate] = None,
    clock=None,
) -> RetrievalResult:
    """Stage 2 for one spec item: prompt, call, parse, filter.

    Predicted names outside the known filename set are dropped and recorded
    as hallucinated-name warnings; transport exhaustion yields a failed
    result instead of raising.
    """
    request = build_retrieval_prompt(
        assembly.assembly_image,
        desc_map,
        spec_item.specification,
        model_name,
        fewshot_block=fewshot_block,
        image_only_parts=assembly.parts if image_only else None,
        template=template,
    )
    try:
        response = send_chat(request, backend, policy, clock=clock)
    except GatewayError as err:
        return RetrievalResult(
            spec_id=spec_item.spec_id,
            predicted=(),
            cot_text="",
            parse_status=PARSE_FAILED,
            transport_error=str(err),
        )

    parsed = parse_final_answer(response.text)
    known = set(desc_map) if desc_map and not image_only else set(assembly.part_filenames())
    kept = tuple(name for name in parsed.filenames if name in known)
    warnings = tuple(
        f"hallucinated name: {name}" for name in parsed.filenames if name not in known
    )
    status = parsed.status
    if status == PARSE_OK and not kept:
        status = PARSE_RECOVERED  # filtering emptied the answer; 'ok' implies non-empty
    return RetrievalResult(
        spec_id=spec_item.spec_id,
        predicted=kept,
        cot_text=response.text,
        parse_status=status,
        warnings=warnings,
        attempt_count=response.attempt_count,
    )


def save_results(results: Sequence[RetrievalResult], path: Union[str, Path]) -> None:
    ordered = sorted(results, key=lambda r: r.spec_id)
    lines = [json.dumps(r.to_json(), sort_keys=True, ensure_ascii=False) for r in ordered]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_results(path: Union[str, Path]) -> list[RetrievalResult]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(RetrievalResult.from_json(json.loads(line)))
    return out
