"""Shared fixtures: deterministic tiny PNGs, corpus trees, STEP fixture
text, and a deterministic fake vision-language model that can drive every
pipeline stage offline."""

from __future__ import annotations

import hashlib
import re
import struct
import sys
import zlib
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from partscout.gateway import ImageBlock, TextBlock, split_data_url
from partscout.prompts import FEWSHOT_TRANSITION


def _chunk(tag: bytes, data: bytes) -> bytes:
    return (
        struct.pack(">I", len(data))
        + tag
        + data
        + struct.pack(">I", zlib.crc32(tag + data))
    )


def write_png(path: Path, seed: str, size: int = 4) -> Path:
    """Valid RGB PNG whose pixel bytes derive from ``seed``."""
    digest = hashlib.sha256(seed.encode("utf-8")).digest()
    row = (digest * (size * 3 // len(digest) + 1))[: size * 3]
    raw = b"".join(b"\x00" + row for _ in range(size))
    ihdr = struct.pack(">IIBBBBB", size, size, 8, 2, 0, 0, 0)
    payload = (
        b"\x89PNG\r\n\x1a\n"
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(raw))
        + _chunk(b"IEND", b"")
    )
    path.write_bytes(payload)
    return path


def png_size(data: bytes) -> tuple[int, int]:
    width, height = struct.unpack_from(">II", data, 16)
    return width, height


def step_assembly_text(names: list[str]) -> str:
    """Small well-formed Part 21 file with one PRODUCT per name."""
    lines = [
        "ISO-10303-21;",
        "HEADER;",
        "FILE_DESCRIPTION(('fixture assembly'),'2;1');",
        "FILE_NAME('assembly','2024-01-01T00:00:00',(''),(''),'','','');",
        "FILE_SCHEMA(('AUTOMOTIVE_DESIGN'));",
        "ENDSEC;",
        "DATA;",
        "#2=APPLICATION_CONTEXT('core data for automotive mechanical design processes');",
    ]
    eid = 10
    for name in names:
        lines.append(f"#{eid}=PRODUCT('{name}','{name}','',(#2));")
        eid += 10
    lines += ["ENDSEC;", "END-ISO-10303-21;"]
    return "\n".join(lines) + "\n"


def build_corpus(root: Path, assemblies: dict[str, int], with_step: bool = False) -> Path:
    """Corpus tree: one directory per assembly with assembly.png and
    part<i>.png files (plus optional STEP files)."""
    root.mkdir(parents=True, exist_ok=True)
    for assembly_id, count in assemblies.items():
        directory = root / assembly_id
        directory.mkdir(parents=True, exist_ok=True)
        write_png(directory / "assembly.png", seed=assembly_id)
        names = []
        for i in range(1, count + 1):
            write_png(directory / f"part{i}.png", seed=f"{assembly_id}/part{i}")
            names.append(f"part{i}")
            if with_step:
                (directory / f"part{i}.step").write_text(
                    step_assembly_text([f"part{i}"]), encoding="utf-8"
                )
        if with_step:
            (directory / "assembly.step").write_text(
                step_assembly_text(names), encoding="utf-8"
            )
    return root


def fake_description_for_bytes(payload: bytes) -> str:
    digest = hashlib.sha256(payload).hexdigest()[:8]
    return f"A machined bracket variant {digest}"


def fake_description_for_file(path: Path) -> str:
    return fake_description_for_bytes(Path(path).read_bytes())


# Spec sentences carrying this token make the fake model answer a strict
# subset of the ground truth (a wrong baseline prediction).
HARD_MARKER = "[hard]"


def spec_sentence(desc_a: str, desc_b: str, hard: bool = False) -> str:
    marker = f" {HARD_MARKER}" if hard else ""
    return f"The {desc_a} must sit flush against the {desc_b}.{marker}"


def _text_of(request) -> str:
    return "\n".join(
        block.text for block in request.user_blocks if isinstance(block, TextBlock)
    )


def _between(text: str, start: str, end: str) -> str:
    head = text.index(start) + len(start)
    return text[head : text.index(end, head)]


class FakeVlm:
    """Deterministic model: descriptions from image digests, retrieval by
    matching description strings inside the specification sentence, and
    corrections that land exactly on the provided ground truth."""

    def __init__(self) -> None:
        self.calls = 0

    def __call__(self, request) -> str:
        self.calls += 1
        text = _text_of(request)
        if "Correct ground-truth filenames:" in text:
            return self._correct(text)
        if "Generate one specification sentence" in text:
            return self._specgen(text)
        if "Your output should be a single noun phrase" in text:
            return self._describe(request)
        if "(see the attached part images" in text:
            return self._retrieve_image_only(request)
        if "Your task:" in text and "Specification:" in text:
            return self._retrieve(text)
        raise AssertionError(f"unrecognized prompt: {text[:80]!r}")

    def _correct(self, text: str) -> str:
        line = next(
            l for l in text.splitlines() if l.startswith("Correct ground-truth filenames:")
        )
        gt = line.split(":", 1)[1].strip()
        return (
            "I follow the earlier reasoning step by step.\n"
            "But, wait, let's pause and examine this more carefully. "
            "The descriptions actually point to different parts.\n"
            "Working through each description again, the matching parts are clear.\n"
            "Final Answer:\n" + gt
        )

    def _describe(self, request) -> str:
        images = [b for b in request.user_blocks if isinstance(b, ImageBlock)]
        assert len(images) == 2, "stage 1 must attach assembly then part"
        payload = split_data_url(images[-1].data_url)[1]
        import base64

        return fake_description_for_bytes(base64.b64decode(payload))

    def _specgen(self, text: str) -> str:
        section = _between(text, "Part descriptions:\n\n", "\n\nYour task:")
        descriptions = [
            re.sub(r"^\d+\.\s*", "", line).strip()
            for line in section.splitlines()
            if line.strip()
        ]
        assert len(descriptions) >= 2
        first, second = descriptions[0], descriptions[1]
        return f"{first};{second}\n{spec_sentence(first, second)}"

    def _answer(self, chosen: list[str], note: str) -> str:
        return (
            "Chain-of-Thought:\n\n"
            f"I compare each part description against the specification. {note}\n\n"
            "Final Answer:\n" + ";".join(chosen)
        )

    def _retrieve(self, text: str) -> str:
        if FEWSHOT_TRANSITION in text:
            text = text.split(FEWSHOT_TRANSITION, 1)[1]
        section = _between(text, "Part descriptions:\n", "\n\nSpecification:")
        sentence = _between(text, "Specification:\n", "\n\nYour task:")
        pairs = []
        for line in section.splitlines():
            if ": " in line:
                name, desc = line.split(": ", 1)
                pairs.append((name.strip(), desc.strip()))
        chosen = [name for name, desc in pairs if desc and desc in sentence]
        if not chosen:
            chosen = [name for name, _ in pairs[:2]]
        if HARD_MARKER in sentence:
            chosen = chosen[:1]
        return self._answer(chosen, "The matching descriptions identify the parts.")

    def _retrieve_image_only(self, request) -> str:
        names = [
            block.text.rstrip(":")
            for block in request.user_blocks
            if isinstance(block, TextBlock) and re.fullmatch(r"\S+:", block.text)
        ]
        return self._answer(names[:2], "I inspect the attached part images.")


@pytest.fixture
def fake_vlm() -> FakeVlm:
    return FakeVlm()
