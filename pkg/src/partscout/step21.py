"""Minimal ISO 10303-21 (STEP) exchange-file reader.

Parses the clear-text encoding far enough to inventory entity instances
and pull part names out of PRODUCT records. Geometry is never evaluated;
unknown keywords and complex (multi-keyword) instances are kept as raw
text so real-world files still parse.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Union

_KEYWORD_RE = re.compile(r"!?[A-Za-z][A-Za-z0-9_]*")
_INSTANCE_RE = re.compile(r"#(\d+)\s*=\s*(.*)$", re.DOTALL)

# Sections other than HEADER/DATA defined by later editions of Part 21;
# their contents are skipped, not modeled.
_SKIPPABLE_SECTIONS = {"ANCHOR", "REFERENCE", "SIGNATURE"}


class StepError(ValueError):
    """Malformed STEP input. ``offset`` is a character position."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class StepLexicalError(StepError):
    """Unterminated string or comment."""


class StepSyntaxError(StepError):
    """Token stream does not follow the Part 21 grammar."""


class StepStructuralError(StepError):
    """Grammar-level fine, but instance structure is invalid (e.g. duplicate #id)."""


class StepTruncationError(StepError):
    """Input ended before END-ISO-10303-21."""


@dataclass(frozen=True)
class HeaderRecord:
    """One HEADER-section record, argument text kept raw."""

    name: str
    args: str


@dataclass(frozen=True)
class EntityRecord:
    """One DATA-section instance.

    ``args`` is the raw argument text (complex instances keep the whole
    right-hand side); ``parsed_strings`` holds the quoted-string arguments
    in order, with the '' escape resolved.
    """

    id: int
    keyword: str
    args: str
    parsed_strings: tuple[str, ...]


@dataclass(frozen=True)
class StepModel:
    header: tuple[HeaderRecord, ...]
    entities: Mapping[int, EntityRecord]


class _Scanner:
    """Character scanner over the exchange text; comments are skipped,
    strings pass through verbatim."""

    def __init__(self, text: str) -> None:
        self.text = text
        self.pos = 0
        self.n = len(text)

    def skip_blank(self) -> None:
        text = self.text
        while self.pos < self.n:
            ch = text[self.pos]
            if ch.isspace():
                self.pos += 1
                continue
            if ch == "/" and text.startswith("/*", self.pos):
                end = text.find("*/", self.pos + 2)
                if end < 0:
                    raise StepLexicalError("unterminated comment", self.pos)
                self.pos = end + 2
                continue
            break

    def at_end(self) -> bool:
        self.skip_blank()
        return self.pos >= self.n

    def read_statement(self) -> tuple[str, int]:
        """Collect one ';'-terminated statement (comments stripped)."""
        self.skip_blank()
        start = self.pos
        text = self.text
        out: list[str] = []
        while self.pos < self.n:
            ch = text[self.pos]
            if ch == ";":
                self.pos += 1
                return "".join(out).strip(), start
            if ch == "'":
                out.append(self._read_string_raw())
                continue
            if ch == "/" and text.startswith("/*", self.pos):
                end = text.find("*/", self.pos + 2)
                if end < 0:
                    raise StepLexicalError("unterminated comment", self.pos)
                self.pos = end + 2
                out.append(" ")
                continue
            out.append(ch)
            self.pos += 1
        raise StepTruncationError("input ended inside a statement", start)

    def _read_string_raw(self) -> str:
        """Read a ' ... ' literal including quotes; '' stays escaped."""
        start = self.pos
        text = self.text
        self.pos += 1
        while self.pos < self.n:
            if text[self.pos] == "'":
                if self.pos + 1 < self.n and text[self.pos + 1] == "'":
                    self.pos += 2
                    continue
                self.pos += 1
                return text[start : self.pos]
            self.pos += 1
        raise StepLexicalError("unterminated string", start)


def _decode(source: Union[str, bytes]) -> str:
    if isinstance(source, str):
        return source
    try:
        return source.decode("utf-8")
    except UnicodeDecodeError:
        # Legacy exports are frequently 8-bit; latin-1 never fails.
        return source.decode("latin-1")


def _extract_strings(argtext: str) -> tuple[str, ...]:
    out: list[str] = []
    i = 0
    n = len(argtext)
    while i < n:
        if argtext[i] == "'":
            j = i + 1
            buf: list[str] = []
            while j < n:
                c = argtext[j]
                if c == "'":
                    if j + 1 < n and argtext[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    break
                buf.append(c)
                j += 1
            out.append("".join(buf))
            i = j + 1
        else:
            i += 1
    return tuple(out)


def _parse_instance(stmt: str, offset: int) -> EntityRecord:
    match = _INSTANCE_RE.match(stmt)
    if not match:
        raise StepSyntaxError(f"expected '#id = ...' instance, got {stmt[:40]!r}", offset)
    instance_id = int(match.group(1))
    rhs = match.group(2).strip()
    if rhs.startswith("("):
        # Complex / external-mapping instance: keep raw, name it after the
        # first sub-keyword so inventories stay meaningful.
        inner = _KEYWORD_RE.search(rhs)
        if inner is None:
            raise StepSyntaxError("complex instance without a keyword", offset)
        keyword = inner.group(0).lstrip("!").upper()
        return EntityRecord(instance_id, keyword, rhs, _extract_strings(rhs))
    kw_match = _KEYWORD_RE.match(rhs)
    if kw_match is None:
        raise StepSyntaxError(f"missing keyword in instance #{instance_id}", offset)
    keyword = kw_match.group(0).lstrip("!").upper()
    rest = rhs[kw_match.end() :].strip()
    if not (rest.startswith("(") and rest.endswith(")")):
        raise StepSyntaxError(f"missing argument list in instance #{instance_id}", offset)
    args = rest[1:-1]
    return EntityRecord(instance_id, keyword, args, _extract_strings(args))


def _read_header_section(sc: _Scanner) -> list[HeaderRecord]:
    records: list[HeaderRecord] = []
    while True:
        if sc.at_end():
            raise StepTruncationError("HEADER section not closed", sc.pos)
        stmt, off = sc.read_statement()
        if stmt == "ENDSEC":
            return records
        kw_match = _KEYWORD_RE.match(stmt)
        if kw_match is None:
            raise StepSyntaxError(f"malformed header record {stmt[:40]!r}", off)
        name = kw_match.group(0).lstrip("!").upper()
        rest = stmt[kw_match.end() :].strip()
        if rest.startswith("(") and rest.endswith(")"):
            rest = rest[1:-1]
        records.append(HeaderRecord(name, rest))


def _read_data_section(sc: _Scanner, entities: dict[int, EntityRecord]) -> None:
    while True:
        if sc.at_end():
            raise StepTruncationError("DATA section not closed", sc.pos)
        stmt, off = sc.read_statement()
        if stmt == "ENDSEC":
            return
        record = _parse_instance(stmt, off)
        if record.id in entities:
            raise StepStructuralError(f"duplicate instance id #{record.id}", off)
        entities[record.id] = record


def _skip_section(sc: _Scanner) -> None:
    while True:
        if sc.at_end():
            raise StepTruncationError("section not closed", sc.pos)
        stmt, _ = sc.read_statement()
        if stmt == "ENDSEC":
            return


def parse_p21(source: Union[str, bytes]) -> StepModel:
    """Parse Part 21 clear text into a :class:`StepModel`.

    Accepts ASCII/UTF-8 text or bytes (latin-1 fallback). Raises a typed
    :class:`StepError` subclass on any malformed input; never anything else.
    """
    text = _decode(source)
    sc = _Scanner(text)
    if sc.at_end():
        raise StepTruncationError("empty input", 0)
    stmt, off = sc.read_statement()
    if stmt != "ISO-10303-21":
        raise StepSyntaxError("missing ISO-10303-21 marker", off)

    header: list[HeaderRecord] = []
    entities: dict[int, EntityRecord] = {}
    while True:
        if sc.at_end():
            raise StepTruncationError("missing END-ISO-10303-21", sc.pos)
        stmt, off = sc.read_statement()
        if stmt == "END-ISO-10303-21":
            break
        token = stmt.split("(", 1)[0].strip().upper()
        if token == "HEADER" and stmt.upper() == "HEADER":
            header.extend(_read_header_section(sc))
        elif token == "DATA":
            _read_data_section(sc, entities)
        elif token in _SKIPPABLE_SECTIONS:
            _skip_section(sc)
        else:
            raise StepSyntaxError(f"unexpected statement {stmt[:40]!r}", off)

    return StepModel(tuple(header), MappingProxyType(entities))


def list_parts(model: StepModel) -> list[str]:
    """First string argument of every PRODUCT instance, ascending-id order."""
    names: list[str] = []
    for eid in sorted(model.entities):
        record = model.entities[eid]
        if record.keyword == "PRODUCT" and record.parsed_strings:
            names.append(record.parsed_strings[0])
    return names


def part_count(model: StepModel) -> int:
    return len(list_parts(model))


def load_step(path: Union[str, Path]) -> StepModel:
    """Read and parse a .step/.stp file."""
    return parse_p21(Path(path).read_bytes())
