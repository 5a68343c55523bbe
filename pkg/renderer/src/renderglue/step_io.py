"""Lightweight Part 21 reading and writing for split/merge.

A masking pass pulls string literals into a table, comments are removed
by regex, and DATA statements are split on ';'. Good enough to cluster
entities by their #id reference graph and re-emit renumbered files; no
geometry semantics.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path


class StepReadError(ValueError):
    pass


@dataclass
class Entity:
    id: int
    keyword: str
    body: str  # masked statement text after '=' (placeholders for strings)

    def references(self) -> set[int]:
        refs = {int(m) for m in re.findall(r"#(\d+)", self.body)}
        refs.discard(self.id)
        return refs


@dataclass
class StepFile:
    entities: dict[int, Entity]
    strings: list[str]  # placeholder table, index -> literal text

    def restore(self, masked: str) -> str:
        """Replace placeholders with quoted string literals ('' re-escaped)."""

        def put(match: re.Match) -> str:
            literal = self.strings[int(match.group(1))]
            return "'" + literal.replace("'", "''") + "'"

        return re.sub("\x01(\\d+)\x01", put, masked)

    def first_string(self, entity: Entity) -> str | None:
        match = re.search("\x01(\\d+)\x01", entity.body)
        return self.strings[int(match.group(1))] if match else None


def _mask_strings(text: str) -> tuple[str, list[str]]:
    out: list[str] = []
    strings: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        if text[i] == "'":
            j = i + 1
            buf: list[str] = []
            while j < n:
                if text[j] == "'":
                    if j + 1 < n and text[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    break
                buf.append(text[j])
                j += 1
            if j >= n:
                raise StepReadError("unterminated string literal")
            strings.append("".join(buf))
            out.append(f"\x01{len(strings) - 1}\x01")
            i = j + 1
        else:
            out.append(text[i])
            i += 1
    return "".join(out), strings


_ENTITY = re.compile(r"^\s*#(\d+)\s*=\s*(.*)$", re.DOTALL)
_KEYWORD = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def read_step(path: str | Path) -> StepFile:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        text = raw.decode("latin-1")
    if "ISO-10303-21" not in text:
        raise StepReadError(f"{path}: not a Part 21 file")
    masked, strings = _mask_strings(text)
    masked = re.sub(r"/\*.*?\*/", " ", masked, flags=re.DOTALL)

    regions = re.findall(r"\bDATA\s*;(.*?)\bENDSEC\s*;", masked, flags=re.DOTALL)
    if "END-ISO-10303-21" not in masked:
        raise StepReadError(f"{path}: truncated (missing END-ISO-10303-21)")

    entities: dict[int, Entity] = {}
    for region in regions:
        for statement in region.split(";"):
            if not statement.strip():
                continue
            match = _ENTITY.match(statement)
            if not match:
                raise StepReadError(f"{path}: malformed statement {statement[:40]!r}")
            entity_id = int(match.group(1))
            body = match.group(2).strip()
            kw = _KEYWORD.search(body)
            keyword = kw.group(0).upper() if kw else "COMPLEX"
            if entity_id in entities:
                raise StepReadError(f"{path}: duplicate id #{entity_id}")
            entities[entity_id] = Entity(entity_id, keyword, body)
    return StepFile(entities, strings)


def renumber(body: str, mapping: dict[int, int]) -> str:
    return re.sub(r"#(\d+)", lambda m: f"#{mapping.get(int(m.group(1)), int(m.group(1)))}", body)


def write_step(
    path: str | Path,
    source: StepFile,
    entity_ids: list[int],
    name: str,
    id_offsets: dict[int, int] | None = None,
) -> None:
    """Emit the chosen entities renumbered 1..n, deterministic header."""
    ordered = sorted(entity_ids)
    mapping = {old: new for new, old in enumerate(ordered, start=1)}
    lines = [
        "ISO-10303-21;",
        "HEADER;",
        "FILE_DESCRIPTION((''),'2;1');",
        f"FILE_NAME('{name}','',(''),(''),'renderglue','','');",
        "FILE_SCHEMA(('AUTOMOTIVE_DESIGN'));",
        "ENDSEC;",
        "DATA;",
    ]
    for old in ordered:
        entity = source.entities[old]
        body = source.restore(renumber(entity.body, mapping))
        lines.append(f"#{mapping[old]}={body};")
    lines += ["ENDSEC;", "END-ISO-10303-21;"]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def components(step: StepFile) -> list[set[int]]:
    """Undirected connected components of the #id reference graph."""
    neighbors: dict[int, set[int]] = {eid: set() for eid in step.entities}
    for entity in step.entities.values():
        for ref in entity.references():
            if ref in neighbors:
                neighbors[entity.id].add(ref)
                neighbors[ref].add(entity.id)
    seen: set[int] = set()
    out: list[set[int]] = []
    for eid in sorted(step.entities):
        if eid in seen:
            continue
        stack = [eid]
        component: set[int] = set()
        while stack:
            current = stack.pop()
            if current in component:
                continue
            component.add(current)
            stack.extend(neighbors[current] - component)
        seen |= component
        out.append(component)
    return out


def cartesian_points(step: StepFile) -> list[tuple[float, float, float]]:
    """All CARTESIAN_POINT coordinates, in ascending entity id order."""
    points = []
    for eid in sorted(step.entities):
        entity = step.entities[eid]
        if entity.keyword != "CARTESIAN_POINT":
            continue
        triple = re.search(
            r"\(\s*([-+0-9.Ee]+)\s*,\s*([-+0-9.Ee]+)\s*,\s*([-+0-9.Ee]+)\s*\)",
            entity.body,
        )
        if triple:
            points.append(tuple(float(triple.group(i)) for i in (1, 2, 3)))
    return points
