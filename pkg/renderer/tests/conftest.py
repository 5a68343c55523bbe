"""Fixture builders: minimal but structurally realistic part-level STEP
files (product chain + wireframe points)."""

from __future__ import annotations

import struct
from pathlib import Path


def part_step_text(label: str, points: list[tuple[float, float, float]]) -> str:
    """One part: PRODUCT chain plus a wireframe point set, fully linked."""
    lines = [
        "ISO-10303-21;",
        "HEADER;",
        "FILE_DESCRIPTION((''),'2;1');",
        f"FILE_NAME('{label}','',(''),(''),'fixture','','');",
        "FILE_SCHEMA(('AUTOMOTIVE_DESIGN'));",
        "ENDSEC;",
        "DATA;",
        "#1=APPLICATION_CONTEXT('design');",
        "#2=PRODUCT_CONTEXT('',#1,'mechanical');",
        f"#3=PRODUCT('{label}','{label}','',(#2));",
        f"#4=PRODUCT_DEFINITION_FORMATION('','',#3);",
        "#5=PRODUCT_DEFINITION_CONTEXT('part definition',#1,'design');",
        "#6=PRODUCT_DEFINITION('design','',#4,#5);",
        "#7=PRODUCT_DEFINITION_SHAPE('','',#6);",
    ]
    eid = 8
    point_ids = []
    for x, y, z in points:
        lines.append(f"#{eid}=CARTESIAN_POINT('',({x:.1f},{y:.1f},{z:.1f}));")
        point_ids.append(eid)
        eid += 1
    refs = ",".join(f"#{i}" for i in point_ids)
    lines += [
        f"#{eid}=GEOMETRIC_CURVE_SET('',({refs}));",
        f"#{eid + 1}=(GEOMETRIC_REPRESENTATION_CONTEXT(3)"
        "GLOBAL_UNCERTAINTY_ASSIGNED_CONTEXT(())GLOBAL_UNIT_ASSIGNED_CONTEXT(()));",
        f"#{eid + 2}=GEOMETRICALLY_BOUNDED_WIREFRAME_SHAPE_REPRESENTATION('',(#{eid}),#{eid + 1});",
        f"#{eid + 3}=SHAPE_DEFINITION_REPRESENTATION(#7,#{eid + 2});",
        "ENDSEC;",
        "END-ISO-10303-21;",
    ]
    return "\n".join(lines) + "\n"


def write_part(path: Path, label: str, points: list[tuple[float, float, float]]) -> Path:
    path.write_text(part_step_text(label, points), encoding="utf-8")
    return path


def png_size(data: bytes) -> tuple[int, int]:
    width, height = struct.unpack_from(">II", data, 16)
    return width, height
