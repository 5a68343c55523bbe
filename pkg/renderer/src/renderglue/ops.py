"""split / merge / render operations.

Each tries the CAD kernel first (FreeCAD for split/merge, pythonocc for
rendering) and falls back to the structural Part 21 implementation when
the kernel is not importable. The fallback preserves the subprocess
contract: split yields one STEP per PRODUCT cluster plus an inventory,
merge concatenates renumbered entity sets, render projects the model's
points isometrically onto a fixed-size canvas.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from . import step_io
from .png import write_rgb

INVENTORY_NAME = "inventory.json"


class CommandError(Exception):
    """Operation failed; ``exit_code`` drives the process status."""

    def __init__(self, message: str, exit_code: int) -> None:
        super().__init__(message)
        self.exit_code = exit_code


def _kernel_available(module: str) -> bool:
    try:
        __import__(module)
        return True
    except ImportError:
        return False


def _split_with_freecad(input_path: Path, out_dir: Path) -> list[dict] | None:
    if not _kernel_available("FreeCAD"):
        return None
    import FreeCAD  # noqa: F401
    import Import

    doc = FreeCAD.newDocument("split")
    try:
        Import.insert(str(input_path), doc.Name)
        inventory = []
        for i, obj in enumerate(doc.Objects, start=1):
            if not hasattr(obj, "Shape"):
                continue
            filename = f"part_{i:04d}.step"
            Import.export([obj], str(out_dir / filename))
            inventory.append({"filename": filename, "label": obj.Label})
        return inventory
    finally:
        FreeCAD.closeDocument(doc.Name)


def _merge_with_freecad(inputs: list[Path], output: Path) -> bool:
    if not _kernel_available("FreeCAD"):
        return False
    import FreeCAD  # noqa: F401
    import Import

    doc = FreeCAD.newDocument("merge")
    try:
        for path in inputs:
            Import.insert(str(path), doc.Name)
        Import.export(doc.Objects, str(output))
        return True
    finally:
        FreeCAD.closeDocument(doc.Name)


def _render_with_pythonocc(input_path: Path, output: Path, size: tuple[int, int]) -> bool:
    if not _kernel_available("OCC"):
        return False
    from OCC.Core.STEPControl import STEPControl_Reader
    from OCC.Display.OffscreenRenderer import Viewer3d

    reader = STEPControl_Reader()
    reader.ReadFile(str(input_path))
    reader.TransferRoots()
    shape = reader.OneShape()
    viewer = Viewer3d()
    viewer.Create()
    viewer.SetModeShaded()
    viewer.SetSize(*size)
    viewer.View_Iso()
    viewer.DisplayShape(shape, update=True)
    viewer.View.Dump(str(output))
    return True


def split(input_path: Path, out_dir: Path) -> list[dict]:
    """One STEP file per part; returns (and writes) the inventory."""
    if not input_path.exists():
        raise CommandError(f"input not found: {input_path}", 2)
    out_dir.mkdir(parents=True, exist_ok=True)

    inventory = _split_with_freecad(input_path, out_dir)
    if inventory is None:
        try:
            model = step_io.read_step(input_path)
        except step_io.StepReadError as err:
            raise CommandError(str(err), 2) from err
        inventory = []
        index = 0
        for component in step_io.components(model):
            products = sorted(
                eid for eid in component if model.entities[eid].keyword == "PRODUCT"
            )
            if not products:
                continue
            index += 1
            label = model.first_string(model.entities[products[0]]) or f"part {index}"
            filename = f"part_{index:04d}.step"
            step_io.write_step(out_dir / filename, model, sorted(component), label)
            inventory.append({"filename": filename, "label": label})

    (out_dir / INVENTORY_NAME).write_text(
        json.dumps(inventory, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return inventory


def merge(inputs: list[Path], output: Path) -> int:
    """Single STEP containing all listed parts; returns the entity count."""
    for path in inputs:
        if not path.exists():
            raise CommandError(f"part file not found: {path}", 2)
    if not inputs:
        raise CommandError("merge needs at least one part path", 2)

    output.parent.mkdir(parents=True, exist_ok=True)
    if _merge_with_freecad(inputs, output):
        return len(inputs)

    merged_entities: dict[int, step_io.Entity] = {}
    merged_strings: list[str] = []
    next_id = 1
    import re

    for path in inputs:
        try:
            model = step_io.read_step(path)
        except step_io.StepReadError as err:
            raise CommandError(str(err), 2) from err
        id_map = {}
        for old in sorted(model.entities):
            id_map[old] = next_id
            next_id += 1
        string_offset = len(merged_strings)
        merged_strings.extend(model.strings)
        for old in sorted(model.entities):
            entity = model.entities[old]
            body = step_io.renumber(entity.body, id_map)
            body = re.sub(
                "\x01(\\d+)\x01",
                lambda m: f"\x01{int(m.group(1)) + string_offset}\x01",
                body,
            )
            merged_entities[id_map[old]] = step_io.Entity(id_map[old], entity.keyword, body)

    combined = step_io.StepFile(merged_entities, merged_strings)
    step_io.write_step(output, combined, sorted(merged_entities), output.stem)
    return len(merged_entities)


_BACKGROUND = (245, 246, 248)
_FOREGROUND = (40, 60, 90)


def _isometric(point: tuple[float, float, float]) -> tuple[float, float]:
    x, y, z = point
    cos30 = math.cos(math.pi / 6)
    sin30 = math.sin(math.pi / 6)
    return ((x - z) * cos30, y + (x + z) * sin30)


def render(input_path: Path, output: Path, size: tuple[int, int]) -> tuple[int, int]:
    """PNG at the requested size, deterministic isometric camera."""
    width, height = size
    if width < 1 or height < 1:
        raise CommandError(f"bad image size {size}", 3)
    if not input_path.exists():
        raise CommandError(f"input not found: {input_path}", 3)

    output.parent.mkdir(parents=True, exist_ok=True)
    if _render_with_pythonocc(input_path, output, size):
        return size

    try:
        model = step_io.read_step(input_path)
    except step_io.StepReadError as err:
        raise CommandError(str(err), 3) from err

    projected = [_isometric(p) for p in step_io.cartesian_points(model)]
    pixels = bytearray()
    for _ in range(width * height):
        pixels.extend(_BACKGROUND)

    if projected:
        us = [u for u, _ in projected]
        vs = [v for _, v in projected]
        span_u = max(us) - min(us) or 1.0
        span_v = max(vs) - min(vs) or 1.0
        margin = 0.1

        def to_px(u: float, v: float) -> tuple[int, int]:
            fx = margin + (1 - 2 * margin) * (u - min(us)) / span_u
            fy = margin + (1 - 2 * margin) * (v - min(vs)) / span_v
            return (
                min(width - 1, max(0, round(fx * (width - 1)))),
                min(height - 1, max(0, round((1 - fy) * (height - 1)))),
            )

        def plot(px: int, py: int) -> None:
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    x, y = px + dx, py + dy
                    if 0 <= x < width and 0 <= y < height:
                        base = (y * width + x) * 3
                        pixels[base : base + 3] = bytes(_FOREGROUND)

        def line(a: tuple[int, int], b: tuple[int, int]) -> None:
            steps = max(abs(b[0] - a[0]), abs(b[1] - a[1]), 1)
            for i in range(steps + 1):
                plot(
                    round(a[0] + (b[0] - a[0]) * i / steps),
                    round(a[1] + (b[1] - a[1]) * i / steps),
                )

        coords = [to_px(u, v) for u, v in projected]
        for point in coords:
            plot(*point)
        for a, b in zip(coords, coords[1:]):
            line(a, b)

    write_rgb(output, width, height, pixels)
    return size
