"""Manifest-driven entry point.

Invocation: ``renderglue --manifest <path>``. The manifest is a JSON
object {command, inputs, output, image_size?}; the result is one JSON
line on stdout. Exit codes: 0 success, 2 bad input, 3 render failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .ops import CommandError, merge, render, split


def _fail(message: str, code: int) -> int:
    print(json.dumps({"ok": False, "error": message}))
    return code


def run_manifest(manifest_path: Path) -> int:
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        return _fail(f"unreadable manifest: {err}", 2)

    command = manifest.get("command")
    inputs = [Path(p) for p in manifest.get("inputs", [])]
    output = manifest.get("output")
    if not command or output is None:
        return _fail("manifest needs 'command' and 'output'", 2)
    output = Path(output)

    try:
        if command == "split":
            if len(inputs) != 1:
                return _fail("split takes exactly one input", 2)
            inventory = split(inputs[0], output)
            print(
                json.dumps(
                    {"ok": True, "command": "split", "output": str(output),
                     "count": len(inventory), "parts": inventory},
                    sort_keys=True,
                )
            )
            return 0
        if command == "merge":
            entity_count = merge(inputs, output)
            print(
                json.dumps(
                    {"ok": True, "command": "merge", "output": str(output),
                     "inputs": len(inputs), "entities": entity_count},
                    sort_keys=True,
                )
            )
            return 0
        if command == "render":
            if len(inputs) != 1:
                return _fail("render takes exactly one input", 3)
            size = manifest.get("image_size", [800, 800])
            width, height = render(inputs[0], output, (int(size[0]), int(size[1])))
            print(
                json.dumps(
                    {"ok": True, "command": "render", "output": str(output),
                     "width": width, "height": height},
                    sort_keys=True,
                )
            )
            return 0
        return _fail(f"unknown command {command!r}", 2)
    except CommandError as err:
        return _fail(str(err), err.exit_code)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="renderglue", description=__doc__)
    parser.add_argument("--manifest", required=True)
    args = parser.parse_args(argv)
    return run_manifest(Path(args.manifest))


if __name__ == "__main__":
    sys.exit(main())
