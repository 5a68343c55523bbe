"""Subprocess-invoked CAD tooling.

Splits an assembly STEP file into part-level STEP files, merges selected
part files back into one STEP, and renders STEP geometry to PNG. Uses the
FreeCAD / pythonocc kernels when importable; otherwise a structural
Part 21 fallback (reference-graph clustering, id renumbering, isometric
point-cloud rendering) keeps the subprocess contract working everywhere.

All commands communicate via exit code plus a single JSON line on stdout:
exit 0 success, 2 bad input, 3 render failure.
"""

__version__ = "0.1.0"
