"""Specification-driven part retrieval for multi-part CAD assemblies.

Two-stage vision-language retrieval (per-part descriptions, then
specification-aware selection with chain-of-thought output), an error
notebook of corrected reasoning trajectories built from graded failures,
retrieval-augmented few-shot inference over that notebook, and an
evaluation harness with part-count-bucketed accuracy reports.
"""

__version__ = "0.1.0"
