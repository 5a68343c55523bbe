"""Default prompt templates for every model-facing stage.

Each template is a :class:`PromptTemplate` with named ``{placeholder}``
slots; rendering is deterministic so request fingerprints are stable.
Templates can be overridden from plain-text files (one file per template
id) via :func:`load_template_dir`.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union


class PromptRenderError(ValueError):
    """A required placeholder was left unbound."""


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    text: str
    required: tuple[str, ...] = ()

    def placeholders(self) -> set[str]:
        names = set()
        for _, name, _, _ in string.Formatter().parse(self.text):
            if name:
                names.add(name)
        return names

    def render(self, **bindings: str) -> str:
        missing = self.placeholders() - set(bindings)
        if missing:
            raise PromptRenderError(
                f"template {self.template_id}: unbound placeholders {sorted(missing)}"
            )
        for name in self.required:
            if not bindings.get(name, "").strip():
                raise PromptRenderError(f"template {self.template_id}: {name} must be non-empty")
        return self.text.format(**bindings)


PART_DESCRIPTION = PromptTemplate(
    "part_description",
    """\
You are an expert mechanical engineer. Given Image 1 (the assembly) and Image 2 \
(an individual part from the assembly), please generate a concise and descriptive \
noun phrase (not a full sentence). The phrase should briefly describe the part's \
main shape and any key features, in a way that clearly distinguishes it from the \
other parts in the assembly. Avoid generic names like 'part' or 'component'. Be \
specific about the shape and any holes, slots, or functional features. Your output \
should be a single noun phrase.

For example:

- A conical mount with a forked top;
- A cylindrical pin;
- Two plates with each having holes;
- A flat round disk with three small holes;
- A rectangular bracket with two mounting slots.
""",
)


SPEC_GENERATION = PromptTemplate(
    "spec_generation",
    """\
You are an expert mechanical engineer.
Given an image of an assembled product (assembly) and a list of its part \
descriptions below:

Part descriptions:

{desc_list}

Your task:

1. Review the assembly image and the list of part descriptions.
2. Choose any two part descriptions that are most likely to have a direct \
physical, spatial, or functional relationship in the assembly (such as fit, \
mounting, alignment, or coupling).
3. Generate one specification sentence (inspection/check item) that describes \
the required relationship, fit, or assembly condition between these two parts, \
as would appear in a manufacturing or assembly checklist.
4. Your specification should be clear, specific, and professional, mentioning \
both selected part descriptions explicitly.
5. Output only one specification sentence. Do not explain your reasoning.
6. Output format: The selected two part descriptions (exactly as shown above, \
separated by a semicolon), then a line break, then the specification sentence.

For example, given descriptions like:

1. A cylindrical pin
2. A flat plate with holes

Output:

A cylindrical pin;A flat plate with holes
The cylindrical pin must be fully inserted into one of the holes on the flat plate.
""",
    required=("desc_list",),
)


COT_CORRECTION = PromptTemplate(
    "cot_correction",
    """\
You are an expert mechanical engineer with a sharp analytical mind. You are given \
the assembly image, the descriptions of all parts (each as 'filename: description'), \
the inspection specification, and a previous reasoning process (including its \
step-by-step thoughts and its Final Answer).

Part descriptions:
{desc_lines}

Specification:
{specification}

Previous reasoning:
<<<
{previous_reasoning}
>>>

Correct ground-truth filenames: {gt_list}

Your job:

1. Carefully read the previous reasoning step-by-step. Follow along and reproduce \
the steps until you encounter the first error or mistake.
2. Once you spot the first mistake, stop following the previous reasoning and use \
a natural transition phrase (such as: "But, wait, let's pause and examine this more \
carefully." or "Wait, something seems off. Let's pause and consider what we know so \
far.") to point out the error and correct it.
3. From that point on, continue the reasoning process in your own words, \
step-by-step, until you reach the correct answer (i.e., the filenames consistent \
with the correct ground-truth solution).
4. Do not mention "previous attempt" or "ground-truth solution" explicitly. Make \
your reasoning sound like a student discovering and correcting their own mistake \
in real time.
5. If the previous reasoning is already correct, simply reproduce the previous \
reasoning and the final answer as is.
6. End your output with a "Final Answer:" line followed by the filenames (from the \
keys above), separated by semicolons (;), with no extra words or punctuation.
""",
    required=("desc_lines", "specification", "previous_reasoning", "gt_list"),
)


RETRIEVAL_TASK = PromptTemplate(
    "retrieval_task",
    """\
Part descriptions:
{desc_lines}

Specification:
{specification}

Your task:

1. Think step by step (Chain-of-Thought) and explain how you identify the \
required part(s).
2. In the last line, write 'Final Answer:' followed by only the selected part \
filenames (from the keys above), separated by semicolons (;), with no extra \
words or punctuation.

Example output:

Chain-of-Thought:

First, I check the descriptions of all parts. Only part1.png and part2.png are \
described as cylindrical pins. Therefore, the required parts are part1.png and \
part2.png.

Final Answer:

part1.png;part2.png
""",
    required=("desc_lines", "specification"),
)

# Bridges the few-shot exemplar block into the main query.
FEWSHOT_TRANSITION = (
    "Now, for the following question, use the above reasoning as reference "
    "and answer step-by-step:"
)

ASSEMBLY_IMAGE_HEADER = "Assembly image:"

DEFAULT_TEMPLATES = {
    template.template_id: template
    for template in (PART_DESCRIPTION, SPEC_GENERATION, COT_CORRECTION, RETRIEVAL_TASK)
}


def load_template_dir(directory: Union[str, Path]) -> dict[str, PromptTemplate]:
    """Default templates with any ``<template_id>.txt`` override applied."""
    templates = dict(DEFAULT_TEMPLATES)
    directory = Path(directory)
    for template_id, default in DEFAULT_TEMPLATES.items():
        override = directory / f"{template_id}.txt"
        if override.exists():
            templates[template_id] = PromptTemplate(
                template_id, override.read_text(encoding="utf-8"), default.required
            )
    return templates


def description_lines(desc_map: dict[str, str]) -> str:
    """'filename: description' lines in map (corpus) order."""
    return "\n".join(f"{name}: {desc}" for name, desc in desc_map.items())


def numbered_descriptions(desc_map: dict[str, str]) -> str:
    """'1. description' lines in map order, for the spec-generation prompt."""
    return "\n".join(f"{i}. {desc}" for i, desc in enumerate(desc_map.values(), 1))


def template_or_default(
    template: Optional[PromptTemplate], template_id: str
) -> PromptTemplate:
    return template if template is not None else DEFAULT_TEMPLATES[template_id]
