"""Inference-time retrieval over the error notebook.

Notebook entries are ranked against the query specification with a
deterministic lexical tf-idf cosine index (spec text only); the query's
own entry is always excluded so it can never appear among its own
few-shot exemplars. Exemplar blocks carry either the full corrected
trajectory or the final answer alone.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import AssemblyRecord, SpecItem
from .gateway import Backend, RetryPolicy
from .notebook import ErrorNotebook, NotebookEntry
from .pipeline import RetrievalResult, format_final_answer, retrieve_parts
from .prompts import PromptTemplate, description_lines

MODE_COT = "cot"
MODE_ANSWER_ONLY = "answer_only"
MODES = (MODE_COT, MODE_ANSWER_ONLY)

EXEMPLAR_DELIMITER = "\n\n---\n\n"

# Similarities are quantized before the id tie-break so ranking never
# depends on float summation order.
_RANK_DECIMALS = 12

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Case-fold, split on non-alphanumeric runs, drop tokens shorter than 2."""
    return [tok for tok in _TOKEN_RE.findall(text.casefold()) if len(tok) >= 2]


@dataclass(frozen=True)
class SpecIndex:
    """Dense tf-idf index over notebook specifications (unit L2 rows)."""

    entry_ids: tuple[str, ...]
    spec_ids: tuple[str, ...]
    vocabulary: dict[str, int]
    idf: np.ndarray
    matrix: np.ndarray

    def vectorize(self, text: str) -> np.ndarray:
        """Unit tf-idf vector for a query; out-of-vocabulary tokens drop out."""
        vec = np.zeros(len(self.vocabulary))
        for token in tokenize(text):
            dim = self.vocabulary.get(token)
            if dim is not None:
                vec[dim] += 1.0
        vec *= self.idf
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        return vec

    def similarities(self, text: str) -> np.ndarray:
        """Cosine similarity of the query to every indexed entry."""
        return self.matrix @ self.vectorize(text)


def build_index(
    notebook: ErrorNotebook,
    analyzer: Callable[[str], list[str]] = tokenize,
) -> SpecIndex:
    """Smoothed tf-idf over entry specifications:
    idf = ln((1+N)/(1+df)) + 1, rows L2-normalized, similarity = cosine."""
    if not len(notebook):
        raise ValueError("cannot index an empty notebook")

    docs = [analyzer(entry.specification) for entry in notebook]
    vocabulary = {token: dim for dim, token in enumerate(sorted({t for doc in docs for t in doc}))}

    n_docs = len(docs)
    df = np.zeros(len(vocabulary))
    for doc in docs:
        for token in set(doc):
            df[vocabulary[token]] += 1.0
    idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0

    matrix = np.zeros((n_docs, len(vocabulary)))
    for row, doc in enumerate(docs):
        for token in doc:
            matrix[row, vocabulary[token]] += 1.0
    matrix *= idf
    norms = np.linalg.norm(matrix, axis=1)
    nonzero = norms > 0.0
    matrix[nonzero] /= norms[nonzero, None]

    return SpecIndex(
        entry_ids=tuple(entry.entry_id for entry in notebook),
        spec_ids=tuple(entry.spec_id for entry in notebook),
        vocabulary=vocabulary,
        idf=idf,
        matrix=matrix,
    )


def _cached_index(notebook: ErrorNotebook) -> SpecIndex:
    cached = getattr(notebook, "_spec_index", None)
    if cached is None:
        cached = build_index(notebook)
        notebook._spec_index = cached
    return cached


def top_k(
    index: SpecIndex,
    query_spec: str,
    k: int,
    exclude_spec_id: Optional[str] = None,
) -> list[str]:
    """Entry ids ranked by descending cosine similarity to the query.

    Entries whose spec_id equals ``exclude_spec_id`` are removed before
    ranking; ties break by ascending entry_id. Fewer than k eligible
    entries simply returns them all.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    sims = index.similarities(query_spec)
    ranked = sorted(
        (
            (-round(float(sims[row]), _RANK_DECIMALS), index.entry_ids[row])
            for row in range(len(index.entry_ids))
            if index.spec_ids[row] != exclude_spec_id
        ),
    )
    return [entry_id for _, entry_id in ranked[:k]]


@dataclass(frozen=True)
class FewShotBlock:
    mode: str
    text: str
    entry_ids: tuple[str, ...]


def _render_exemplar(entry: NotebookEntry, mode: str) -> str:
    head = (
        f"Specification:\n{entry.specification}\n\n"
        f"Part descriptions:\n{description_lines(entry.desc_map)}\n\n"
    )
    if mode == MODE_COT:
        return head + entry.corrected_cot.strip()
    return head + format_final_answer(entry.final_answer)


def build_fewshot_block(entries: Sequence[NotebookEntry], mode: str) -> FewShotBlock:
    """Render exemplars in the given order (most similar first).

    ``cot`` keeps each full corrected trajectory including its Final Answer
    line; ``answer_only`` renders just the answer footer with no reasoning.
    """
    if not entries:
        raise ValueError("few-shot block needs at least one entry")
    if mode not in MODES:
        raise ValueError(f"unknown exemplar mode {mode!r}")
    rendered = EXEMPLAR_DELIMITER.join(_render_exemplar(entry, mode) for entry in entries)
    return FewShotBlock(mode, rendered, tuple(entry.entry_id for entry in entries))


def rag_infer(
    spec_item: SpecItem,
    assembly: AssemblyRecord,
    desc_map: dict[str, str],
    notebook: ErrorNotebook,
    backend: Backend,
    model_name: str,
    k: int = 2,
    mode: str = MODE_COT,
    index: Optional[SpecIndex] = None,
    policy: RetryPolicy = RetryPolicy(),
    template: Optional[PromptTemplate] = None,
    clock=None,
) -> RetrievalResult:
    """Retrieval-augmented query: rank exemplars (self excluded), prepend
    the few-shot block, run the main query.

    An empty eligible notebook falls back to zero-shot retrieval with a
    recorded warning.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if index is None:
        index = _cached_index(notebook)

    picked_ids = top_k(index, spec_item.specification, k, exclude_spec_id=spec_item.spec_id)
    if not picked_ids:
        result = retrieve_parts(
            assembly, desc_map, spec_item, backend, model_name,
            policy=policy, template=template, clock=clock,
        )
        result.warnings = result.warnings + (
            "empty eligible notebook; fell back to zero-shot retrieval",
        )
        return result

    block = build_fewshot_block([notebook.by_entry_id(eid) for eid in picked_ids], mode)
    result = retrieve_parts(
        assembly,
        desc_map,
        spec_item,
        backend,
        model_name,
        fewshot_block=block.text,
        policy=policy,
        template=template,
        clock=clock,
    )
    result.exemplar_ids = block.entry_ids
    return result
