"""Brute-force similarity oracle: pure-Python dict vectors, explicit
cosine sums, exhaustive ranking. Independent of the numpy index it checks.
"""

from __future__ import annotations

import math
import re

_TOKENS = re.compile(r"[^\W_]+", re.UNICODE)


def brute_tokens(text: str) -> list[str]:
    return [t for t in _TOKENS.findall(text.casefold()) if len(t) >= 2]


def brute_vectors(specs: list[str]) -> list[dict[str, float]]:
    """Smoothed tf-idf vectors, unit L2, as token->weight dicts."""
    docs = [brute_tokens(spec) for spec in specs]
    n = len(docs)
    df: dict[str, int] = {}
    for doc in docs:
        for token in set(doc):
            df[token] = df.get(token, 0) + 1
    idf = {token: math.log((1 + n) / (1 + count)) + 1.0 for token, count in df.items()}

    vectors = []
    for doc in docs:
        counts: dict[str, float] = {}
        for token in doc:
            counts[token] = counts.get(token, 0.0) + 1.0
        weights = {token: tf * idf[token] for token, tf in counts.items()}
        norm = math.sqrt(sum(w * w for w in weights.values()))
        if norm > 0:
            weights = {token: w / norm for token, w in weights.items()}
        vectors.append(weights)
    return vectors


def brute_query_vector(text: str, specs: list[str]) -> dict[str, float]:
    """Query vector over the corpus vocabulary/idf (OOV tokens dropped)."""
    docs = [brute_tokens(spec) for spec in specs]
    n = len(docs)
    df: dict[str, int] = {}
    for doc in docs:
        for token in set(doc):
            df[token] = df.get(token, 0) + 1
    counts: dict[str, float] = {}
    for token in brute_tokens(text):
        if token in df:
            counts[token] = counts.get(token, 0.0) + 1.0
    weights = {
        token: tf * (math.log((1 + n) / (1 + df[token])) + 1.0)
        for token, tf in counts.items()
    }
    norm = math.sqrt(sum(w * w for w in weights.values()))
    if norm > 0:
        weights = {token: w / norm for token, w in weights.items()}
    return weights


def brute_cosine(a: dict[str, float], b: dict[str, float]) -> float:
    return sum(weight * b.get(token, 0.0) for token, weight in a.items())


def brute_rank(specs: list[str], entry_ids: list[str], query: str) -> list[str]:
    """Exhaustive ranking by (-similarity rounded to 12 decimals, entry_id)."""
    vectors = brute_vectors(specs)
    qvec = brute_query_vector(query, specs)
    scored = [
        (-round(brute_cosine(qvec, vec), 12), entry_id)
        for vec, entry_id in zip(vectors, entry_ids)
    ]
    scored.sort()
    return [entry_id for _, entry_id in scored]
