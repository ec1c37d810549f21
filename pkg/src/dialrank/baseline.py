"""Average-of-word-vectors baseline ranked by cosine similarity.

A document is the mean of the vectors of its in-table tokens (tokens
missing from the table are skipped, not zero-averaged). Candidates are
ranked by cosine against the context vector, with cos(., 0) defined as 0.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .corpus import RankingGroup
from .embed import EmbeddingTable


@dataclass
class DocVector:
    vector: np.ndarray
    n_known: int


def embed_doc(tokens: Sequence[str], table: EmbeddingTable) -> DocVector:
    """Mean vector over tokens present in the table; zero vector if none are."""
    total = np.zeros(table.dim, dtype=np.float64)
    n_known = 0
    for tok in tokens:
        vec = table.vectors.get(tok)
        if vec is not None:
            total += vec
            n_known += 1
    return DocVector(total / max(n_known, 1), n_known)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def rank_by_cosine(context: DocVector, candidates: Sequence[DocVector]) -> list[tuple[int, float]]:
    """(original index, cosine score) pairs, best first, stable on ties."""
    if not candidates:
        raise ValueError("need at least one candidate")
    scores = [cosine(context.vector, c.vector) for c in candidates]
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return [(i, scores[i]) for i in order]


def score_group(group: RankingGroup, table: EmbeddingTable) -> list[float]:
    """Cosine score per candidate, in candidate order (for metric evaluation)."""
    ctx = embed_doc(group.context, table)
    return [cosine(ctx.vector, embed_doc(c.response, table).vector) for c in group.candidates]
