"""Embedding tables: text-format loading, combination, coverage reporting.

The combiner concatenates a pretrained general-corpus vector with a vector
trained on the task corpus, zero-padding whichever side is missing, so a
word keeps information from both sources and task-only words stop being
out-of-vocabulary.
"""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from .corpus import TAG_EOT, TAG_EOU, DialogueExample, Vocabulary

logger = logging.getLogger(__name__)

VECTOR_FORMATS = ("glove-text", "word2vec-text")
PROVENANCES = ("pretrained", "trained", "combined")

# Fraction of body lines that may be malformed before loading fails hard.
REJECT_TOLERANCE = 0.01


class VectorFormatError(ValueError):
    """A vector file cannot be parsed under the declared format."""


@dataclass
class LoadReport:
    n_loaded: int = 0
    n_rejected: int = 0
    n_duplicates: int = 0


@dataclass
class EmbeddingTable:
    """Token -> fixed-dimension vector mapping with a provenance label."""

    dim: int
    vectors: dict[str, np.ndarray]
    provenance: str = "pretrained"
    load_report: LoadReport | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}, got {self.provenance!r}")
        for token, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise ValueError(f"vector for {token!r} has shape {vec.shape}, expected ({self.dim},)")

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def get(self, token: str):
        return self.vectors.get(token)


@dataclass
class CoverageReport:
    pct_unique_tokens_covered: float
    pct_token_occurrences_covered: float
    tag_occurrence_pct: float


def load_vectors(path, fmt: str = "glove-text", provenance: str = "pretrained") -> EmbeddingTable:
    """Parse a text vector file.

    glove-text: every line is `token v1 ... vd`; the first body line fixes d.
    word2vec-text: a `count dim` header line precedes the same body.
    Lines with the wrong arity or unparseable floats are rejected (counted,
    warned about); rejections beyond 1% of body lines fail hard. Duplicate
    tokens keep their first vector.
    """
    if fmt not in VECTOR_FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {VECTOR_FORMATS}")
    report = LoadReport()
    vectors: dict[str, np.ndarray] = {}
    dim = None
    n_body = 0
    with open(path, encoding="utf-8") as fh:
        if fmt == "word2vec-text":
            header = fh.readline().split()
            try:
                _, dim = int(header[0]), int(header[1])
            except (IndexError, ValueError):
                raise VectorFormatError(f"{path}: bad word2vec-text header {header!r}") from None
            if dim < 1:
                raise VectorFormatError(f"{path}: header dimension must be >= 1, got {dim}")
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            n_body += 1
            if dim is None:
                if len(parts) < 2:
                    raise VectorFormatError(f"{path}: first body line has no vector components")
                dim = len(parts) - 1
            if len(parts) != dim + 1:
                report.n_rejected += 1
                continue
            token = parts[0]
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError:
                report.n_rejected += 1
                continue
            if token in vectors:
                report.n_duplicates += 1
                continue
            vectors[token] = vec
            report.n_loaded += 1
    if dim is None:
        raise VectorFormatError(f"{path}: no vector rows found")
    if n_body and report.n_rejected / n_body > REJECT_TOLERANCE:
        raise VectorFormatError(
            f"{path}: {report.n_rejected} of {n_body} lines rejected (> {REJECT_TOLERANCE:.0%} tolerance)"
        )
    if report.n_rejected or report.n_duplicates:
        logger.warning(
            "%s: rejected %d malformed line(s), skipped %d duplicate token(s)",
            path,
            report.n_rejected,
            report.n_duplicates,
        )
    return EmbeddingTable(dim, vectors, provenance, load_report=report)


def save_table(table: EmbeddingTable, path) -> None:
    """word2vec-text output; floats printed with full round-trip precision."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table.vectors)} {table.dim}\n")
        for token, vec in table.vectors.items():
            fh.write(token + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def load_table(path, provenance: str = "pretrained") -> EmbeddingTable:
    """Inverse of :func:`save_table`. Provenance is not serialized; pass the
    label the table should carry."""
    return load_vectors(path, fmt="word2vec-text", provenance=provenance)


def combine_embeddings(
    pretrained: EmbeddingTable, trained: EmbeddingTable, task_vocab: Vocabulary
) -> EmbeddingTable:
    """Concatenate pretrained and task-trained vectors over (S ∩ P) ∪ T.

    With S the pretrained key set, T the trained key set and P the task
    vocabulary: a word in both gets [U_w; V_w]; pretrained-only (and in P)
    gets [U_w; 0]; trained-only gets [0; V_w]. Words of P absent from the
    result are left to the model layer, which assigns zero vectors.
    """
    d1, d2 = pretrained.dim, trained.dim
    task_tokens = set(task_vocab.tokens())
    s_and_p = {w for w in pretrained.vectors if w in task_tokens}
    keys = s_and_p | set(trained.vectors)
    out: dict[str, np.ndarray] = {}
    zeros_left = np.zeros(d1, dtype=np.float64)
    zeros_right = np.zeros(d2, dtype=np.float64)
    for w in sorted(keys):
        left = pretrained.vectors[w] if w in s_and_p else zeros_left
        right = trained.vectors.get(w)
        if right is None:
            right = zeros_right
        out[w] = np.concatenate([left, right])
    return EmbeddingTable(d1 + d2, out, "combined")


def coverage(table: EmbeddingTable, examples: Iterable[DialogueExample]) -> CoverageReport:
    """Share of corpus types and occurrences covered by the table, plus the
    share of occurrences that are the two turn-structure tags."""
    counts: Counter[str] = Counter()
    for ex in examples:
        counts.update(ex.context)
        counts.update(ex.response)
    if not counts:
        raise ValueError("empty corpus")
    total_occurrences = sum(counts.values())
    covered_types = sum(1 for t in counts if t in table.vectors)
    covered_occurrences = sum(c for t, c in counts.items() if t in table.vectors)
    tag_occurrences = counts.get(TAG_EOU, 0) + counts.get(TAG_EOT, 0)
    return CoverageReport(
        pct_unique_tokens_covered=100.0 * covered_types / len(counts),
        pct_token_occurrences_covered=100.0 * covered_occurrences / total_occurrences,
        tag_occurrence_pct=100.0 * tag_occurrences / total_occurrences,
    )


def format_coverage(report: CoverageReport) -> str:
    rows = [
        ("percent of unique tokens covered", report.pct_unique_tokens_covered),
        ("percent of token occurrences covered", report.pct_token_occurrences_covered),
        (f"{TAG_EOU}/{TAG_EOT} share of occurrences", report.tag_occurrence_pct),
    ]
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"{name:<{width}}  {value:6.2f}" for name, value in rows)
