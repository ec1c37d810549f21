"""Ranking metrics over scored candidate groups: R@k, P@1, MRR, MAP.

Candidates are ordered by descending score with stable ties (original
candidate index wins), which makes MRR deterministic under ties. Groups
whose candidates are all positive or all negative can be filtered out, the
convention used when candidate pools come from retrieval rather than
negative sampling.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

from .corpus import RankingGroup

METRIC_FIELDS = ("r_at_1", "r_at_2", "r_at_5", "p_at_1", "mrr", "map")


@dataclass
class MetricsReport:
    r_at_1: float = 0.0
    r_at_2: float = 0.0
    r_at_5: float = 0.0
    p_at_1: float = 0.0
    mrr: float = 0.0
    map: float = 0.0
    n_groups_scored: int = 0
    n_groups_skipped: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class PairedReport:
    deltas: dict[str, float]
    warning: str | None = None

    def __str__(self) -> str:
        lines = [f"{name:<6} {delta:+.4f}" for name, delta in self.deltas.items()]
        if self.warning:
            lines.append(f"warning: {self.warning}")
        return "\n".join(lines)


def _ranked_indices(scores: Sequence[float]) -> list[int]:
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def evaluate(
    scored_groups: Iterable[tuple[RankingGroup, Sequence[float]]],
    filter_degenerate: bool = False,
) -> MetricsReport:
    """Aggregate metrics over (group, candidate scores) pairs.

    R@k counts a group as a hit when any positive lands in the top k; MRR
    uses the first positive's rank; MAP averages precision at each
    positive's rank. With ``filter_degenerate``, all-positive and
    all-negative groups are excluded from every metric and counted in
    ``n_groups_skipped``.
    """
    sums = {name: 0.0 for name in METRIC_FIELDS}
    n_scored = 0
    n_skipped = 0
    for group, scores in scored_groups:
        labels = group.labels
        if len(scores) != len(labels):
            raise ValueError(f"got {len(scores)} scores for {len(labels)} candidates")
        if any(not math.isfinite(s) for s in scores):
            raise ValueError("scores must be finite")
        n_pos = sum(labels)
        if filter_degenerate and (n_pos == 0 or n_pos == len(labels)):
            n_skipped += 1
            continue
        n_scored += 1
        order = _ranked_indices(scores)
        first_pos_rank = None
        hits = 0
        ap_sum = 0.0
        for rank, idx in enumerate(order, start=1):
            if labels[idx] == 1:
                if first_pos_rank is None:
                    first_pos_rank = rank
                hits += 1
                ap_sum += hits / rank
        if first_pos_rank is None:
            continue  # group with no positive contributes 0 to every metric
        if first_pos_rank <= 1:
            sums["r_at_1"] += 1.0
            sums["p_at_1"] += 1.0
        if first_pos_rank <= 2:
            sums["r_at_2"] += 1.0
        if first_pos_rank <= 5:
            sums["r_at_5"] += 1.0
        sums["mrr"] += 1.0 / first_pos_rank
        sums["map"] += ap_sum / n_pos

    report = MetricsReport(n_groups_scored=n_scored, n_groups_skipped=n_skipped)
    if n_scored:
        for name in METRIC_FIELDS:
            setattr(report, name, sums[name] / n_scored)
    return report


def paired_report(a: MetricsReport, b: MetricsReport) -> PairedReport:
    """Per-metric differences b - a, annotated if the group counts differ."""
    deltas = {name: getattr(b, name) - getattr(a, name) for name in METRIC_FIELDS}
    warning = None
    if a.n_groups_scored != b.n_groups_scored:
        warning = f"group counts differ: {a.n_groups_scored} vs {b.n_groups_scored}"
    return PairedReport(deltas, warning)


def format_report(report: MetricsReport) -> str:
    header = "  ".join(f"{name:>6}" for name in METRIC_FIELDS)
    values = "  ".join(f"{getattr(report, name):6.4f}" for name in METRIC_FIELDS)
    counts = f"groups scored: {report.n_groups_scored}  skipped: {report.n_groups_skipped}"
    return "\n".join([header, values, counts])
