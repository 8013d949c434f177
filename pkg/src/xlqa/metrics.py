"""Binary-relevance IR metrics over full rankings: P@j, AP, mAP, MRR.

Average precision is computed over the complete ranking depth (the pool
size); mAP is the unweighted mean of AP over questions.  When every
relevance set has size 1, mAP equals mean reciprocal rank exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .retrieval import Ranking
from .util import canonical_json


class MetricsError(ValueError):
    pass


@dataclass
class EvalResult:
    map_score: float
    per_question_ap: dict[str, float]
    num_questions: int
    num_dropped: int = 0

    def to_json(self) -> str:
        payload = {
            "map": round(self.map_score, 6),
            "num_questions": self.num_questions,
            "num_dropped": self.num_dropped,
            "per_question_ap": {qid: round(ap, 6) for qid, ap in self.per_question_ap.items()},
        }
        return canonical_json(payload)


def ap_from_positions(positions: Sequence[int]) -> float:
    """Average precision given the ascending 1-based ranks of relevant items."""
    if not positions:
        raise MetricsError("empty relevant set")
    total = 0.0
    for r, p in enumerate(positions, start=1):
        total += r / p
    return total / len(positions)


def _relevant_positions(ranking: Ranking, relevant: frozenset | set) -> list[int]:
    positions = [j for j, (cid, _) in enumerate(ranking.ordered, start=1) if cid in relevant]
    if len(positions) != len(relevant):
        raise MetricsError(
            f"relevant ids missing from ranking for question {ranking.question_id!r}"
        )
    return positions


def precision_at_j(ranking: Ranking, relevant: frozenset | set, j: int) -> float:
    """Fraction of the first j ranked candidates that are relevant."""
    if not 1 <= j <= len(ranking.ordered):
        raise MetricsError(f"j={j} out of range for ranking of size {len(ranking.ordered)}")
    hits = sum(1 for cid, _ in ranking.ordered[:j] if cid in relevant)
    return hits / j


def average_precision(ranking: Ranking, relevant: frozenset | set) -> float:
    """AP over the full ranking; 1.0 iff all relevant items fill the top ranks."""
    if not relevant:
        raise MetricsError(
            f"empty relevant set for question {ranking.question_id!r} "
            "(should have been dropped upstream)"
        )
    return ap_from_positions(_relevant_positions(ranking, relevant))


def mean_average_precision(
    rankings: Iterable[Ranking],
    relevance: Mapping[str, frozenset | set],
    num_dropped: int = 0,
) -> EvalResult:
    """Unweighted mean of per-question AP."""
    per: dict[str, float] = {}
    for rk in rankings:
        if rk.question_id not in relevance:
            raise MetricsError(f"no relevance set for question {rk.question_id!r}")
        per[rk.question_id] = average_precision(rk, relevance[rk.question_id])
    if not per:
        raise MetricsError("no questions to evaluate")
    return EvalResult(
        map_score=float(np.mean(list(per.values()))),
        per_question_ap=per,
        num_questions=len(per),
        num_dropped=num_dropped,
    )


def mean_reciprocal_rank(
    rankings: Iterable[Ranking], relevance: Mapping[str, frozenset | set]
) -> float:
    """Mean over questions of 1 / rank of the highest-ranked relevant item."""
    inverse_ranks: list[float] = []
    for rk in rankings:
        if rk.question_id not in relevance:
            raise MetricsError(f"no relevance set for question {rk.question_id!r}")
        relevant = relevance[rk.question_id]
        if not relevant:
            raise MetricsError(f"empty relevant set for question {rk.question_id!r}")
        for j, (cid, _) in enumerate(rk.ordered, start=1):
            if cid in relevant:
                inverse_ranks.append(1.0 / j)
                break
        else:
            raise MetricsError(
                f"no relevant candidate appears in ranking for {rk.question_id!r}"
            )
    if not inverse_ranks:
        raise MetricsError("no questions to evaluate")
    return float(np.mean(inverse_ranks))
