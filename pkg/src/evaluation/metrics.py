"""
Ranking metrics for a single query.

All functions take the ranked pids of one query (best first) and that
query's graded judgments, and return a value in [0, 1].

- NDCG uses exponential gain ``2**rel - 1`` and discount
  ``1 / log2(rank + 1)``; unjudged pids gain nothing.
- Recall and MRR treat any grade >= 1 as relevant.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from src.errors import ContractError


def _check_k(k: int) -> None:
    if k < 1:
        raise ContractError(f"cutoff k must be at least 1, got {k}")


def dcg(grades: Sequence[int]) -> float:
    """Discounted cumulative gain of grades listed in rank order."""
    g = np.asarray(grades, dtype=np.float64)
    if g.size == 0:
        return 0.0
    discounts = np.log2(np.arange(2, g.size + 2, dtype=np.float64))
    return float(np.sum((2.0 ** g - 1.0) / discounts))


def ndcg_at_k(ranked: Sequence[str], judgments: Mapping[str, int], k: int) -> float:
    """
    Normalised DCG over the top *k* pids.

    Returns 0.0 when no judgment is positive; callers that average over
    queries exclude such queries instead.

    Example:
        >>> round(ndcg_at_k(["a", "b", "c"], {"a": 1, "c": 2}, 3), 5)
        0.68853
    """
    _check_k(k)
    ideal = dcg(sorted((g for g in judgments.values() if g > 0), reverse=True)[:k])
    if ideal == 0.0:
        return 0.0
    return dcg([judgments.get(pid, 0) for pid in ranked[:k]]) / ideal


def recall_at_k(ranked: Sequence[str], judgments: Mapping[str, int], k: int) -> float:
    _check_k(k)
    relevant = {pid for pid, g in judgments.items() if g >= 1}
    if not relevant:
        return 0.0
    return len(relevant.intersection(ranked[:k])) / len(relevant)


def mrr_at_k(ranked: Sequence[str], judgments: Mapping[str, int], k: int) -> float:
    """Reciprocal rank of the first relevant pid within the top *k*, else 0."""
    _check_k(k)
    for rank, pid in enumerate(ranked[:k], start=1):
        if judgments.get(pid, 0) >= 1:
            return 1.0 / rank
    return 0.0


METRICS = {
    "ndcg": ndcg_at_k,
    "recall": recall_at_k,
    "mrr": mrr_at_k,
}


def has_relevant(judgments: Mapping[str, int]) -> bool:
    return any(g >= 1 for g in judgments.values())
