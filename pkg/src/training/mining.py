"""
Hard-negative mining.

Each sample's session is encoded and searched against the corpus index.
New negatives are drawn uniformly, without replacement, from the hits
ranked ``window_lo .. window_hi`` (inclusive, 1-based), skipping the
sample's positive. Passages just below the very top are hard enough to
be informative and far enough down to rarely be unlabelled positives.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from src.errors import ContractError
from src.index.store import EmbeddingIndex, SearchHit, search_topk
from src.text.conversation import Passage, TrainingSample

if TYPE_CHECKING:
    from src.model.encoder import Encoder

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = (15, 30)


def mining_window(corpus_size: int, lo: int, hi: int) -> tuple[int, int]:
    """
    The rank window to sample from, shrunk to fit a small corpus.

    When the corpus has fewer than *hi* passages the window keeps its width
    but ends at the last rank.
    """
    if not 1 <= lo <= hi:
        raise ContractError(f"invalid mining window [{lo}, {hi}]")
    if corpus_size < 1:
        raise ContractError("cannot mine from an empty index")
    if corpus_size >= hi:
        return lo, hi
    new_hi = corpus_size
    new_lo = max(1, corpus_size - (hi - lo))
    logger.warning("Corpus of %d passages is smaller than the mining window; using ranks [%d, %d]",
                   corpus_size, new_lo, new_hi)
    return new_lo, new_hi


def sample_from_window(
    hits: Sequence[SearchHit],
    positive_pid: str,
    k: int,
    lo: int,
    hi: int,
    rng: np.random.Generator,
) -> list[SearchHit]:
    """Draw up to *k* hits ranked in ``[lo, hi]``, never the positive."""
    candidates = [h for h in hits if lo <= h.rank <= hi and h.pid != positive_pid]
    if len(candidates) <= k:
        return candidates
    picked = rng.choice(len(candidates), size=k, replace=False)
    return [candidates[i] for i in sorted(picked)]


def mine_hard_negatives(
    samples: Sequence[TrainingSample],
    index: EmbeddingIndex,
    encoder: "Encoder",
    corpus: Mapping[str, Passage],
    k_per_sample: int,
    window_lo: int = DEFAULT_WINDOW[0],
    window_hi: int = DEFAULT_WINDOW[1],
    seed: int = 0,
) -> list[TrainingSample]:
    """
    Replace every sample's hard negatives with passages mined from *index*.

    Args:
        samples: Training samples; their sessions are the queries.
        index: Index over *corpus*.
        encoder: Session encoder.
        corpus: Passages by pid, for every pid in the index.
        k_per_sample: Negatives to draw per sample.
        seed: Seeds the draws; the same seed gives the same negatives.

    Returns:
        New samples in the same order. A sample keeps fewer than
        *k_per_sample* negatives when the window has too few candidates.
    """
    if k_per_sample < 1:
        raise ContractError(f"k_per_sample must be positive, got {k_per_sample}")
    lo, hi = mining_window(len(index), window_lo, window_hi)
    rng = np.random.default_rng(seed)
    mined: list[TrainingSample] = []
    short = 0
    for sample in samples:
        hits = search_topk(encoder.encode_session(sample.session), index, hi)
        picked = sample_from_window(hits, sample.positive.pid, k_per_sample, lo, hi, rng)
        if len(picked) < k_per_sample:
            short += 1
        mined.append(sample.with_negatives(tuple(corpus[h.pid] for h in picked)))
    if short:
        logger.warning("%d sample(s) received fewer than %d mined negatives", short, k_per_sample)
    logger.info("Mined hard negatives for %d samples from ranks [%d, %d]", len(mined), lo, hi)
    return mined
