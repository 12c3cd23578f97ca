"""
Micro-batches and negative pools.

Samples are shuffled once per epoch with a generator seeded by
``(seed, epoch)``, so any position in the stream can be reproduced
without replaying the ones before it. That is what makes resuming from a
checkpoint land on the same batches as an uninterrupted run.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from src.errors import ContractError
from src.text.conversation import Passage, TrainingSample

logger = logging.getLogger(__name__)


def negative_pool(
    sample: TrainingSample,
    batch: Sequence[TrainingSample],
    use_in_batch_negatives: bool,
) -> list[Passage]:
    """
    Negatives for *sample*: its hard negatives, then the other samples'
    positives when in-batch negatives are on.

    Deduplicated by pid (first occurrence wins); the sample's own positive
    never appears.
    """
    seen = {sample.positive.pid}
    pool: list[Passage] = []
    candidates = list(sample.hard_negatives)
    if use_in_batch_negatives:
        candidates.extend(other.positive for other in batch if other is not sample)
    for passage in candidates:
        if passage.pid in seen:
            continue
        seen.add(passage.pid)
        pool.append(passage)
    return pool


@dataclass(frozen=True)
class Batch:
    """
    One micro-batch.

    Attributes:
        samples: Training samples.
        indices: Positions of the samples in the training list.
    """

    samples: tuple[TrainingSample, ...]
    indices: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.samples)

    def negative_pools(self, use_in_batch_negatives: bool) -> list[list[Passage]]:
        return [negative_pool(s, self.samples, use_in_batch_negatives) for s in self.samples]

    def unique_passages(self, use_in_batch_negatives: bool) -> dict[str, Passage]:
        """Every passage the batch needs embedded, keyed by pid."""
        passages: dict[str, Passage] = {}
        for sample, pool in zip(self.samples, self.negative_pools(use_in_batch_negatives)):
            for p in (sample.positive, *pool):
                passages.setdefault(p.pid, p)
        return passages


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def make_batches(
    samples: Sequence[TrainingSample],
    batch_size: int,
    seed: int,
    epoch: int = 0,
) -> list[Batch]:
    """
    Shuffle *samples* for one epoch and cut them into batches.

    The last batch may be short.

    Raises:
        ContractError: If there are no samples or the batch size is not positive.
    """
    if not samples:
        raise ContractError("cannot batch an empty sample list")
    if batch_size < 1:
        raise ContractError(f"batch size must be positive, got {batch_size}")
    order = epoch_order(len(samples), seed, epoch)
    batches = []
    for start in range(0, len(order), batch_size):
        idx = tuple(int(i) for i in order[start:start + batch_size])
        batches.append(Batch(tuple(samples[i] for i in idx), idx))
    return batches


def iter_micro_batches(
    samples: Sequence[TrainingSample],
    batch_size: int,
    seed: int,
    start: int = 0,
) -> Iterator[Batch]:
    """
    Endless stream of micro-batches over successive epochs, skipping the
    first *start* of them.
    """
    if not samples:
        raise ContractError("cannot batch an empty sample list")
    per_epoch = -(-len(samples) // batch_size)
    epoch, skip = divmod(start, per_epoch)
    for e in itertools.count(epoch):
        batches = make_batches(samples, batch_size, seed, e)
        if skip:
            batches = batches[skip:]
            skip = 0
        logger.debug("Epoch %d: %d micro-batches", e, len(batches))
        yield from batches
