"""
Dual-Objective Training Loop
============================

Each optimizer step runs ``grad_accum_steps`` micro-batches. For every
sample in a micro-batch the loop computes

- the contrastive loss of the session embedding against the positive and
  the sample's negative pool, and
- the session-masked LM loss of the packed (session, positive) sequence,

averages both over the micro-batch, adds them as ``L_C + alpha * L_S`` and
back-propagates the result scaled by ``1 / grad_accum_steps``. Gradients
therefore accumulate to the mean over all micro-batches of the step.

Within a micro-batch every distinct passage is embedded once and the
resulting tensor is shared by all samples that use it.

Ablations
---------
``no_sit``      alpha is forced to 0: contrastive loss only.
``vanilla_it``  the LM loss runs under a plain causal mask.
``no_rcot``     a single special token instead of ``t``.

Reproducibility
---------------
Batches come from ``iter_micro_batches`` seeded by the run seed, and
dropout (when enabled) draws from a generator seeded by ``(seed, step)``.
Resuming from a checkpoint at step ``s`` restores weights and Adam moments
and restarts the batch stream at micro-batch ``s * grad_accum_steps``, so
the loss trace continues exactly as an uninterrupted run would.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from src.errors import ContractError, NonFiniteLossError, SampleRejectedError
from src.model.checkpoint import Checkpoint, save_checkpoint
from src.model.encoder import Encoder
from src.model.masks import build_session_mask
from src.numeric import Adam, AdamState, Tensor
from src.objectives.losses import causal_mask_for, combined_loss, contrastive_loss, session_masked_lm_loss
from src.text.conversation import Passage, TrainingSample
from src.text.formatting import PackedSequence, pack_training_sequence
from src.training.batching import Batch, iter_micro_batches, negative_pool
from src.training.config import RunConfig

logger = logging.getLogger(__name__)

EvalCallback = Callable[[int, Encoder], float]

LOSS_TRACE_COLUMNS = ("step", "L_C", "L_S", "L")


@dataclass(frozen=True)
class LossRecord:
    """Step-averaged losses of one optimizer step."""

    step: int
    l_c: float
    l_s: float
    total: float

    def to_dict(self) -> dict:
        return {"step": self.step, "L_C": self.l_c, "L_S": self.l_s, "L": self.total}

    @classmethod
    def from_dict(cls, data: dict) -> "LossRecord":
        return cls(int(data["step"]), float(data["L_C"]), float(data["L_S"]), float(data["L"]))


def write_loss_trace(records: Iterable[LossRecord], path: str | Path) -> Path:
    """Write ``step,L_C,L_S,L`` rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOSS_TRACE_COLUMNS)
        writer.writeheader()
        for record in records:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in record.to_dict().items()})
    return path


def read_loss_trace(path: str | Path) -> list[LossRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [LossRecord.from_dict(row) for row in csv.DictReader(fh)]


@dataclass
class PreparedSample:
    """Token ids that do not change when a sample's negatives are re-mined."""

    session_ids: list[int]
    packed: PackedSequence


@dataclass
class TrainResult:
    """Outcome of ``Trainer.train``."""

    step: int
    loss_trace: list[LossRecord]
    adam_state: AdamState
    eval_trace: list[tuple[int, float]] = field(default_factory=list)
    n_rejected: int = 0
    seconds: float = 0.0


class Trainer:
    """
    Trains an encoder in place.

    Args:
        encoder: Encoder whose weights are optimised.
        run: Resolved run configuration.
        corpus: Passages for periodic re-mining (``remine_every``).
        eval_callback: Called as ``callback(step, encoder)`` every
            ``eval_every`` steps; its return value lands in ``eval_trace``.
        checkpoint_path: Where ``checkpoint_every`` writes checkpoints.
    """

    def __init__(
        self,
        encoder: Encoder,
        run: RunConfig,
        *,
        corpus: Sequence[Passage] | None = None,
        eval_callback: EvalCallback | None = None,
        checkpoint_path: str | Path | None = None,
    ):
        if encoder.config.t_special != run.t_special:
            raise ContractError(
                f"encoder uses {encoder.config.t_special} special tokens, run expects {run.t_special}"
            )
        self.encoder = encoder
        self.run = run
        self.cfg = run.train
        self.loss_weights = run.effective_loss
        self.mask_builder = causal_mask_for if self.cfg.vanilla_it else build_session_mask
        self.corpus = list(corpus) if corpus is not None else None
        self.eval_callback = eval_callback
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path is not None else None
        self.optimizer = Adam(encoder.weights.parameters(), self.cfg.learning_rate)
        self.samples: list[TrainingSample] = []
        self.prepared: list[PreparedSample] = []
        self._passage_ids: dict[str, list[int]] = {}

    # -- data ---------------------------------------------------------------

    def load(self, samples: Sequence[TrainingSample]) -> int:
        """
        Template every sample once; samples whose response cannot fit are
        dropped with a warning.

        Returns:
            The number of rejected samples.
        """
        cfg = self.encoder.config
        self.samples, self.prepared = [], []
        rejected = 0
        for sample in samples:
            try:
                packed = pack_training_sequence(sample, self.encoder.vocab, cfg.t_special, cfg.max_seq_len)
            except SampleRejectedError as exc:
                rejected += 1
                logger.warning("Skipping sample: %s", exc)
                continue
            self.samples.append(sample)
            self.prepared.append(PreparedSample(self.encoder.session_ids(sample.session), packed))
        if not self.samples:
            raise ContractError("no trainable samples left after templating")
        logger.info("Prepared %d training samples (%d rejected)", len(self.samples), rejected)
        return rejected

    def passage_ids(self, passage: Passage) -> list[int]:
        ids = self._passage_ids.get(passage.pid)
        if ids is None:
            ids = self._passage_ids[passage.pid] = self.encoder.passage_ids(passage)
        return ids

    # -- losses -------------------------------------------------------------

    def micro_batch_loss(self, batch: Batch, rng: np.random.Generator | None = None) -> tuple[Tensor, float, float]:
        """
        Combined loss of one micro-batch.

        Returns:
            ``(loss, mean L_C, mean L_S)``; ``L_S`` is 0.0 when alpha is 0
            because the LM term is then not computed.

        Raises:
            NonFiniteLossError: Naming the first sample with a NaN or
                infinite loss.
            ContractError: If a sample ends up with no negatives.
        """
        use_in_batch = self.run.contrastive.use_in_batch_negatives
        samples = [self.samples[i] for i in batch.indices]
        embeddings: dict[str, Tensor] = {}

        def embed(passage: Passage) -> Tensor:
            if passage.pid not in embeddings:
                embeddings[passage.pid] = self.encoder.embed_ids(self.passage_ids(passage), rng)
            return embeddings[passage.pid]

        with_lm = self.loss_weights.alpha != 0.0
        l_c_terms: list[Tensor] = []
        l_s_terms: list[Tensor] = []
        for i, sample in zip(batch.indices, samples):
            pool = negative_pool(sample, samples, use_in_batch)
            if not pool:
                raise ContractError(f"sample {sample.sample_id!r} has no negatives in its batch")
            e_x = self.encoder.embed_ids(self.prepared[i].session_ids, rng)
            l_c = contrastive_loss(e_x, embed(sample.positive), [embed(p) for p in pool], self.run.contrastive)
            _check_finite(l_c, "contrastive", sample)
            l_c_terms.append(l_c)
            if with_lm:
                l_s = session_masked_lm_loss(self.prepared[i].packed, self.encoder.weights,
                                             mask_builder=self.mask_builder, rng=rng)
                _check_finite(l_s, "session-masked LM", sample)
                l_s_terms.append(l_s)

        scale = 1.0 / len(samples)
        l_c_mean = _sum(l_c_terms) * scale
        l_s_mean = _sum(l_s_terms) * scale if with_lm else None
        loss = combined_loss(l_c_mean, l_s_mean, self.loss_weights)
        return loss, l_c_mean.item(), l_s_mean.item() if l_s_mean is not None else 0.0

    def accumulate(self, batches: Sequence[Batch], rng: np.random.Generator | None = None) -> tuple[float, float]:
        """
        Zero the gradients and back-propagate the mean loss of *batches*.

        Returns:
            Mean ``L_C`` and ``L_S`` over the micro-batches.
        """
        self.encoder.weights.zero_grad()
        scale = 1.0 / len(batches)
        l_c_sum = l_s_sum = 0.0
        for batch in batches:
            loss, l_c, l_s = self.micro_batch_loss(batch, rng)
            (loss * scale).backward()
            l_c_sum += l_c
            l_s_sum += l_s
        return l_c_sum * scale, l_s_sum * scale

    # -- loop ---------------------------------------------------------------

    def train(self, samples: Sequence[TrainingSample], resume: Checkpoint | None = None) -> TrainResult:
        """
        Run optimizer steps until ``steps`` is reached.

        Args:
            samples: Training samples.
            resume: Checkpoint to continue from; the encoder must already
                hold its weights.
        """
        cfg = self.cfg
        rejected = self.load(samples)
        start_step = 0
        trace: list[LossRecord] = []
        if resume is not None:
            start_step = resume.step
            trace = [LossRecord.from_dict(r) for r in resume.loss_trace]
            if resume.adam_state is not None:
                self.optimizer.state = resume.adam_state.copy()
            logger.info("Resuming training at step %d", start_step)

        stream = iter_micro_batches(self.samples, cfg.batch_size, cfg.seed, start=start_step * cfg.grad_accum_steps)
        result = TrainResult(step=start_step, loss_trace=trace, adam_state=self.optimizer.state, n_rejected=rejected)
        alpha = self.loss_weights.alpha
        dropout = self.encoder.config.dropout > 0.0
        started = time.perf_counter()

        for step in range(start_step + 1, cfg.steps + 1):
            rng = np.random.default_rng([cfg.seed, step]) if dropout else None
            batches = [next(stream) for _ in range(cfg.grad_accum_steps)]
            l_c, l_s = self.accumulate(batches, rng)
            self.optimizer.step()
            record = LossRecord(step, l_c, l_s, l_c + alpha * l_s)
            trace.append(record)
            result.step = step

            if step % cfg.log_every == 0 or step == cfg.steps:
                logger.info("step %d/%d  L_C %.4f  L_S %.4f  L %.4f", step, cfg.steps, l_c, l_s, record.total)
            if cfg.remine_every and step % cfg.remine_every == 0 and step < cfg.steps:
                self.remine(step)
            if self.eval_callback is not None and cfg.eval_every and step % cfg.eval_every == 0:
                score = float(self.eval_callback(step, self.encoder))
                result.eval_trace.append((step, score))
                logger.info("step %d  held-out score %.4f", step, score)
            if self.checkpoint_path is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                result.adam_state = self.optimizer.state
                save_checkpoint(self.to_checkpoint(result), self.checkpoint_path)

        result.adam_state = self.optimizer.state
        result.seconds = time.perf_counter() - started
        logger.info("Training finished at step %d in %.1fs", result.step, result.seconds)
        return result

    def remine(self, step: int) -> None:
        """Refresh every sample's hard negatives against the current encoder."""
        from src.index.store import build_index
        from src.training.mining import mine_hard_negatives

        if self.corpus is None:
            raise ContractError("re-mining needs the corpus")
        index = build_index(self.corpus, self.encoder, workers=self.cfg.encode_workers)
        self.samples = mine_hard_negatives(
            self.samples,
            index,
            self.encoder,
            {p.pid: p for p in self.corpus},
            self.cfg.n_hard_negatives,
            self.cfg.mining_window_lo,
            self.cfg.mining_window_hi,
            seed=self.cfg.seed + step,
        )
        logger.info("Re-mined hard negatives at step %d", step)

    def to_checkpoint(self, result: TrainResult, metadata: dict | None = None) -> Checkpoint:
        meta = {"eval_trace": [list(e) for e in result.eval_trace], "n_rejected": result.n_rejected}
        meta.update(metadata or {})
        return Checkpoint(
            weights=self.encoder.weights,
            vocab=self.encoder.vocab,
            step=result.step,
            train_config=self.run.to_dict(),
            adam_state=result.adam_state,
            loss_trace=[r.to_dict() for r in result.loss_trace],
            metadata=meta,
        )


def _sum(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def _check_finite(loss: Tensor, what: str, sample: TrainingSample) -> None:
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteLossError(f"{what} loss is {value} for sample {sample.sample_id!r}")
