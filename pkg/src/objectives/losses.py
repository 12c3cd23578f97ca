"""
Training objectives.

- ``contrastive_loss``: softmax cross entropy of the positive against its
  negatives, over cosine scores divided by the temperature.
- ``session_masked_lm_loss``: next-token loss on the response tokens of a
  packed sequence, run under the session mask so the response reaches the
  session only through its special tokens.
- ``combined_loss``: ``L_C + alpha * L_S``.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from src.errors import ContractError
from src.model.masks import build_causal_mask, build_session_mask
from src.model.transformer import AttentionTrace, ModelWeights, forward
from src.numeric import Tensor, cross_entropy_with_logits, stack
from src.objectives.config import ContrastiveConfig, LossWeights
from src.text.formatting import PackedSequence

MaskBuilder = Callable[[PackedSequence], np.ndarray]


def causal_mask_for(seq: PackedSequence) -> np.ndarray:
    """Plain causal mask over a packed sequence (vanilla instruction tuning)."""
    return build_causal_mask(len(seq))


def score_phi(e_x: np.ndarray, e_y: np.ndarray, temperature: float) -> float:
    """
    ``exp(cos(e_x, e_y) / temperature)``.

    Raises:
        ContractError: If either vector is zero or the temperature is not positive.
    """
    e_x = np.asarray(e_x, dtype=np.float64)
    e_y = np.asarray(e_y, dtype=np.float64)
    nx, ny = np.linalg.norm(e_x), np.linalg.norm(e_y)
    if nx == 0.0 or ny == 0.0:
        raise ContractError("score of a zero vector is undefined")
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    return math.exp(float(e_x @ e_y) / (nx * ny) / temperature)


def contrastive_loss(
    e_x: Tensor,
    e_pos: Tensor,
    negatives: Sequence[Tensor],
    cfg: ContrastiveConfig,
) -> Tensor:
    """
    ``-log(phi+ / (phi+ + sum phi-))`` over unit embeddings, in log space.

    Raises:
        ContractError: If the negative set is empty.
    """
    if not negatives:
        raise ContractError("contrastive loss needs at least one negative")
    candidates = stack([e_pos, *negatives], axis=0)
    scores = (candidates @ e_x.reshape(-1, 1)).reshape(1, len(negatives) + 1)
    return cross_entropy_with_logits(scores * (1.0 / cfg.temperature), [0])


def lm_prediction_rows(seq: PackedSequence) -> tuple[int, int]:
    """Logit rows ``[start, stop)`` that predict ``y_1 .. y_M``."""
    start = seq.response_start - 1
    return start, start + seq.n_response


def session_masked_lm_loss(
    seq: PackedSequence,
    weights: ModelWeights,
    *,
    mask_builder: MaskBuilder = build_session_mask,
    trace: AttentionTrace | None = None,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """
    Mean next-token cross entropy over the M response tokens.

    The first response token is predicted from the last session special;
    special positions and session tokens carry no loss terms.

    Raises:
        ContractError: If the sequence has no response tokens.
    """
    if seq.n_response < 1:
        raise ContractError("session-masked LM loss needs at least one response token")
    _, logits = forward(list(seq.token_ids), mask_builder(seq), weights, trace=trace, rng=rng)
    start, stop = lm_prediction_rows(seq)
    targets = seq.token_ids[start + 1:stop + 1]
    return cross_entropy_with_logits(logits[start:stop], targets)


def combined_loss(l_c: Tensor, l_s: Tensor | None, w: LossWeights) -> Tensor:
    """``L_C + alpha * L_S``; with alpha 0 this is ``L_C`` itself."""
    if w.alpha == 0.0 or l_s is None:
        return l_c
    return l_c + l_s * w.alpha
