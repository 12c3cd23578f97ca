"""
Two-pass reference for the session-masked LM loss.

Pass 1 runs the session region alone under a causal mask and keeps each
layer's keys and values at the ``t`` special positions. Pass 2 runs the
response region alone, at its original absolute positions, with those
keys and values as the only prefix it can attend to. If the session mask
is right, the single joint pass and this construction give the same loss.
"""

from __future__ import annotations

import numpy as np

from src.errors import ContractError
from src.model.masks import build_causal_mask
from src.model.transformer import AttentionTrace, ModelWeights, forward
from src.numeric import no_grad
from src.text.formatting import PackedSequence


def _mean_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(len(targets)), targets]))


def two_pass_lm_loss_oracle(seq: PackedSequence, weights: ModelWeights) -> float:
    """
    Raises:
        ContractError: If the sequence has no response tokens.
    """
    if seq.n_response < 1:
        raise ContractError("session-masked LM loss needs at least one response token")
    n, t, m = seq.n_session, seq.t, seq.n_response
    start = seq.response_start
    ids = list(seq.token_ids)

    with no_grad():
        trace = AttentionTrace()
        _, session_logits = forward(ids[:start], build_causal_mask(start), weights, trace=trace)
        rows = [session_logits.data[-1]]

        if m > 1:
            prefix = [(k[:, n:n + t, :], v[:, n:n + t, :]) for k, v in zip(trace.keys, trace.values)]
            length = m - 1
            mask = np.concatenate([np.zeros((length, t)), build_causal_mask(length)], axis=1)
            _, response_logits = forward(
                ids[start:start + length],
                mask,
                weights,
                positions=range(start, start + length),
                prefix_kv=prefix,
            )
            rows.extend(response_logits.data)

    targets = np.asarray(ids[start:start + m])
    return _mean_cross_entropy(np.stack(rows), targets)
