"""
Text embeddings from the encoder.

The embedding of any templated input is the final hidden state at its last
position (``EMB_t``), run under the plain causal mask and L2-normalised.
``Encoder`` bundles vocabulary, config and weights so callers can embed
sessions, passages and raw texts without repeating the templating.
"""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from src.errors import ContractError
from src.model.config import ModelConfig
from src.model.masks import build_causal_mask
from src.model.transformer import ModelWeights, forward
from src.numeric import Tensor, l2_normalize, no_grad
from src.text.conversation import Passage, Session
from src.text.formatting import PackedSequence, format_passage, format_session
from src.text.vocab import Vocabulary

logger = logging.getLogger(__name__)


def embed_text(
    token_ids: Sequence[int],
    weights: ModelWeights,
    special_ids: Sequence[int],
    rng: np.random.Generator | None = None,
) -> Tensor:
    """
    Unit-norm embedding of a templated input.

    Args:
        token_ids: Ids ending in the embedding specials.
        weights: Encoder parameters.
        special_ids: ``[EMB_1 .. EMB_t]`` ids the input must end with.
        rng: Dropout randomness, training only.

    Raises:
        ContractError: If the input does not end with the specials.
    """
    t = len(special_ids)
    if len(token_ids) < t or list(token_ids[-t:]) != list(special_ids):
        raise ContractError("input does not end with the embedding special tokens")
    hidden, _ = forward(token_ids, build_causal_mask(len(token_ids)), weights, rng=rng)
    return l2_normalize(hidden[-1])


def extract_session_anchors(seq: PackedSequence, hidden_states: Tensor) -> Tensor:
    """Hidden states of the ``t`` session specials, rows ``N .. N+t-1``."""
    return hidden_states[seq.n_session:seq.n_session + seq.t]


class Encoder:
    """
    Shared text encoder for sessions and passages.

    Attributes:
        vocab: Tokenizer vocabulary.
        weights: Model parameters (``weights.config`` is the ModelConfig).
    """

    def __init__(self, vocab: Vocabulary, weights: ModelWeights):
        if len(vocab) != weights.config.vocab_size:
            raise ContractError(
                f"vocabulary has {len(vocab)} tokens, model expects {weights.config.vocab_size}"
            )
        self.vocab = vocab
        self.weights = weights

    @property
    def config(self) -> ModelConfig:
        return self.weights.config

    @property
    def special_ids(self) -> list[int]:
        return self.vocab.emb_ids(self.config.t_special)

    # -- templating -------------------------------------------------------

    def session_ids(self, session: Session) -> list[int]:
        return format_session(session, self.vocab, self.config.t_special, self.config.max_seq_len)

    def passage_ids(self, passage: Passage) -> list[int]:
        return format_passage(passage, self.vocab, self.config.t_special, self.config.max_seq_len)

    # -- differentiable ---------------------------------------------------

    def embed_ids(self, token_ids: Sequence[int], rng: np.random.Generator | None = None) -> Tensor:
        return embed_text(token_ids, self.weights, self.special_ids, rng)

    # -- inference --------------------------------------------------------

    def encode_session(self, session: Session) -> np.ndarray:
        with no_grad():
            return self.embed_ids(self.session_ids(session)).data

    def encode_passage(self, passage: Passage) -> np.ndarray:
        with no_grad():
            return self.embed_ids(self.passage_ids(passage)).data

    def encode_text(self, text: str) -> np.ndarray:
        """Embed free text with the passage template."""
        return self.encode_passage(Passage("", text))

    def encode_sessions(self, sessions: Sequence[Session]) -> np.ndarray:
        if not sessions:
            return np.zeros((0, self.config.d_model))
        return np.stack([self.encode_session(s) for s in sessions])
