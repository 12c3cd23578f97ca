"""
Chat-template rendering and packed training sequences.

A session is rendered turn by turn as ``[ROLE] words... [SEP]`` followed by
the ``t`` embedding specials. A response (or any passage) is its words
followed by the same specials. The packed sequence used for session-masked
training is the two concatenated:

    x_1 .. x_N  EMB_1 .. EMB_t  y_1 .. y_M  EMB_1 .. EMB_t
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import IntEnum

from src.errors import ConfigurationError, ContractError, SampleRejectedError
from src.text.conversation import Passage, Role, Session, TrainingSample
from src.text.vocab import MAX_SPECIAL_TOKENS, Vocabulary, tokenize

logger = logging.getLogger(__name__)


class Segment(IntEnum):
    SESSION = 0
    SESSION_SPECIAL = 1
    RESPONSE = 2
    RESPONSE_SPECIAL = 3


def _check_t(t: int) -> None:
    if not 1 <= t <= MAX_SPECIAL_TOKENS:
        raise ConfigurationError(f"t_special must be in [1, {MAX_SPECIAL_TOKENS}], got {t}")


def render_turns(session: Session, vocab: Vocabulary) -> list[list[int]]:
    """Token ids of each turn, role marker and separator included."""
    rendered = []
    for turn in session.turns:
        marker = vocab.user_id if turn.role is Role.USER else vocab.assistant_id
        rendered.append([marker] + tokenize(turn.text, vocab) + [vocab.sep_id])
    return rendered


def format_session(session: Session, vocab: Vocabulary, t: int, max_seq_len: int) -> list[int]:
    """
    Render *session* and append ``EMB_1 .. EMB_t``.

    When too long, whole turns are dropped oldest first; the current query
    is never dropped. If the query alone still does not fit, it is cut from
    the left. The specials are always kept.

    Raises:
        ContractError: If *max_seq_len* leaves no room for a session token.
        ConfigurationError: If *t* is out of range.
    """
    _check_t(t)
    budget = max_seq_len - t
    if budget < 1:
        raise ContractError(f"max_seq_len {max_seq_len} leaves no room before {t} specials")

    turns = render_turns(session, vocab)
    total = sum(len(r) for r in turns)
    dropped = 0
    while total > budget and len(turns) > 1:
        total -= len(turns.pop(0))
        dropped += 1
    body = [tok for r in turns for tok in r]
    if len(body) > budget:
        body = body[-budget:]
    if dropped:
        logger.debug("Session %s: dropped %d oldest turns", session.conversation_id, dropped)
    return body + vocab.emb_ids(t)


def format_response(text: str, vocab: Vocabulary, t: int, max_len: int | None = None) -> list[int]:
    """Response template: words, cut from the right to fit, then the specials."""
    _check_t(t)
    words = tokenize(text, vocab)
    if max_len is not None:
        if max_len - t < 0:
            raise ContractError(f"length {max_len} cannot hold {t} specials")
        words = words[: max_len - t]
    return words + vocab.emb_ids(t)


def format_passage(passage: Passage, vocab: Vocabulary, t: int, max_seq_len: int) -> list[int]:
    """Passages share the response template."""
    return format_response(passage.text, vocab, t, max_seq_len)


# ---------------------------------------------------------------------------
# Packed sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PackedSequence:
    """
    Session and response packed into one sequence, with region labels.

    Attributes:
        token_ids: The ``N + t + M + t`` token ids.
        segment_map: Region label of every position.
        n_session: N, ordinary session tokens.
        n_response: M, ordinary response tokens.
        t: Number of specials after each part.
    """

    token_ids: tuple[int, ...]
    segment_map: tuple[Segment, ...]
    n_session: int
    n_response: int
    t: int

    def __post_init__(self):
        expected = (
            [Segment.SESSION] * self.n_session
            + [Segment.SESSION_SPECIAL] * self.t
            + [Segment.RESPONSE] * self.n_response
            + [Segment.RESPONSE_SPECIAL] * self.t
        )
        if len(self.token_ids) != len(expected) or list(self.segment_map) != expected:
            raise ContractError("packed sequence layout does not match (N, t, M, t)")

    @classmethod
    def from_parts(cls, session_ids: list[int], response_ids: list[int], t: int) -> "PackedSequence":
        """Pack two templated parts, each already ending in ``t`` specials."""
        n = len(session_ids) - t
        m = len(response_ids) - t
        if n < 0 or m < 0:
            raise ContractError("template parts shorter than their specials")
        segments = (
            (Segment.SESSION,) * n
            + (Segment.SESSION_SPECIAL,) * t
            + (Segment.RESPONSE,) * m
            + (Segment.RESPONSE_SPECIAL,) * t
        )
        return cls(tuple(session_ids) + tuple(response_ids), segments, n, m, t)

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def response_start(self) -> int:
        return self.n_session + self.t

    @property
    def session_ids(self) -> list[int]:
        return list(self.token_ids[: self.response_start])

    @property
    def response_ids(self) -> list[int]:
        return list(self.token_ids[self.response_start:])

    @property
    def session_special_positions(self) -> range:
        return range(self.n_session, self.n_session + self.t)


def pack_training_sequence(
    sample: TrainingSample,
    vocab: Vocabulary,
    t: int,
    max_seq_len: int,
) -> PackedSequence:
    """
    Build the packed sequence for *sample*.

    Only the session side is truncated to fit. A response that leaves no
    room for at least one session token plus the session specials is
    rejected.

    Raises:
        ConfigurationError: If *t* is out of range.
        SampleRejectedError: If the response alone exceeds the limit.
    """
    _check_t(t)
    response_ids = format_response(sample.positive.text, vocab, t)
    session_budget = max_seq_len - len(response_ids)
    if session_budget < t + 1:
        raise SampleRejectedError(
            f"sample {sample.sample_id!r}: response of {len(response_ids) - t} tokens "
            f"does not fit within max_seq_len {max_seq_len}"
        )
    session_ids = format_session(sample.session, vocab, t, session_budget)
    return PackedSequence.from_parts(session_ids, response_ids, t)
