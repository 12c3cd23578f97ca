"""
Alternative conversation histories for the full-context protocol.

Every evaluated turn gets exactly five histories; the current query is
never touched, so the turn's relevance judgments stay valid.

====  ===================  ==================================================
 id   provenance           history
====  ===================  ==================================================
 0    original             the gold history
 1    drop_earliest        gold history without its first exchange
 2    lead_sentences       assistant responses cut to their lead sentence
 3    synthetic            one exchange built from the rewrite's content
                           words that the query lacks
 4    distractor           an off-topic exchange inserted before the last
                           user turn of the history
====  ===================  ==================================================

A generator that has nothing to work with (no history, or a rewrite that
adds no words) returns the original history with ``collapsed`` set.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from src.errors import MissingRewriteError, ProviderError
from src.robustness.judge import content_words
from src.robustness.prompts import CONTEXT_PROMPT, parse_history
from src.robustness.provider import ChatProvider
from src.robustness.responder import lead_sentence
from src.text.conversation import EvalConversation, Role, Session, Turn
from src.text.vocab import split_words

logger = logging.getLogger(__name__)

N_VARIANTS = 5

PROVENANCE = ("original", "drop_earliest", "lead_sentences", "synthetic", "distractor")

SYNTHETIC_USER = "i would like to learn about {topic} ."
SYNTHETIC_ASSISTANT = "sure , here is what is known about {topic} ."

DISTRACTOR_TURNS = (
    ("what will the weather be like tomorrow ?", "tomorrow should be sunny with a light breeze ."),
    ("can you recommend a good book ?", "many readers enjoy long adventure novels ."),
    ("how do i boil an egg ?", "place the egg in boiling water for about nine minutes ."),
    ("what time is it in tokyo ?", "tokyo is nine hours ahead of london ."),
    ("who won the chess match ?", "the match ended in a draw after five hours ."),
)


@dataclass(frozen=True)
class ContextVariant:
    """One history for a turn, ending before the (unchanged) current query."""

    variant_id: int
    turns: tuple[Turn, ...]
    provenance: str
    collapsed: bool = False

    def session(self, qid: str, query: str) -> Session:
        return Session(qid, self.turns + (Turn(Role.USER, query),))


def _exchanges(history: list[Turn]) -> list[list[Turn]]:
    """Split *history* into runs that each start at a user turn."""
    groups: list[list[Turn]] = []
    for turn in history:
        if turn.role is Role.USER or not groups:
            groups.append([])
        groups[-1].append(turn)
    return groups


def drop_earliest(history: list[Turn]) -> list[Turn] | None:
    groups = _exchanges(history)
    if not groups:
        return None
    return [t for g in groups[1:] for t in g]


def lead_sentences(history: list[Turn]) -> list[Turn] | None:
    if not history:
        return None
    return [Turn(t.role, lead_sentence(t.text)) if t.role is Role.ASSISTANT else t for t in history]


def synthetic_history(query: str, rewrite: str) -> list[Turn] | None:
    """One exchange naming what the rewrite adds to the query, in rewrite order."""
    missing = content_words(rewrite) - content_words(query)
    words: list[str] = []
    for w in split_words(rewrite):
        if w in missing and w not in words:
            words.append(w)
    if not words:
        return None
    topic = " ".join(words)
    return [
        Turn(Role.USER, SYNTHETIC_USER.format(topic=topic)),
        Turn(Role.ASSISTANT, SYNTHETIC_ASSISTANT.format(topic=topic)),
    ]


def inject_distractor(history: list[Turn], rng: np.random.Generator) -> list[Turn] | None:
    """
    Insert one off-topic exchange directly before the last user turn of *history*.

    The position is fixed; only the choice of pair from ``DISTRACTOR_TURNS``
    is random, drawn from the turn's rng (seeded by the generator seed and
    the qid's CRC-32). The most recent exchange therefore stays adjacent to
    the current query. Returns ``None`` when the history has no user turn.
    """
    last_user = max((i for i, t in enumerate(history) if t.role is Role.USER), default=None)
    if last_user is None:
        return None
    question, answer = DISTRACTOR_TURNS[int(rng.integers(len(DISTRACTOR_TURNS)))]
    pair = [Turn(Role.USER, question), Turn(Role.ASSISTANT, answer)]
    return history[:last_user] + pair + history[last_user:]


def _turn_rng(seed: int, qid: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(qid.encode("utf-8"))])


class ContextGenerator(Protocol):
    def variants(self, conversation: EvalConversation, index: int) -> list[ContextVariant]: ...


class RuleContextGenerator:
    """Deterministic generator set; results depend only on the turn and the seed."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def variants(self, conversation: EvalConversation, index: int) -> list[ContextVariant]:
        """
        Raises:
            MissingRewriteError: If the turn has no human rewrite.
        """
        turn = conversation.turns[index]
        if not turn.rewrite:
            raise MissingRewriteError(f"turn {turn.qid!r} has no human rewrite to build contexts from")
        history = conversation.history_before(index)
        built = [
            history,
            drop_earliest(history),
            lead_sentences(history),
            synthetic_history(turn.query, turn.rewrite),
            inject_distractor(history, _turn_rng(self.seed, turn.qid)),
        ]
        out = []
        for vid, turns in enumerate(built):
            if turns is None:
                out.append(ContextVariant(vid, tuple(history), PROVENANCE[vid], collapsed=True))
            else:
                out.append(ContextVariant(vid, tuple(turns), PROVENANCE[vid]))
        if any(v.collapsed for v in out):
            logger.debug("Turn %s: %d variant(s) collapsed to the original", turn.qid, sum(v.collapsed for v in out))
        return out


class LlmContextGenerator:
    """
    Variants 1-4 written by the chat provider; variant 0 stays the gold history.

    A failed or unusable reply falls back to the rule-based variant of the
    same id and sets ``fell_back``.
    """

    def __init__(self, provider: ChatProvider, seed: int = 0):
        self.provider = provider
        self.rules = RuleContextGenerator(seed)
        self.fell_back = False

    def variants(self, conversation: EvalConversation, index: int) -> list[ContextVariant]:
        fallback = self.rules.variants(conversation, index)
        turn = conversation.turns[index]
        n_turns = max(1, len(_exchanges(conversation.history_before(index))))
        out = [fallback[0]]
        for vid in range(1, N_VARIANTS):
            prompt = CONTEXT_PROMPT.format(query=turn.query, rewrite=turn.rewrite, n_turns=n_turns)
            try:
                turns = parse_history(self.provider.complete(prompt))
                if not turns:
                    raise ProviderError("reply contains no 'user:' or 'assistant:' lines")
                out.append(ContextVariant(vid, tuple(turns), "llm"))
            except ProviderError as exc:
                if not self.fell_back:
                    logger.warning("Context provider failed, using rule-based contexts: %s", exc)
                self.fell_back = True
                out.append(fallback[vid])
        return out


def full_context_variants(conversation: EvalConversation, index: int, seed: int = 0) -> list[ContextVariant]:
    """The five rule-based histories for turn *index*."""
    return RuleContextGenerator(seed).variants(conversation, index)
