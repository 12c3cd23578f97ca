"""
Assistant-response synthesis from retrieved passages.

- ``GoldResponder`` returns the dataset's own response (control condition).
- ``LeadSentenceResponder`` returns the lead sentence of the top passage,
  truncated to ``max_tokens`` whitespace tokens.
- ``LlmResponder`` asks the chat provider and falls back to the lead
  sentence when the provider fails; ``fell_back`` then stays set so the
  report can be flagged.
"""

from __future__ import annotations

import logging
import re
from typing import Protocol, Sequence

from src.errors import ProviderError
from src.robustness.prompts import RESPONSE_PROMPT, render_history, render_passages
from src.robustness.provider import ChatProvider
from src.text.conversation import Passage, Turn, normalize_whitespace

logger = logging.getLogger(__name__)

MAX_RESPONSE_TOKENS = 64

_SENTENCE_END = re.compile(r"[.!?](?=\s|$)")


def lead_sentence(text: str, max_tokens: int = MAX_RESPONSE_TOKENS) -> str:
    """
    First sentence of *text*, at most *max_tokens* whitespace tokens.

    Example:
        >>> lead_sentence("the cost is low . rent changes .")
        'the cost is low .'
    """
    text = normalize_whitespace(text)
    match = _SENTENCE_END.search(text)
    sentence = text[: match.end()] if match else text
    return " ".join(sentence.split()[:max_tokens])


def synthesize_response(passages: Sequence[Passage], max_tokens: int = MAX_RESPONSE_TOKENS) -> str:
    """Lead sentence of the top-ranked passage; empty (with a warning) when nothing was retrieved."""
    if not passages:
        logger.warning("No passages retrieved; synthesized response is empty")
        return ""
    return lead_sentence(passages[0].text, max_tokens)


class Responder(Protocol):
    def respond(self, passages: Sequence[Passage], history: Sequence[Turn], gold: str) -> str: ...


class GoldResponder:
    def respond(self, passages, history, gold):
        return gold


class LeadSentenceResponder:
    def __init__(self, max_tokens: int = MAX_RESPONSE_TOKENS):
        self.max_tokens = max_tokens

    def respond(self, passages, history, gold):
        return synthesize_response(passages, self.max_tokens)


class LlmResponder:
    def __init__(self, provider: ChatProvider, fallback: LeadSentenceResponder | None = None):
        self.provider = provider
        self.fallback = fallback or LeadSentenceResponder()
        self.fell_back = False

    def respond(self, passages, history, gold):
        if not passages:
            return self.fallback.respond(passages, history, gold)
        prompt = RESPONSE_PROMPT.format(history=render_history(history), passages=render_passages(passages))
        try:
            reply = normalize_whitespace(self.provider.complete(prompt))
            if not reply:
                raise ProviderError("provider returned an empty response")
            return reply
        except ProviderError as exc:
            if not self.fell_back:
                logger.warning("Response provider failed, using lead sentences: %s", exc)
            self.fell_back = True
            return self.fallback.respond(passages, history, gold)
