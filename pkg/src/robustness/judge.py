"""
Query reasonableness judges.

After a modified assistant response, the next user query may no longer
make sense ("what about its cost?" when the new response talks about
something else). A judge decides; when the query is unreasonable the
harness substitutes the turn's human rewrite.

``HeuristicJudge`` is the deterministic default: a query is unreasonable
iff it contains an anaphoric marker and the content-word overlap
(Jaccard, stopwords removed) between the original and the new response is
below ``threshold``. ``LlmJudge`` asks the chat provider and falls back to
the heuristic when the provider fails.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol

from src.errors import MissingRewriteError, ProviderError
from src.robustness.prompts import JUDGE_PROMPT
from src.robustness.provider import ChatProvider
from src.text.vocab import split_words

logger = logging.getLogger(__name__)

# Pronouns plus their possessive and object forms.
ANAPHORA = frozenset({
    "it", "they", "this", "that", "these", "those", "he", "she", "one",
    "its", "their", "them", "his", "her", "him",
})

STOPWORDS = frozenset({
    "a", "an", "the", "and", "or", "but", "of", "to", "in", "on", "at", "by", "for", "with",
    "from", "about", "as", "into", "is", "are", "was", "were", "be", "been", "being", "do",
    "does", "did", "has", "have", "had", "what", "which", "who", "whom", "how", "when",
    "where", "why", "can", "could", "would", "should", "will", "you", "me", "i", "we",
    "my", "your", "our", "there", "then", "than", "so", "if", "not", "no", "yes", "also",
    "tell", "please", "any", "some", "more", "most", "very", "just",
}) | ANAPHORA

DEFAULT_THRESHOLD = 0.3


def content_words(text: str) -> set[str]:
    return {w for w in split_words(text) if w.isalnum() and w not in STOPWORDS}


def word_overlap(a: str, b: str) -> float:
    """Jaccard overlap of content words; two texts without content words overlap fully."""
    wa, wb = content_words(a), content_words(b)
    if not wa and not wb:
        return 1.0
    return len(wa & wb) / len(wa | wb)


def has_anaphora(query: str) -> bool:
    return any(w in ANAPHORA for w in split_words(query))


@dataclass(frozen=True)
class JudgeVerdict:
    reasonable: bool
    substituted_query: str | None = None


def _verdict(reasonable: bool, rewrite: str | None, qid: str) -> JudgeVerdict:
    if reasonable:
        return JudgeVerdict(True)
    if not rewrite:
        raise MissingRewriteError(f"turn {qid or '?'} needs its human rewrite but none is provided")
    return JudgeVerdict(False, rewrite)


class Judge(Protocol):
    def judge(
        self,
        query: str,
        new_response: str,
        original_response: str,
        rewrite: str | None,
        qid: str = "",
    ) -> JudgeVerdict: ...


class HeuristicJudge:
    """Anaphora plus response-overlap rule."""

    def __init__(self, threshold: float = DEFAULT_THRESHOLD):
        self.threshold = threshold

    def is_reasonable(self, query: str, new_response: str, original_response: str) -> bool:
        if not has_anaphora(query):
            return True
        return word_overlap(original_response, new_response) >= self.threshold

    def judge(self, query, new_response, original_response, rewrite, qid=""):
        """
        Raises:
            MissingRewriteError: The query is unreasonable and *rewrite* is
                empty; the message names *qid*.
        """
        return _verdict(self.is_reasonable(query, new_response, original_response), rewrite, qid)


class LlmJudge:
    """
    Provider-backed judge.

    Attributes:
        fallbacks: Number of verdicts that came from the heuristic because
            the provider failed.
    """

    def __init__(self, provider: ChatProvider, fallback: HeuristicJudge | None = None):
        self.provider = provider
        self.fallback = fallback or HeuristicJudge()
        self.fallbacks = 0

    def judge(self, query, new_response, original_response, rewrite, qid=""):
        prompt = JUDGE_PROMPT.format(
            original_response=original_response,
            new_response=new_response,
            query=query,
        )
        try:
            answer = self.provider.complete(prompt).strip().lower()
            if answer.startswith("yes"):
                reasonable = True
            elif answer.startswith("no"):
                reasonable = False
            else:
                raise ProviderError(f"unexpected judge reply {answer[:40]!r}")
        except ProviderError as exc:
            logger.warning("Judge provider failed for %s, using heuristic: %s", qid or "query", exc)
            self.fallbacks += 1
            reasonable = self.fallback.is_reasonable(query, new_response, original_response)
        return _verdict(reasonable, rewrite, qid)
