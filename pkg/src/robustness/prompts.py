"""
Request templates for the optional chat provider.

Each template is a ``str.format`` pattern; ``render_history`` turns a list
of turns into the transcript block the templates embed.
"""

from __future__ import annotations

from typing import Sequence

from src.text.conversation import Passage, Role, Turn

RESPONSE_PROMPT = """You are a search assistant. Answer the user's last question using only the passages below.
Reply with one or two sentences and nothing else.

Conversation so far:
{history}

Passages:
{passages}

Answer:"""

JUDGE_PROMPT = """In a conversation, one assistant answer was replaced.

Original answer: {original_response}
Replaced answer: {new_response}

Next user question: {query}

Does the next user question still make sense after the replaced answer?
Reply with exactly one word: yes or no."""

CONTEXT_PROMPT = """Write a new conversation history that leads naturally to the final user question.

Final user question: {query}
What the question means on its own: {rewrite}

Write {n_turns} exchanges. Put each utterance on its own line, starting with "user:" or "assistant:".
Do not repeat the final user question."""


def render_history(turns: Sequence[Turn]) -> str:
    if not turns:
        return "(no earlier turns)"
    return "\n".join(f"{t.role.value}: {t.text}" for t in turns)


def render_passages(passages: Sequence[Passage]) -> str:
    return "\n".join(f"[{i}] {p.text}" for i, p in enumerate(passages, start=1))


def parse_history(text: str) -> list[Turn]:
    """Parse ``role: text`` lines of a provider reply; other lines are ignored."""
    turns = []
    for line in text.splitlines():
        role, sep, body = line.partition(":")
        role = role.strip().lower()
        if sep and role in (Role.USER.value, Role.ASSISTANT.value) and body.strip():
            turns.append(Turn(Role(role), body))
    return turns
