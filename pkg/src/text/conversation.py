"""
Conversation and corpus data model.

A ``Session`` is the retriever's input: every historical turn plus the
current user query as its last turn. A ``TrainingSample`` pairs a session
with its positive passage and hard negatives. ``EvalConversation`` carries
the per-turn query ids, gold responses and human rewrites that the
evaluation and robustness code needs.

All types are frozen dataclasses with ``to_dict`` / ``from_dict`` pairs
matching the JSONL records they are loaded from.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from src.errors import ContractError, InvariantError


def normalize_whitespace(text: str) -> str:
    """Collapse runs of whitespace to single spaces and strip the ends."""
    return " ".join(text.split())


class Role(str, Enum):
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class Turn:
    """One utterance in a conversation."""

    role: Role
    text: str

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        text = normalize_whitespace(self.text)
        if not text:
            raise ContractError(f"{self.role.value} turn has empty text")
        object.__setattr__(self, "text", text)

    def to_dict(self) -> dict:
        return {"role": self.role.value, "text": self.text}

    @classmethod
    def from_dict(cls, data: dict) -> "Turn":
        return cls(role=data["role"], text=data["text"])


@dataclass(frozen=True)
class Session:
    """
    Conversation history plus the current query.

    Roles need not alternate, but the last turn must come from the user.
    """

    conversation_id: str
    turns: tuple[Turn, ...]

    def __post_init__(self):
        turns = tuple(self.turns)
        if not turns:
            raise ContractError(f"session {self.conversation_id!r} has no turns")
        if turns[-1].role is not Role.USER:
            raise ContractError(f"session {self.conversation_id!r} does not end with a user turn")
        object.__setattr__(self, "turns", turns)

    @property
    def current_query(self) -> str:
        return self.turns[-1].text

    @property
    def history(self) -> tuple[Turn, ...]:
        return self.turns[:-1]

    @classmethod
    def single_turn(cls, conversation_id: str, query: str) -> "Session":
        return cls(conversation_id, (Turn(Role.USER, query),))

    def to_dict(self) -> dict:
        return {
            "conversation_id": self.conversation_id,
            "turns": [t.to_dict() for t in self.turns],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Session":
        return cls(
            conversation_id=str(data["conversation_id"]),
            turns=tuple(Turn.from_dict(t) for t in data["turns"]),
        )


@dataclass(frozen=True)
class Passage:
    pid: str
    text: str

    def to_dict(self) -> dict:
        return {"pid": self.pid, "text": self.text}

    @classmethod
    def from_dict(cls, data: dict) -> "Passage":
        return cls(pid=str(data["pid"]), text=str(data["text"]))


@dataclass(frozen=True)
class TrainingSample:
    """
    A session, its positive passage, and hard negatives.

    Raises:
        InvariantError: If the positive's pid appears among the negatives.
    """

    session: Session
    positive: Passage
    hard_negatives: tuple[Passage, ...] = ()

    def __post_init__(self):
        negatives = tuple(self.hard_negatives)
        if any(n.pid == self.positive.pid for n in negatives):
            raise InvariantError(
                f"positive {self.positive.pid!r} listed among its own hard negatives",
                field="hard_negatives",
            )
        object.__setattr__(self, "hard_negatives", negatives)

    @property
    def sample_id(self) -> str:
        return self.session.conversation_id

    def with_negatives(self, negatives) -> "TrainingSample":
        return TrainingSample(self.session, self.positive, tuple(negatives))

    def to_dict(self) -> dict:
        record = self.session.to_dict()
        record["positive"] = self.positive.to_dict()
        record["hard_negatives"] = [n.to_dict() for n in self.hard_negatives]
        return record


# ---------------------------------------------------------------------------
# Evaluation conversations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalTurn:
    """One evaluated turn: its query id, query, gold response and human rewrite."""

    qid: str
    query: str
    response: str = ""
    rewrite: str | None = None

    def to_dict(self) -> dict:
        return {"qid": self.qid, "query": self.query, "response": self.response, "rewrite": self.rewrite}


@dataclass(frozen=True)
class EvalConversation:
    conversation_id: str
    turns: tuple[EvalTurn, ...] = field(default_factory=tuple)

    def history_before(self, index: int, responses: list[str] | None = None) -> list[Turn]:
        """
        User/assistant turns preceding turn *index*.

        *responses*, when given, replaces the gold assistant responses
        position by position (empty strings drop the assistant turn).
        """
        history: list[Turn] = []
        for i, turn in enumerate(self.turns[:index]):
            history.append(Turn(Role.USER, turn.query))
            reply = responses[i] if responses is not None else turn.response
            if normalize_whitespace(reply):
                history.append(Turn(Role.ASSISTANT, reply))
        return history

    def session_at(self, index: int, responses: list[str] | None = None) -> Session:
        """The session whose current query is turn *index*."""
        turns = self.history_before(index, responses)
        turns.append(Turn(Role.USER, self.turns[index].query))
        return Session(self.conversation_id, tuple(turns))

    def to_dict(self) -> dict:
        return {"conversation_id": self.conversation_id, "turns": [t.to_dict() for t in self.turns]}
