"""
Normal (unmodified-context) retrieval over evaluation conversations.

Every turn of every conversation becomes one query, identified by its qid.
The query side can be encoded three ways:

- ``session``: the gold history plus the current query (the default)
- ``rewrite``: the human rewrite as a standalone one-turn session
- ``query``: the current query alone, without history
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import TYPE_CHECKING, Mapping, Sequence

from src.errors import ConfigurationError, MissingRewriteError
from src.evaluation.trec import EvaluationReport, Run, RunEntry, evaluate_run, run_from_hits
from src.index.store import search_topk
from src.text.conversation import EvalConversation, Session

if TYPE_CHECKING:
    from src.index.store import EmbeddingIndex
    from src.model.encoder import Encoder

logger = logging.getLogger(__name__)

INPUT_MODES = ("session", "rewrite", "query")
DEFAULT_DEPTH = 100


def query_session(conversation: EvalConversation, index: int, input_mode: str = "session") -> Session:
    """
    The retriever input for turn *index* of *conversation*.

    Raises:
        ConfigurationError: For an unknown *input_mode*.
        MissingRewriteError: In ``rewrite`` mode when the turn has no rewrite.
    """
    turn = conversation.turns[index]
    if input_mode == "session":
        return Session(turn.qid, conversation.session_at(index).turns)
    if input_mode == "query":
        return Session.single_turn(turn.qid, turn.query)
    if input_mode == "rewrite":
        if not turn.rewrite:
            raise MissingRewriteError(f"turn {turn.qid!r} has no human rewrite")
        return Session.single_turn(turn.qid, turn.rewrite)
    raise ConfigurationError(f"input_mode must be one of {', '.join(INPUT_MODES)}, got {input_mode!r}")


def retrieve_sessions(
    sessions: Sequence[Session],
    encoder: "Encoder",
    index: "EmbeddingIndex",
    depth: int = DEFAULT_DEPTH,
    tag: str = "csit",
    workers: int = 1,
) -> Run:
    """Encode and search each session; the session's conversation_id is the qid."""

    def one(session: Session) -> list[RunEntry]:
        hits = search_topk(encoder.encode_session(session), index, depth)
        return run_from_hits(session.conversation_id, hits, tag)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, sessions))
    else:
        results = [one(s) for s in sessions]
    return {s.conversation_id: entries for s, entries in zip(sessions, results)}


def retrieve_run(
    conversations: Sequence[EvalConversation],
    encoder: "Encoder",
    index: "EmbeddingIndex",
    depth: int = DEFAULT_DEPTH,
    input_mode: str = "session",
    tag: str = "csit",
    workers: int = 1,
) -> Run:
    sessions = [
        query_session(conv, i, input_mode) for conv in conversations for i in range(len(conv.turns))
    ]
    run = retrieve_sessions(sessions, encoder, index, depth, tag, workers)
    logger.info("Retrieved %d queries (%s input, depth %d)", len(run), input_mode, depth)
    return run


def evaluate_conversations(
    conversations: Sequence[EvalConversation],
    encoder: "Encoder",
    index: "EmbeddingIndex",
    qrels: Mapping[str, Mapping[str, int]],
    k_list: Sequence[int] = (3,),
    input_mode: str = "session",
    depth: int = DEFAULT_DEPTH,
) -> tuple[Run, EvaluationReport]:
    """Retrieve every turn and score the run against *qrels*."""
    run = retrieve_run(conversations, encoder, index, max(depth, *k_list), input_mode)
    return run, evaluate_run(run, qrels, k_list)
