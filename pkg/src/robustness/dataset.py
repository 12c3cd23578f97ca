"""
Evaluation conversations as JSONL.

One conversation per line::

    {"conversation_id": "c1",
     "turns": [{"qid": "c1_1", "query": "...", "response": "...", "rewrite": "..."}, ...]}

``response`` and ``rewrite`` are optional; a missing rewrite only matters
when a robustness protocol needs to substitute it.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable

from src.errors import InvariantError, SchemaError
from src.text.conversation import EvalConversation, EvalTurn, normalize_whitespace
from src.text.loaders import iter_json_lines

logger = logging.getLogger(__name__)


def _parse_turn(data, line_no: int) -> EvalTurn:
    if not isinstance(data, dict):
        raise SchemaError("turn must be an object", line=line_no, field="turns")
    for key in ("qid", "query"):
        if key not in data:
            raise SchemaError(f"turn lacks required field {key!r}", line=line_no, field=key)
    query = normalize_whitespace(str(data["query"]))
    if not query:
        raise SchemaError(f"turn {data['qid']!r} has an empty query", line=line_no, field="query")
    rewrite = normalize_whitespace(str(data.get("rewrite") or ""))
    return EvalTurn(
        qid=str(data["qid"]),
        query=query,
        response=normalize_whitespace(str(data.get("response") or "")),
        rewrite=rewrite or None,
    )


def load_eval_dataset(path: str | Path) -> list[EvalConversation]:
    """
    Raises:
        SchemaError: On a line that is not JSON or lacks a required field.
        InvariantError: When a qid occurs twice in the file.
    """
    path = Path(path)
    conversations: list[EvalConversation] = []
    seen: set[str] = set()
    for line_no, record in iter_json_lines(path):
        if not isinstance(record, dict) or "turns" not in record:
            raise SchemaError("missing required field 'turns'", line=line_no, field="turns")
        turns = tuple(_parse_turn(t, line_no) for t in record["turns"])
        if not turns:
            raise SchemaError("conversation has no turns", line=line_no, field="turns")
        for turn in turns:
            if turn.qid in seen:
                raise InvariantError(f"duplicate qid {turn.qid!r}", line=line_no, field="qid")
            seen.add(turn.qid)
        conversation_id = str(record.get("conversation_id", f"line-{line_no}"))
        conversations.append(EvalConversation(conversation_id, turns))
    logger.info("Loaded %d evaluation conversations (%d turns) from %s", len(conversations), len(seen), path)
    return conversations


def write_eval_dataset(conversations: Iterable[EvalConversation], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for conversation in conversations:
            fh.write(json.dumps(conversation.to_dict(), ensure_ascii=False) + "\n")
    return path
