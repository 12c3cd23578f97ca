"""
Readers and writers for training records and passage corpora.

Training data is JSONL, one sample per line:

    {"conversation_id": "c1",
     "turns": [{"role": "user", "text": "..."}, ...],
     "positive": {"pid": "p1", "text": "..."},
     "hard_negatives": [{"pid": "p7", "text": "..."}, ...]}

Single-turn ad-hoc records may give ``"query": "..."`` instead of ``turns``.
Corpora are TSV (``pid<TAB>text``) or JSONL (``{"pid", "text"}``).
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from src.errors import CSITError, InvariantError, SchemaError
from src.text.conversation import Passage, Session, TrainingSample, Turn

logger = logging.getLogger(__name__)


def iter_json_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                yield line_no, json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path.name}: invalid JSON ({exc.msg})", line=line_no) from exc


def _require(record: dict, key: str, line_no: int):
    if not isinstance(record, dict) or key not in record:
        raise SchemaError(f"missing required field {key!r}", line=line_no, field=key)
    return record[key]


def _passage(data, line_no: int, key: str) -> Passage:
    if not isinstance(data, dict) or "pid" not in data or "text" not in data:
        raise SchemaError(f"{key} must be an object with 'pid' and 'text'", line=line_no, field=key)
    return Passage.from_dict(data)


def parse_training_record(record: dict, line_no: int) -> TrainingSample:
    """Turn one decoded JSON record into a TrainingSample."""
    if isinstance(record, dict) and "turns" not in record and "query" in record:
        turns_data = [{"role": "user", "text": record["query"]}]
    else:
        turns_data = _require(record, "turns", line_no)
    conversation_id = str(record.get("conversation_id", f"line-{line_no}"))
    positive = _passage(_require(record, "positive", line_no), line_no, "positive")
    negatives = [
        _passage(n, line_no, "hard_negatives") for n in record.get("hard_negatives", [])
    ]
    try:
        turns = tuple(Turn.from_dict(t) for t in turns_data)
        session = Session(conversation_id, turns)
        return TrainingSample(session, positive, tuple(negatives))
    except InvariantError as exc:
        raise InvariantError(str(exc), line=line_no, field=exc.field) from exc
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed turn ({exc})", line=line_no, field="turns") from exc
    except ValueError as exc:
        raise SchemaError(str(exc), line=line_no, field="turns") from exc


def load_training_jsonl(path: str | Path) -> list[TrainingSample]:
    """
    Load training samples from a JSONL file.

    Raises:
        SchemaError: A line is not JSON or lacks a required field; the error
            names the field and the line.
        InvariantError: A positive is listed among its own negatives.
    """
    path = Path(path)
    samples = [parse_training_record(rec, n) for n, rec in iter_json_lines(path)]
    logger.info("Loaded %d training samples from %s", len(samples), path)
    return samples


def load_training_mix(paths: Sequence[str | Path], seed: int) -> list[TrainingSample]:
    """Load several training files and mix them uniformly with a seeded shuffle."""
    pooled: list[TrainingSample] = []
    for p in paths:
        pooled.extend(load_training_jsonl(p))
    order = np.random.default_rng(seed).permutation(len(pooled))
    return [pooled[i] for i in order]


def write_training_jsonl(samples: Iterable[TrainingSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Corpora
# ---------------------------------------------------------------------------

def _is_jsonl(path: Path) -> bool:
    return path.suffix.lower() in (".jsonl", ".json")


def load_corpus(path: str | Path) -> list[Passage]:
    """
    Load a passage corpus, preserving file order.

    Raises:
        SchemaError: A TSV line has no tab, or a JSONL record lacks a field.
        InvariantError: A pid occurs twice.
    """
    path = Path(path)
    passages: list[Passage] = []
    seen: dict[str, int] = {}

    def add(passage: Passage, line_no: int) -> None:
        if passage.pid in seen:
            raise InvariantError(
                f"duplicate pid {passage.pid!r} (first seen on line {seen[passage.pid]})",
                line=line_no,
                field="pid",
            )
        seen[passage.pid] = line_no
        passages.append(passage)

    if _is_jsonl(path):
        for line_no, record in iter_json_lines(path):
            add(_passage(record, line_no, "passage"), line_no)
    else:
        with open(path, encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n").rstrip("\r")
                if not line.strip():
                    continue
                if "\t" not in line:
                    raise SchemaError("expected 'pid<TAB>text'", line=line_no, field="text")
                pid, text = line.split("\t", 1)
                add(Passage(pid.strip(), text), line_no)

    logger.info("Loaded corpus of %d passages from %s", len(passages), path)
    return passages


def write_corpus(passages: Iterable[Passage], path: str | Path) -> None:
    """Write a corpus as TSV or JSONL depending on the file suffix."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for p in passages:
            if _is_jsonl(path):
                fh.write(json.dumps(p.to_dict(), ensure_ascii=False) + "\n")
            else:
                if "\t" in p.text or "\n" in p.text:
                    raise CSITError(f"passage {p.pid!r} text cannot be written as TSV")
                fh.write(f"{p.pid}\t{p.text}\n")
