"""
Dense Embedding Index
=====================

An ``EmbeddingIndex`` holds one unit vector per corpus passage, in corpus
order, and answers exact maximum-inner-product queries by scanning every
vector. There is no approximate structure: at desk scale a full scan is
cheap and its results can be checked against a plain sort.

Ranking order
-------------
Results are ordered by score, highest first. Equal scores are broken by
ascending pid, so the ranking does not depend on the order in which the
corpus was indexed.

File format (little-endian)
---------------------------
    magic "CSIX" | u32 version | varint dim | varint count
    | string metadata (JSON) | count x string pid
    | count x dim float32 vectors | 32-byte SHA-256 of everything before

Vectors are stored as 32-bit floats. On load they are widened to 64 bits
and re-normalised, and every score is computed in 64 bits.
"""

from __future__ import annotations

import json
import logging
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from src.errors import ContractError, CSITError, DimensionError, FormatError, InvariantError, VersionMismatchError
from src.utils.hashing import DIGEST_SIZE, sha256
from src.utils.serialization import BinaryWriter, ByteReader

if TYPE_CHECKING:
    from src.model.encoder import Encoder
    from src.text.conversation import Passage

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"CSIX"
INDEX_VERSION = 1

# float32 storage keeps norms within this of 1
UNIT_NORM_TOLERANCE = 1e-5


@dataclass(frozen=True)
class SearchHit:
    """One ranked result."""

    pid: str
    score: float
    rank: int


@dataclass(eq=False)
class EmbeddingIndex:
    """
    Immutable passage index.

    Attributes:
        pids: Passage ids in corpus order, unique.
        vectors: ``(count, dim)`` float32 unit vectors as stored on disk.
        metadata: ``encoder_fingerprint`` and ``built_at`` plus any extras.
    """

    pids: tuple[str, ...]
    vectors: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pids = tuple(self.pids)
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise DimensionError(f"index vectors must be 2-D, got shape {self.vectors.shape}")
        if self.vectors.shape[0] != len(self.pids):
            raise DimensionError(f"{len(self.pids)} pids for {self.vectors.shape[0]} vectors")
        dup = next((p for p, n in Counter(self.pids).items() if n > 1), None)
        if dup is not None:
            raise InvariantError(f"duplicate pid {dup!r} in index")
        wide = self.vectors.astype(np.float64)
        norms = np.linalg.norm(wide, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE)
        if bad.size:
            raise ContractError(f"vector for pid {self.pids[bad[0]]!r} is not unit length")
        self._matrix = wide / norms[:, None] if len(self.pids) else wide
        # rank of each row's pid in ascending pid order, for tie-breaking
        order = np.argsort(np.asarray(self.pids, dtype=object), kind="stable") if self.pids else np.zeros(0, int)
        self._pid_rank = np.empty(len(self.pids), dtype=np.int64)
        self._pid_rank[order] = np.arange(len(self.pids))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.pids)

    @property
    def matrix(self) -> np.ndarray:
        """Widened and re-normalised float64 vectors."""
        return self._matrix

    @property
    def pid_rank(self) -> np.ndarray:
        return self._pid_rank


def build_index(
    corpus: Sequence["Passage"],
    encoder: "Encoder",
    workers: int = 1,
    metadata: dict | None = None,
) -> EmbeddingIndex:
    """
    Encode every passage of *corpus* with the passage template.

    With ``workers > 1`` passages are encoded on a thread pool; results are
    collected in corpus order, so the index is identical either way.

    Raises:
        ContractError: If the corpus is empty or a passage fails to encode
            (the message names its pid).
    """
    if not corpus:
        raise ContractError("cannot build an index over an empty corpus")

    def encode(passage: "Passage") -> np.ndarray:
        try:
            return encoder.encode_passage(passage)
        except CSITError as exc:
            raise ContractError(f"failed to encode passage {passage.pid!r}: {exc}") from exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vectors = list(pool.map(encode, corpus))
    else:
        vectors = [encode(p) for p in corpus]

    meta = {
        "encoder_fingerprint": encoder.weights.fingerprint(),
        "built_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    meta.update(metadata or {})
    index = EmbeddingIndex(tuple(p.pid for p in corpus), np.stack(vectors), meta)
    logger.info("Index built: %d passages, dim %d, %d worker(s)", len(index), index.dim, max(workers, 1))
    return index


def rank_order(scores: np.ndarray, pid_rank: np.ndarray) -> np.ndarray:
    """Row order by descending score, then ascending pid."""
    return np.lexsort((pid_rank, -scores))


def search_topk(query_vec: np.ndarray, index: EmbeddingIndex, k: int) -> list[SearchHit]:
    """
    Exact top-*k* passages by cosine score.

    Returns ``min(k, len(index))`` hits ranked from 1.

    Raises:
        ContractError: If *k* < 1 or the query is a zero vector.
        DimensionError: If the query dimension differs from the index.
    """
    if k < 1:
        raise ContractError(f"k must be at least 1, got {k}")
    q = np.asarray(query_vec, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.dim:
        raise DimensionError(f"query has dimension {q.shape[0]}, index has {index.dim}")
    norm = np.linalg.norm(q)
    if norm == 0.0:
        raise ContractError("query vector is zero")
    scores = index.matrix @ (q / norm)
    top = rank_order(scores, index.pid_rank)[:k]
    return [SearchHit(index.pids[i], float(scores[i]), rank) for rank, i in enumerate(top, start=1)]


def search_many(queries: np.ndarray, index: EmbeddingIndex, k: int) -> list[list[SearchHit]]:
    """``search_topk`` for each row of *queries*."""
    return [search_topk(q, index, k) for q in np.atleast_2d(queries)]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def encode_index(index: EmbeddingIndex) -> bytes:
    w = BinaryWriter()
    w.write(INDEX_MAGIC)
    w.write_uint(INDEX_VERSION, 4)
    w.write_varint(index.dim)
    w.write_varint(len(index))
    w.write_string(json.dumps(index.metadata, sort_keys=True))
    for pid in index.pids:
        w.write_string(pid)
    w.write_array(index.vectors, "<f4")
    body = w.getvalue()
    return body + sha256(body)


def decode_index(data: bytes) -> EmbeddingIndex:
    """
    Parse index bytes.

    Raises:
        FormatError: Bad magic, failed digest or truncated body.
        VersionMismatchError: Written by another format version.
    """
    if len(data) < 8 + DIGEST_SIZE:
        raise FormatError(f"index file too short ({len(data)} bytes)")
    reader = ByteReader(data, what="index")
    if reader.read(4) != INDEX_MAGIC:
        raise FormatError("not an index file (bad magic)")
    version = reader.read_uint(4)
    if version != INDEX_VERSION:
        raise VersionMismatchError(f"index format version {version} is not supported (expected {INDEX_VERSION})")
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if sha256(body) != digest:
        raise FormatError("index digest mismatch (file truncated or corrupted)")

    reader = ByteReader(body, offset=8, what="index")
    dim = reader.read_varint()
    count = reader.read_varint()
    try:
        metadata = json.loads(reader.read_string())
    except json.JSONDecodeError as exc:
        raise FormatError("index metadata is not valid JSON") from exc
    pids = tuple(reader.read_string() for _ in range(count))
    vectors = reader.read_array((count, dim), "<f4")
    reader.expect_end()
    return EmbeddingIndex(pids, vectors, metadata)


def save_index(index: EmbeddingIndex, path: str | Path) -> Path:
    """Write *index* atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_index(index))
    os.replace(tmp, path)
    logger.info("Index written: %s (%d passages)", path, len(index))
    return path


def load_index(path: str | Path) -> EmbeddingIndex:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise FormatError(f"index not found: {path}") from exc
    index = decode_index(data)
    logger.info("Index loaded: %s (%d passages, dim %d)", path, len(index), index.dim)
    return index
