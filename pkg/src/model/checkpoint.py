"""
Versioned binary checkpoint files.

Layout (all integers little-endian):

    magic        4 bytes   b"CSIT"
    version      u32
    header       varint length + UTF-8 JSON
                 {model_config, train_config, vocabulary, step, loss_trace,
                  adam_step, metadata}
    manifest     varint count, then per entry:
                 varint-string name, varint ndim, varint dims..., u64 offset
    blob         u64 length, then float64 arrays back to back
    digest       32-byte SHA-256 of every preceding byte

Parameter entries use their model names; Adam moments are stored as extra
entries ``adam.m/<name>`` and ``adam.v/<name>`` so training can resume
bit-exactly.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from src.errors import FormatError, VersionMismatchError
from src.model.config import ModelConfig
from src.model.encoder import Encoder
from src.model.transformer import ModelWeights
from src.numeric.optim import AdamState
from src.text.vocab import Vocabulary
from src.utils.hashing import DIGEST_SIZE, sha256
from src.utils.serialization import BinaryWriter, ByteReader

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CSIT"
CHECKPOINT_VERSION = 1

ADAM_M_PREFIX = "adam.m/"
ADAM_V_PREFIX = "adam.v/"


@dataclass
class Checkpoint:
    """Everything needed to rebuild an encoder or resume training."""

    weights: ModelWeights
    vocab: Vocabulary
    step: int = 0
    train_config: dict = field(default_factory=dict)
    adam_state: AdamState | None = None
    loss_trace: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def model_config(self) -> ModelConfig:
        return self.weights.config

    def encoder(self) -> Encoder:
        return Encoder(self.vocab, self.weights)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    """Serialise *ckpt* to bytes, digest included."""
    arrays = ckpt.weights.to_arrays()
    if ckpt.adam_state is not None:
        for name, m in ckpt.adam_state.m.items():
            arrays[ADAM_M_PREFIX + name] = m
        for name, v in ckpt.adam_state.v.items():
            arrays[ADAM_V_PREFIX + name] = v

    header = {
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config,
        "vocabulary": ckpt.vocab.to_dict(),
        "step": ckpt.step,
        "adam_step": ckpt.adam_state.step if ckpt.adam_state is not None else None,
        "loss_trace": ckpt.loss_trace,
        "metadata": ckpt.metadata,
    }

    w = BinaryWriter()
    w.write(CHECKPOINT_MAGIC)
    w.write_uint(CHECKPOINT_VERSION, 4)
    raw_header = json.dumps(header, sort_keys=True).encode("utf-8")
    w.write_varint(len(raw_header))
    w.write(raw_header)

    w.write_varint(len(arrays))
    offset = 0
    for name, value in arrays.items():
        w.write_string(name)
        w.write_varint(value.ndim)
        for dim in value.shape:
            w.write_varint(dim)
        w.write_uint(offset, 8)
        offset += value.size * 8

    w.write_uint(offset, 8)
    for value in arrays.values():
        w.write_array(value, "<f8")

    body = w.getvalue()
    return body + sha256(body)


def decode_checkpoint(data: bytes) -> Checkpoint:
    """
    Parse checkpoint bytes.

    Raises:
        FormatError: Bad magic, failed digest, truncation or inconsistent
            manifest.
        VersionMismatchError: Written by another format version.
    """
    if len(data) < 8 + DIGEST_SIZE:
        raise FormatError(f"checkpoint too short ({len(data)} bytes)")
    reader = ByteReader(data, what="checkpoint")
    if reader.read(4) != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version = reader.read_uint(4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"checkpoint format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if sha256(body) != digest:
        raise FormatError("checkpoint digest mismatch (file truncated or corrupted)")

    reader = ByteReader(body, offset=8, what="checkpoint")
    try:
        header = json.loads(reader.read(reader.read_varint()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("checkpoint header is not valid JSON") from exc

    entries: list[tuple[str, tuple[int, ...], int]] = []
    for _ in range(reader.read_varint()):
        name = reader.read_string()
        shape = tuple(reader.read_varint() for _ in range(reader.read_varint()))
        entries.append((name, shape, reader.read_uint(8)))
    blob_size = reader.read_uint(8)
    blob = ByteReader(reader.read(blob_size), what="checkpoint blob")
    reader.expect_end()

    arrays: dict[str, np.ndarray] = {}
    for name, shape, offset in entries:
        if offset != blob.offset:
            raise FormatError(f"checkpoint entry {name!r} offset {offset} != expected {blob.offset}")
        arrays[name] = blob.read_array(shape, "<f8")
    blob.expect_end()

    try:
        config = ModelConfig.from_dict(header["model_config"])
        vocab = Vocabulary.from_dict(header["vocabulary"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"checkpoint header incomplete: {exc}") from exc

    params = {n: a for n, a in arrays.items() if not n.startswith(("adam.m/", "adam.v/"))}
    adam_state = None
    if header.get("adam_step") is not None:
        adam_state = AdamState(
            step=int(header["adam_step"]),
            m={n[len(ADAM_M_PREFIX):]: a for n, a in arrays.items() if n.startswith(ADAM_M_PREFIX)},
            v={n[len(ADAM_V_PREFIX):]: a for n, a in arrays.items() if n.startswith(ADAM_V_PREFIX)},
        )

    return Checkpoint(
        weights=ModelWeights(config, params),
        vocab=vocab,
        step=int(header.get("step", 0)),
        train_config=header.get("train_config") or {},
        adam_state=adam_state,
        loss_trace=header.get("loss_trace") or [],
        metadata=header.get("metadata") or {},
    )


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    """Write *ckpt* atomically (temporary file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    os.replace(tmp, path)
    logger.info("Checkpoint written: %s (step %d)", path, ckpt.step)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise FormatError(f"checkpoint not found: {path}") from exc
    ckpt = decode_checkpoint(data)
    logger.info("Checkpoint loaded: %s (step %d)", path, ckpt.step)
    return ckpt
