"""
Binary serialization helpers for the checkpoint and index formats.

``BinaryWriter`` appends fixed-width integers, varints, length-prefixed
strings and little-endian float arrays to a buffer. ``ByteReader`` reads
them back and checks every length against the remaining bytes, so a
truncated or corrupted file surfaces as a ``FormatError`` instead of an
``IndexError`` or silently short arrays.
"""

from __future__ import annotations

import numpy as np

from src.errors import FormatError
from src.utils.encoding import (
    decode_varint,
    encode_varint,
    int_to_little_endian,
    little_endian_to_int,
)


class BinaryWriter:
    """Append-only byte buffer."""

    def __init__(self) -> None:
        self._parts: list[bytes] = []
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def write(self, data: bytes) -> None:
        self._parts.append(bytes(data))
        self._size += len(data)

    def write_uint(self, value: int, length: int) -> None:
        self.write(int_to_little_endian(value, length))

    def write_varint(self, value: int) -> None:
        self.write(encode_varint(value))

    def write_string(self, text: str) -> None:
        raw = text.encode("utf-8")
        self.write_varint(len(raw))
        self.write(raw)

    def write_array(self, values: np.ndarray, dtype: str) -> None:
        """Write *values* row-major with an explicit little-endian dtype (``<f8``, ``<f4``)."""
        self.write(np.ascontiguousarray(values, dtype=np.dtype(dtype)).tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class ByteReader:
    """
    Cursor over a byte buffer with bounds-checked reads.

    Attributes:
        offset: Current read position.
    """

    def __init__(self, data: bytes, offset: int = 0, what: str = "file") -> None:
        self.data = data
        self.offset = offset
        self.what = what

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

    def read(self, length: int) -> bytes:
        if length < 0 or length > self.remaining:
            raise FormatError(
                f"{self.what} truncated: need {length} bytes at offset {self.offset}, "
                f"{self.remaining} left"
            )
        chunk = self.data[self.offset:self.offset + length]
        self.offset += length
        return chunk

    def read_uint(self, length: int) -> int:
        return little_endian_to_int(self.read(length))

    def read_varint(self) -> int:
        value, consumed = decode_varint(self.data, self.offset)
        self.offset += consumed
        return value

    def read_string(self) -> str:
        raw = self.read(self.read_varint())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{self.what}: invalid UTF-8 string at offset {self.offset}") from exc

    def read_array(self, shape: tuple[int, ...], dtype: str) -> np.ndarray:
        dt = np.dtype(dtype)
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = self.read(count * dt.itemsize)
        return np.frombuffer(raw, dtype=dt).reshape(shape).copy()

    def expect_end(self) -> None:
        if self.remaining:
            raise FormatError(f"{self.what}: {self.remaining} unexpected trailing bytes")
