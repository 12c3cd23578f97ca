"""
Content hashes.

SHA-256 serves two purposes here:

- the trailing digest of a checkpoint file, which detects truncation and
  bit rot before any weights are trusted;
- the fingerprint of a set of weights, stored in index metadata so an
  index can be matched to the checkpoint that produced it.
"""

import hashlib
from typing import Mapping

import numpy as np

DIGEST_SIZE = 32


def sha256(data: bytes) -> bytes:
    """
    Compute the 32-byte SHA-256 digest of *data*.

    Example:
        >>> sha256(b"hello").hex()
        '2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824'
    """
    return hashlib.sha256(data).digest()


def arrays_fingerprint(arrays: Mapping[str, np.ndarray]) -> str:
    """
    Hex SHA-256 over named arrays, independent of dict insertion order.

    Each entry contributes its name, shape and little-endian float64 bytes,
    so two weight sets share a fingerprint only if they are bitwise equal.
    """
    h = hashlib.sha256()
    for name in sorted(arrays):
        value = np.ascontiguousarray(arrays[name], dtype="<f8")
        h.update(name.encode("utf-8"))
        h.update(repr(value.shape).encode("ascii"))
        h.update(value.tobytes())
    return h.hexdigest()
