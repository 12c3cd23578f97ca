"""
Additive attention masks.

A mask is an ``L x L`` float array holding 0 where row ``i`` may attend to
column ``j`` and ``-inf`` where it may not. Both builders only ever allow
columns at or before the row, and every row allows at least its own
position.
"""

from __future__ import annotations

import numpy as np

from src.errors import ContractError
from src.text.formatting import PackedSequence


def build_causal_mask(length: int) -> np.ndarray:
    """Row ``i`` attends to columns ``0..i``."""
    if length < 1:
        raise ContractError(f"mask length must be at least 1, got {length}")
    return np.triu(np.full((length, length), -np.inf), k=1)


def build_session_mask(seq: PackedSequence) -> np.ndarray:
    """
    Session-masked attention for a packed sequence.

    Rows of the session region (ordinary tokens and session specials) are
    causal. Rows of the response region see only the session specials and
    response positions up to themselves; ordinary session tokens are
    hidden from them.
    """
    mask = build_causal_mask(len(seq))
    mask[seq.response_start:, : seq.n_session] = -np.inf
    return mask


def allowed_columns(mask: np.ndarray, row: int) -> set[int]:
    return {int(j) for j in np.flatnonzero(mask[row] == 0.0)}


def check_mask(mask: np.ndarray) -> None:
    """
    Raises:
        ContractError: If the mask is not square, allows a later column, or
            leaves a row with nothing to attend to.
    """
    if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
        raise ContractError(f"attention mask must be square, got {mask.shape}")
    allowed = mask == 0.0
    if np.any(np.triu(allowed, k=1)):
        raise ContractError("attention mask lets a position see a later one")
    if not np.all(allowed.any(axis=1)):
        raise ContractError("attention mask has a row with no allowed column")
