"""
Word-level vocabulary and tokenizer.

Text is lowercased and split into runs of word characters and single
punctuation marks. Reserved tokens are written in brackets, which the
splitter never emits, so an ordinary word can never map to a reserved id.

Reserved ids, in order:

- ``[PAD]``, ``[UNK]``
- ``[USER]``, ``[ASSISTANT]``: role markers of the chat template
- ``[SEP]``: end of a turn
- ``[EMB_1]`` .. ``[EMB_8]``: embedding specials; a model with ``t`` specials
  uses the first ``t``
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from src.errors import ConfigurationError, SchemaError

logger = logging.getLogger(__name__)

MAX_SPECIAL_TOKENS = 8

PAD = "[PAD]"
UNK = "[UNK]"
USER = "[USER]"
ASSISTANT = "[ASSISTANT]"
SEP = "[SEP]"
EMB_TOKENS = tuple(f"[EMB_{i}]" for i in range(1, MAX_SPECIAL_TOKENS + 1))
RESERVED_TOKENS = (PAD, UNK, USER, ASSISTANT, SEP) + EMB_TOKENS

_WORD_RE = re.compile(r"\w+|[^\w\s]")


def split_words(text: str) -> list[str]:
    """Lowercase *text* and split it into word and punctuation tokens."""
    return _WORD_RE.findall(text.lower())


@dataclass
class Vocabulary:
    """
    Bidirectional token/id map with the reserved tokens at fixed ids.

    Attributes:
        tokens: Token string for every id.
    """

    tokens: list[str] = field(default_factory=lambda: list(RESERVED_TOKENS))

    def __post_init__(self):
        if tuple(self.tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise SchemaError("vocabulary does not start with the reserved tokens", field="tokens")
        self._index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise SchemaError("vocabulary contains duplicate tokens", field="tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        return self._index.get(token, self.unk_id)

    @property
    def pad_id(self) -> int:
        return self._index[PAD]

    @property
    def unk_id(self) -> int:
        return self._index[UNK]

    @property
    def user_id(self) -> int:
        return self._index[USER]

    @property
    def assistant_id(self) -> int:
        return self._index[ASSISTANT]

    @property
    def sep_id(self) -> int:
        return self._index[SEP]

    def emb_ids(self, t: int) -> list[int]:
        """Ids of ``[EMB_1]`` .. ``[EMB_t]``."""
        if not 1 <= t <= MAX_SPECIAL_TOKENS:
            raise ConfigurationError(f"t_special must be in [1, {MAX_SPECIAL_TOKENS}], got {t}")
        return [self._index[tok] for tok in EMB_TOKENS[:t]]

    @property
    def reserved_ids(self) -> frozenset[int]:
        return frozenset(range(len(RESERVED_TOKENS)))

    def to_dict(self) -> dict:
        return {"tokens": list(self.tokens)}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        return cls(tokens=list(data["tokens"]))


def build_vocabulary(
    texts: Iterable[str],
    min_count: int = 1,
    max_size: int | None = None,
) -> Vocabulary:
    """
    Build a vocabulary from raw texts.

    Words are ranked by descending frequency, ties broken alphabetically, so
    the result is independent of text order. *max_size* includes the
    reserved tokens.
    """
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(split_words(text))

    ranked = sorted(
        (w for w, c in counts.items() if c >= min_count),
        key=lambda w: (-counts[w], w),
    )
    if max_size is not None:
        ranked = ranked[: max(0, max_size - len(RESERVED_TOKENS))]

    vocab = Vocabulary(tokens=list(RESERVED_TOKENS) + ranked)
    logger.info("Vocabulary built: %d tokens (%d distinct words seen)", len(vocab), len(counts))
    return vocab


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Map *text* to token ids; unknown words become ``[UNK]``."""
    return [vocab.id_of(w) for w in split_words(text)]


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Join the token strings of *ids* with single spaces."""
    return " ".join(vocab.tokens[i] for i in ids)
