# Dense passage index
from src.index.store import (
    EmbeddingIndex,
    SearchHit,
    build_index,
    load_index,
    save_index,
    search_many,
    search_topk,
)

__all__ = [
    "EmbeddingIndex",
    "SearchHit",
    "build_index",
    "load_index",
    "save_index",
    "search_many",
    "search_topk",
]
