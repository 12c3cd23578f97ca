# Conversation data, tokenizer, templates and loaders
from src.text.conversation import (
    EvalConversation,
    EvalTurn,
    Passage,
    Role,
    Session,
    TrainingSample,
    Turn,
)
from src.text.vocab import Vocabulary, build_vocabulary, detokenize, split_words, tokenize
from src.text.formatting import (
    PackedSequence,
    Segment,
    format_passage,
    format_response,
    format_session,
    pack_training_sequence,
)
from src.text.loaders import load_corpus, load_training_jsonl, load_training_mix

__all__ = [
    "EvalConversation",
    "EvalTurn",
    "PackedSequence",
    "Passage",
    "Role",
    "Segment",
    "Session",
    "TrainingSample",
    "Turn",
    "Vocabulary",
    "build_vocabulary",
    "detokenize",
    "format_passage",
    "format_response",
    "format_session",
    "load_corpus",
    "load_training_jsonl",
    "load_training_mix",
    "pack_training_sequence",
    "split_words",
    "tokenize",
]
