# Session/passage encoder
from src.model.config import ModelConfig
from src.model.masks import build_causal_mask, build_session_mask
from src.model.transformer import AttentionTrace, ModelWeights, forward, init_weights
from src.model.encoder import Encoder, embed_text, extract_session_anchors
from src.model.checkpoint import Checkpoint, load_checkpoint, save_checkpoint

__all__ = [
    "AttentionTrace",
    "Checkpoint",
    "Encoder",
    "ModelConfig",
    "ModelWeights",
    "build_causal_mask",
    "build_session_mask",
    "embed_text",
    "extract_session_anchors",
    "forward",
    "init_weights",
    "load_checkpoint",
    "save_checkpoint",
]
