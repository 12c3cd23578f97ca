# Training objectives
from src.objectives.config import ContrastiveConfig, LossWeights
from src.objectives.losses import (
    causal_mask_for,
    combined_loss,
    contrastive_loss,
    score_phi,
    session_masked_lm_loss,
)
from src.objectives.oracle import two_pass_lm_loss_oracle

__all__ = [
    "ContrastiveConfig",
    "LossWeights",
    "causal_mask_for",
    "combined_loss",
    "contrastive_loss",
    "score_phi",
    "session_masked_lm_loss",
    "two_pass_lm_loss_oracle",
]
