"""Loss hyperparameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass
class ContrastiveConfig:
    """Temperature and negative-pool settings of the contrastive ranking loss."""

    temperature: float = 0.05
    use_in_batch_negatives: bool = True

    def validate(self) -> list[str]:
        return [] if self.temperature > 0 else ["temperature must be positive"]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossWeights:
    """Weight of the session-masked LM loss in ``L_C + alpha * L_S``."""

    alpha: float = 1.0

    def validate(self) -> list[str]:
        return [] if self.alpha >= 0 else ["alpha must be non-negative"]

    def to_dict(self) -> dict:
        return asdict(self)
