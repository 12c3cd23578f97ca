"""Encoder hyperparameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from src.errors import ConfigurationError
from src.text.vocab import MAX_SPECIAL_TOKENS


@dataclass
class ModelConfig:
    """
    Shape of the decoder-style encoder.

    ``vocab_size`` is normally filled in from the vocabulary when training
    starts; the value in a config file is only a ceiling for vocabulary
    construction.
    """

    vocab_size: int = 8000
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_seq_len: int = 256
    t_special: int = 3
    dropout: float = 0.0
    layer_norm_eps: float = 1e-5
    init_std: float = 0.02

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def validate(self) -> list[str]:
        problems = []
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if self.n_heads >= 1 and self.d_model % self.n_heads != 0:
            problems.append(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if not 1 <= self.t_special <= MAX_SPECIAL_TOKENS:
            problems.append(f"t_special must be in [1, {MAX_SPECIAL_TOKENS}]")
        if not 0.0 <= self.dropout < 1.0:
            problems.append("dropout must be in [0, 1)")
        if self.layer_norm_eps <= 0 or self.init_std <= 0:
            problems.append("layer_norm_eps and init_std must be positive")
        return problems

    def check(self) -> "ModelConfig":
        problems = self.validate()
        if problems:
            raise ConfigurationError(problems)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        from src.utils.config_file import section_from_dict

        config, problems = section_from_dict(cls, data, "model")
        if problems:
            raise ConfigurationError(problems)
        return config
