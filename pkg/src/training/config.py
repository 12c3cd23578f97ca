"""
Training configuration and presets.

A run is described by a ``RunConfig`` with one section per concern:
``[model]``, ``[train]``, ``[contrastive]``, ``[loss]`` and ``[llm]``.
Values are resolved in three layers:

1. a named preset (``paper`` or ``desk``),
2. an optional TOML file,
3. command-line overrides.

Problems from every layer and section are collected and raised together
as one ``ConfigurationError``.

A resumed run starts from the run config stored in its checkpoint instead
(``resume_run_config``); only scheduling keys may be changed there.

Presets
-------
``paper``  Full-scale hyperparameters: 2500 steps at learning rate 1e-4,
           gradient accumulation 4, batch 64, 4 hard negatives, three
           special tokens and 1024-token sequences.
``desk``   CPU-sized runs: batch 16, 2000 steps, no accumulation, learning
           rate 1e-3, a 64-wide two-layer model over 256-token sequences.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

from src.errors import ConfigurationError
from src.model.config import ModelConfig
from src.objectives.config import ContrastiveConfig, LossWeights
from src.robustness.provider import LlmProviderConfig
from src.utils.config_file import dump_toml, load_toml, section_from_dict

logger = logging.getLogger(__name__)

DEFAULT_PRESET = "desk"


@dataclass
class TrainConfig:
    """
    Optimisation loop settings.

    ``batch_size`` is the number of samples per micro-batch; one optimizer
    step consumes ``grad_accum_steps`` micro-batches.
    """

    steps: int = 2500
    batch_size: int = 64
    grad_accum_steps: int = 4
    n_hard_negatives: int = 4
    learning_rate: float = 1e-4
    seed: int = 0
    # ablations
    no_sit: bool = False
    vanilla_it: bool = False
    no_rcot: bool = False
    # bookkeeping
    log_every: int = 50
    eval_every: int = 0
    checkpoint_every: int = 0
    remine_every: int = 0
    mining_window_lo: int = 15
    mining_window_hi: int = 30
    encode_workers: int = 1

    def validate(self) -> list[str]:
        problems = []
        for name in ("steps", "batch_size", "grad_accum_steps", "n_hard_negatives", "log_every", "encode_workers"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        for name in ("eval_every", "checkpoint_every", "remine_every"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be non-negative (0 disables it)")
        if self.learning_rate <= 0:
            problems.append("learning_rate must be positive")
        if not 1 <= self.mining_window_lo <= self.mining_window_hi:
            problems.append("mining window must satisfy 1 <= lo <= hi")
        if self.no_sit and self.vanilla_it:
            problems.append("no_sit and vanilla_it are exclusive ablations")
        return problems

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "paper": {
        "model": {"max_seq_len": 1024, "t_special": 3},
        "train": {
            "steps": 2500,
            "learning_rate": 1e-4,
            "grad_accum_steps": 4,
            "batch_size": 64,
            "n_hard_negatives": 4,
        },
        "contrastive": {"temperature": 0.05},
        "loss": {"alpha": 1.0},
    },
    "desk": {
        "model": {"d_model": 64, "n_layers": 2, "n_heads": 4, "d_ff": 256, "max_seq_len": 256, "t_special": 3},
        "train": {
            "steps": 2000,
            "learning_rate": 1e-3,
            "grad_accum_steps": 1,
            "batch_size": 16,
            "n_hard_negatives": 4,
        },
        "contrastive": {"temperature": 0.05},
        "loss": {"alpha": 1.0},
    },
}

_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "contrastive": ContrastiveConfig,
    "loss": LossWeights,
    "llm": LlmProviderConfig,
}

# Scheduling keys: the only values a resumed run may change.
RESUMABLE_KEYS: dict[str, frozenset[str]] = {
    "train": frozenset({"steps", "log_every", "eval_every", "checkpoint_every", "remine_every", "encode_workers"}),
}


@dataclass
class RunConfig:
    """All sections of one run, plus the preset it started from."""

    preset: str = DEFAULT_PRESET
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    llm: LlmProviderConfig = field(default_factory=LlmProviderConfig)

    def to_dict(self) -> dict:
        return {"preset": self.preset, **{name: asdict(getattr(self, name)) for name in _SECTIONS}}

    def to_toml(self) -> str:
        return dump_toml(self.to_dict())

    # -- ablations --------------------------------------------------------

    @property
    def t_special(self) -> int:
        """Special-token count actually used: 1 under the no_rcot ablation."""
        return 1 if self.train.no_rcot else self.model.t_special

    def effective_model_config(self, vocab_size: int | None = None) -> ModelConfig:
        changes: dict[str, Any] = {"t_special": self.t_special}
        if vocab_size is not None:
            changes["vocab_size"] = vocab_size
        return replace(self.model, **changes)

    @property
    def effective_loss(self) -> LossWeights:
        """Loss weights after ablations: no_sit drops the LM term."""
        return LossWeights(alpha=0.0) if self.train.no_sit else self.loss


def _merge(base: dict, extra: dict) -> dict:
    merged = copy.deepcopy(base)
    for section, values in extra.items():
        if isinstance(values, dict):
            merged.setdefault(section, {}).update(values)
        else:
            merged[section] = values
    return merged


def _clean(overrides: dict[str, dict[str, Any]] | None) -> dict[str, dict[str, Any]]:
    return {s: {k: v for k, v in vals.items() if v is not None} for s, vals in (overrides or {}).items()}


def _build(preset: str, layers: dict) -> RunConfig:
    problems: list[str] = []
    for key in layers:
        if key not in _SECTIONS and key != "preset":
            problems.append(f"unknown section [{key}]")
    sections = {}
    for name, cls in _SECTIONS.items():
        sections[name], found = section_from_dict(cls, layers.get(name), name)
        problems.extend(found)
    if problems:
        raise ConfigurationError(problems)

    run = RunConfig(preset=preset, **sections)
    if run.train.no_rcot:
        logger.info("no_rcot ablation: using a single special token")
    return run


def resolve_run_config(
    preset: str = DEFAULT_PRESET,
    path: str | Path | None = None,
    overrides: dict[str, dict[str, Any]] | None = None,
) -> RunConfig:
    """
    Build a RunConfig from preset, then file, then overrides.

    *overrides* maps section names to key/value pairs; ``None`` values are
    ignored so unset CLI flags fall through.

    Raises:
        ConfigurationError: Listing every problem found.
    """
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r} (choose from {', '.join(sorted(PRESETS))})")
    layers = PRESETS[preset]
    if path is not None:
        layers = _merge(layers, load_toml(path))
    if overrides:
        layers = _merge(layers, _clean(overrides))
    run = _build(preset, layers)
    logger.debug("Resolved run config from preset %s%s", preset, f" and {path}" if path else "")
    return run


def resume_run_config(
    stored: dict,
    preset: str | None = None,
    path: str | Path | None = None,
    overrides: dict[str, dict[str, Any]] | None = None,
) -> RunConfig:
    """
    Run config for continuing a checkpointed run.

    *stored* is the checkpoint's ``RunConfig.to_dict()``. A config file and
    overrides may change the keys in ``RESUMABLE_KEYS`` (and anything under
    ``[llm]``); every other value they set must equal the stored one.

    Raises:
        ConfigurationError: Listing every value that differs from the
            checkpoint, or the usual section problems.
    """
    stored_preset = stored.get("preset", DEFAULT_PRESET)
    problems: list[str] = []
    if preset is not None and preset != stored_preset:
        problems.append(f"preset: checkpoint was trained with {stored_preset!r}, got {preset!r}")
    extra = load_toml(path) if path is not None else {}
    extra = _merge(extra, _clean(overrides))

    for section, values in extra.items():
        if section == "llm" or not isinstance(values, dict):
            continue
        free = RESUMABLE_KEYS.get(section, frozenset())
        before = stored.get(section, {})
        for key, value in values.items():
            if key in free or key not in before:
                continue
            if before[key] != value:
                problems.append(f"[{section}] {key}: checkpoint has {before[key]!r}, got {value!r}")
    if problems:
        raise ConfigurationError(["resumed run must keep the checkpoint's settings", *problems])

    layers = _merge({k: v for k, v in stored.items() if k != "preset"}, extra)
    run = _build(stored_preset, layers)
    logger.info("Resuming with the checkpoint's %s run config", stored_preset)
    return run
