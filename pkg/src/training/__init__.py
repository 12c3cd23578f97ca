# Training loop, batching and hard-negative mining
from src.training.config import PRESETS, RunConfig, TrainConfig, resolve_run_config, resume_run_config
from src.training.batching import Batch, iter_micro_batches, make_batches, negative_pool
from src.training.mining import mine_hard_negatives, mining_window
from src.training.trainer import LossRecord, Trainer, TrainResult, read_loss_trace, write_loss_trace

__all__ = [
    "Batch",
    "LossRecord",
    "PRESETS",
    "RunConfig",
    "TrainConfig",
    "TrainResult",
    "Trainer",
    "iter_micro_batches",
    "make_batches",
    "mine_hard_negatives",
    "mining_window",
    "negative_pool",
    "read_loss_trace",
    "resolve_run_config",
    "resume_run_config",
    "write_loss_trace",
]
