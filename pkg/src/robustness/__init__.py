# Robustness protocols: partial response and full context modification
from src.robustness.dataset import load_eval_dataset, write_eval_dataset
from src.robustness.generators import (
    ContextVariant,
    LlmContextGenerator,
    RuleContextGenerator,
    full_context_variants,
)
from src.robustness.harness import (
    FullContextResult,
    PartialResponseResult,
    full_context_eval,
    partial_response_eval,
)
from src.robustness.judge import HeuristicJudge, JudgeVerdict, LlmJudge
from src.robustness.provider import ChatProvider, LlmProviderConfig
from src.robustness.report import RobustReport, mean_sd, robust_report
from src.robustness.responder import (
    GoldResponder,
    LeadSentenceResponder,
    LlmResponder,
    synthesize_response,
)

__all__ = [
    "ChatProvider",
    "ContextVariant",
    "FullContextResult",
    "GoldResponder",
    "HeuristicJudge",
    "JudgeVerdict",
    "LeadSentenceResponder",
    "LlmContextGenerator",
    "LlmJudge",
    "LlmProviderConfig",
    "LlmResponder",
    "PartialResponseResult",
    "RobustReport",
    "RuleContextGenerator",
    "full_context_eval",
    "full_context_variants",
    "load_eval_dataset",
    "mean_sd",
    "partial_response_eval",
    "robust_report",
    "synthesize_response",
    "write_eval_dataset",
]
