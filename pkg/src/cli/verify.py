"""
Oracle suites run by ``verify``.

Each suite compares an implementation against an independent reference
and reports the largest error it observed:

- ``gradient``: reverse-mode gradients of the full combined loss on a
  two-layer toy model against central finite differences.
- ``contrastive``: closed-form values of the contrastive loss.
- ``mask``: post-softmax attention mass that response rows put on
  ordinary session columns (must be exactly 0).
- ``two_pass``: single-pass session-masked LM loss against the two-pass
  construction.
- ``metrics``: NDCG, recall and MRR against loop-based references.

The mask builder is injectable so a broken builder can be shown to fail.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from src.evaluation.metrics import mrr_at_k, ndcg_at_k, recall_at_k
from src.model.config import ModelConfig
from src.model.encoder import Encoder
from src.model.masks import build_session_mask
from src.model.transformer import AttentionTrace, forward, init_weights
from src.numeric import Tensor
from src.numeric.gradcheck import finite_difference_gradient, relative_error
from src.objectives.config import ContrastiveConfig, LossWeights
from src.objectives.losses import MaskBuilder, combined_loss, contrastive_loss, session_masked_lm_loss
from src.objectives.oracle import two_pass_lm_loss_oracle
from src.text.conversation import Passage, Role, Session, TrainingSample, Turn
from src.text.formatting import PackedSequence, pack_training_sequence
from src.text.vocab import build_vocabulary

logger = logging.getLogger(__name__)

TOY_TEXTS = (
    "what is the cost of karo", "the cost of karo is low", "what about its climate",
    "the climate of karo is mild", "rain falls in spring", "the size of lomi is small",
)


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    cases: int
    seconds: float = 0.0


def _result(name: str, errors: Sequence[float], tolerance: float, started: float, strict: bool = False) -> SuiteResult:
    worst = max(errors) if errors else 0.0
    passed = worst == 0.0 if strict else worst < tolerance
    return SuiteResult(name, passed, worst, tolerance, len(errors), time.perf_counter() - started)


def _toy_config(vocab_size: int, n_layers: int, t: int, max_seq_len: int = 48) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, d_model=8, n_layers=n_layers, n_heads=2, d_ff=16,
                       max_seq_len=max_seq_len, t_special=t, init_std=0.3)


def _random_packed(rng: np.random.Generator, vocab_size: int, n: int, m: int, t: int) -> PackedSequence:
    specials = list(range(5, 5 + t))
    session = [int(i) for i in rng.integers(13, vocab_size, size=n)] + specials
    response = [int(i) for i in rng.integers(13, vocab_size, size=m)] + specials
    return PackedSequence.from_parts(session, response, t)


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def gradient_suite(seed: int = 21, tolerance: float = 1e-4, eps: float = 1e-5) -> SuiteResult:
    """One relative error per parameter tensor of the combined loss."""
    started = time.perf_counter()
    vocab = build_vocabulary(TOY_TEXTS)
    config = _toy_config(len(vocab), n_layers=2, t=2)
    weights = init_weights(config, seed=seed)
    encoder = Encoder(vocab, weights)
    sample = TrainingSample(
        Session("toy", (Turn(Role.USER, TOY_TEXTS[0]), Turn(Role.ASSISTANT, TOY_TEXTS[1]),
                        Turn(Role.USER, TOY_TEXTS[2]))),
        Passage("pos", TOY_TEXTS[3]),
        (Passage("n1", TOY_TEXTS[4]), Passage("n2", TOY_TEXTS[5])),
    )
    session_ids = encoder.session_ids(sample.session)
    pos_ids = encoder.passage_ids(sample.positive)
    neg_ids = [encoder.passage_ids(n) for n in sample.hard_negatives]
    seq = pack_training_sequence(sample, vocab, config.t_special, config.max_seq_len)
    cfg, w = ContrastiveConfig(temperature=0.5), LossWeights(alpha=1.0)

    def objective(_=None) -> Tensor:
        l_c = contrastive_loss(encoder.embed_ids(session_ids), encoder.embed_ids(pos_ids),
                               [encoder.embed_ids(ids) for ids in neg_ids], cfg)
        return combined_loss(l_c, session_masked_lm_loss(seq, weights), w)

    weights.zero_grad()
    objective().backward()
    errors = []
    for param in weights:
        numeric = finite_difference_gradient(objective, param, eps=eps)
        errors.append(relative_error(param.grad, numeric))
        logger.debug("gradient %s: relative error %.2e", param.name, errors[-1])
    return _result("gradient", errors, tolerance, started)


def contrastive_suite(tolerance: float = 1e-9) -> SuiteResult:
    started = time.perf_counter()

    def unit(*values) -> Tensor:
        v = np.asarray(values, dtype=np.float64)
        return Tensor(v / np.linalg.norm(v))

    errors = []
    for k in (1, 4, 8):
        e = unit(1.0, 2.0, 3.0)
        loss = contrastive_loss(e, e, [e] * k, ContrastiveConfig(temperature=0.05)).item()
        errors.append(abs(loss - math.log(k + 1)))
    loss = contrastive_loss(unit(1, 0, 0), unit(1, 0, 0), [unit(0, 1, 0), unit(0, 0, 1)],
                            ContrastiveConfig(temperature=1.0)).item()
    errors.append(abs(loss - math.log(1.0 + 2.0 / math.e)))
    return _result("contrastive", errors, tolerance, started)


def mask_suite(n_cases: int = 100, seed: int = 0, mask_builder: MaskBuilder = build_session_mask) -> SuiteResult:
    """Largest attention mass from response rows onto ordinary session columns; must be exactly 0."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    vocab_size = 40
    errors = []
    for case in range(n_cases):
        t = int(rng.integers(1, 4))
        seq = _random_packed(rng, vocab_size, int(rng.integers(1, 17)), int(rng.integers(1, 17)), t)
        weights = init_weights(_toy_config(vocab_size, int(rng.integers(1, 3)), t), seed=case)
        trace = AttentionTrace()
        forward(list(seq.token_ids), mask_builder(seq), weights, trace=trace)
        start, n = seq.response_start, seq.n_session
        errors.append(max(float(np.abs(p[:, start:, :n]).max()) for p in trace.probs))
    return _result("mask", errors, 0.0, started, strict=True)


def two_pass_suite(
    n_cases: int = 100,
    seed: int = 1,
    mask_builder: MaskBuilder = build_session_mask,
    tolerance: float = 1e-5,
) -> SuiteResult:
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    vocab_size = 40
    errors = []
    for case in range(n_cases):
        t = int(rng.integers(1, 4))
        seq = _random_packed(rng, vocab_size, int(rng.integers(1, 17)), int(rng.integers(1, 17)), t)
        weights = init_weights(_toy_config(vocab_size, int(rng.integers(1, 3)), t), seed=case)
        joint = session_masked_lm_loss(seq, weights, mask_builder=mask_builder).item()
        errors.append(abs(joint - two_pass_lm_loss_oracle(seq, weights)))
    return _result("two_pass", errors, tolerance, started)


def _reference_dcg(grades: Sequence[int]) -> float:
    total = 0.0
    for i, rel in enumerate(grades):
        total += (2 ** rel - 1) / math.log(i + 2, 2)
    return total


def _reference_metrics(ranked: list[str], judgments: dict[str, int], k: int) -> tuple[float, float, float]:
    ideal = _reference_dcg(sorted(judgments.values(), reverse=True)[:k])
    ndcg = _reference_dcg([judgments.get(p, 0) for p in ranked[:k]]) / ideal if ideal > 0 else 0.0
    relevant = [p for p, g in judgments.items() if g >= 1]
    recall = sum(p in ranked[:k] for p in relevant) / len(relevant) if relevant else 0.0
    rr = next((1.0 / (i + 1) for i, p in enumerate(ranked[:k]) if judgments.get(p, 0) >= 1), 0.0)
    return ndcg, recall, rr


def metric_suite(n_cases: int = 50, seed: int = 2, tolerance: float = 1e-9) -> SuiteResult:
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    errors = [abs(ndcg_at_k(["a", "b", "c"], {"a": 1, "c": 2}, 3) - 2.5 / (3.0 + 1.0 / math.log2(3)))]
    pids = [f"d{i}" for i in range(12)]
    for _ in range(n_cases):
        ranked = [str(p) for p in rng.permutation(pids)]
        judged = rng.choice(pids, size=int(rng.integers(1, 8)), replace=False)
        judgments = {str(p): int(rng.integers(0, 4)) for p in judged}
        for k in (1, 3, 5, 10):
            expected = _reference_metrics(ranked, judgments, k)
            got = (ndcg_at_k(ranked, judgments, k), recall_at_k(ranked, judgments, k), mrr_at_k(ranked, judgments, k))
            errors.append(max(abs(a - b) for a, b in zip(got, expected)))
    return _result("metrics", errors, tolerance, started)


def run_verify(
    mask_builder: MaskBuilder = build_session_mask,
    n_cases: int = 100,
    suites: Sequence[str] | None = None,
) -> list[SuiteResult]:
    """Run the selected suites (all by default) and log a line per suite."""
    available: dict[str, Callable[[], SuiteResult]] = {
        "gradient": gradient_suite,
        "contrastive": contrastive_suite,
        "mask": lambda: mask_suite(n_cases, mask_builder=mask_builder),
        "two_pass": lambda: two_pass_suite(n_cases, mask_builder=mask_builder),
        "metrics": metric_suite,
    }
    results = []
    for name in suites or available:
        result = available[name]()
        log = logger.info if result.passed else logger.warning
        log("suite %s: %s (max error %.3e over %d cases, %.1fs)",
            name, "pass" if result.passed else "FAIL", result.max_error, result.cases, result.seconds)
        results.append(result)
    return results
