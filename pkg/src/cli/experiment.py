"""
Seeded comparison runs behind the ``experiment`` command.

A run set is a list of named configurations (the full objective and its
ablations, or one configuration per special-token count) crossed with a
list of seeds. Every run trains a fresh encoder on the same samples and is
scored on the held-out conversations with NDCG@k. The full objective is
also scored with current-query-only and rewrite inputs. With
``eval_every`` set, the held-out score is recorded during training as well.
``acceptance_checks`` turns the means and curves into pass/fail directional
checks: the full objective against its α = 0 ablation, session against
query-only input, and the early-step share of the final score.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from src.evaluation.retrieval import evaluate_conversations
from src.index.store import build_index
from src.model.encoder import Encoder
from src.model.transformer import init_weights
from src.text.conversation import EvalConversation, Passage, TrainingSample
from src.text.vocab import Vocabulary, build_vocabulary
from src.training.config import RunConfig
from src.training.trainer import EvalCallback, Trainer

logger = logging.getLogger(__name__)

ABLATIONS: dict[str, dict[str, bool]] = {
    "csit": {},
    "no_sit": {"no_sit": True},
    "vanilla_it": {"vanilla_it": True},
    "no_rcot": {"no_rcot": True},
}

FULL_OBJECTIVE = "csit"
ABLATION_BASELINE = "no_sit"
MIN_EARLY_RATIO = 0.8


def training_vocabulary(
    samples: Sequence[TrainingSample],
    corpus: Sequence[Passage] | None = None,
    max_size: int | None = None,
) -> Vocabulary:
    """Vocabulary over every turn, positive and negative, plus the corpus."""
    texts: list[str] = []
    for s in samples:
        texts.extend(t.text for t in s.session.turns)
        texts.append(s.positive.text)
        texts.extend(n.text for n in s.hard_negatives)
    if corpus:
        texts.extend(p.text for p in corpus)
    return build_vocabulary(texts, max_size=max_size)


def fresh_encoder(vocab: Vocabulary, run: RunConfig) -> Encoder:
    return Encoder(vocab, init_weights(run.effective_model_config(len(vocab)), seed=run.train.seed))


def heldout_scorer(
    conversations: Sequence[EvalConversation],
    corpus: Sequence[Passage],
    qrels: Mapping[str, Mapping[str, int]],
    k: int = 3,
    input_mode: str = "session",
    workers: int = 1,
) -> EvalCallback:
    """Callback that indexes *corpus* with the current encoder and returns mean NDCG@k."""

    def score(step: int, encoder: Encoder) -> float:
        index = build_index(corpus, encoder, workers=workers)
        _, report = evaluate_conversations(conversations, encoder, index, qrels, (k,), input_mode)
        return report.mean(f"ndcg@{k}")

    return score


def ablation_runs(base: RunConfig, names: Sequence[str]) -> dict[str, RunConfig]:
    return {name: replace(base, train=replace(base.train, **ABLATIONS[name])) for name in names}


def special_token_runs(base: RunConfig, counts: Sequence[int]) -> dict[str, RunConfig]:
    return {f"t={t}": replace(base, model=replace(base.model, t_special=t)) for t in counts}


@dataclass
class ExperimentResult:
    """
    Attributes:
        scores: Rows ``{config, seed, input, ndcg@k}``.
        curves: Rows ``{config, seed, step, ndcg@k}``.
    """

    metric: str
    scores: list[dict] = field(default_factory=list)
    curves: list[dict] = field(default_factory=list)

    def means(self) -> list[dict]:
        """Mean and SD over seeds per (config, input), in first-seen order."""
        groups: dict[tuple[str, str], list[float]] = {}
        for row in self.scores:
            groups.setdefault((row["config"], row["input"]), []).append(row[self.metric])
        return [
            {"config": c, "input": i, "seeds": len(v), self.metric: float(np.mean(v)), "sd": float(np.std(v))}
            for (c, i), v in groups.items()
        ]

    def curve_ratio(self, early_step: int) -> dict[str, float]:
        """Per config: mean score at *early_step* over mean score at the last recorded step."""
        ratios = {}
        for config in dict.fromkeys(r["config"] for r in self.curves):
            rows = [r for r in self.curves if r["config"] == config]
            last = max(r["step"] for r in rows)
            early = [r[self.metric] for r in rows if r["step"] == early_step]
            final = float(np.mean([r[self.metric] for r in rows if r["step"] == last]))
            if early and final > 0:
                ratios[config] = float(np.mean(early)) / final
        return ratios

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"scores": out / "experiment.csv"}
        _write_rows(self.scores, paths["scores"])
        if self.curves:
            paths["curves"] = out / "curve.csv"
            _write_rows(self.curves, paths["curves"])
        return paths


def _write_rows(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


@dataclass(frozen=True)
class AcceptanceCheck:
    """One directional claim over an experiment: ``observed`` against ``reference``."""

    name: str
    observed: float
    reference: float
    passed: bool


def acceptance_checks(
    result: ExperimentResult,
    early_step: int | None = None,
    min_ratio: float = MIN_EARLY_RATIO,
) -> list[AcceptanceCheck]:
    """
    Directional checks over seed means of the full objective.

    - full objective ≥ the α = 0 ablation (both with session input)
    - session input ≥ current-query-only input
    - score at *early_step* ≥ *min_ratio* of the final score

    A check is left out when the rows it needs were not run.
    """
    means = {(row["config"], row["input"]): row[result.metric] for row in result.means()}
    full = means.get((FULL_OBJECTIVE, "session"))
    if full is None:
        return []
    checks = []
    baseline = means.get((ABLATION_BASELINE, "session"))
    if baseline is not None:
        checks.append(AcceptanceCheck(f"{FULL_OBJECTIVE} >= {ABLATION_BASELINE}", full, baseline, full >= baseline))
    query = means.get((FULL_OBJECTIVE, "query"))
    if query is not None:
        checks.append(AcceptanceCheck("session >= query input", full, query, full >= query))
    if early_step is not None:
        ratio = result.curve_ratio(early_step).get(FULL_OBJECTIVE)
        if ratio is not None:
            checks.append(AcceptanceCheck(f"step {early_step} / final >= {min_ratio:g}", ratio, min_ratio,
                                          ratio >= min_ratio))
    return checks


def write_acceptance_csv(checks: Sequence[AcceptanceCheck], path: str | Path) -> None:
    _write_rows([asdict(c) for c in checks], Path(path))


def run_experiment(
    runs: Mapping[str, RunConfig],
    seeds: Sequence[int],
    samples: Sequence[TrainingSample],
    corpus: Sequence[Passage],
    heldout: Sequence[EvalConversation],
    qrels: Mapping[str, Mapping[str, int]],
    k: int = 3,
    vocab: Vocabulary | None = None,
) -> ExperimentResult:
    """Train and score every configuration under every seed."""
    metric = f"ndcg@{k}"
    vocab = vocab or training_vocabulary(samples, corpus)
    result = ExperimentResult(metric)
    for name, base in runs.items():
        for seed in seeds:
            run = replace(base, train=replace(base.train, seed=seed))
            encoder = fresh_encoder(vocab, run)
            callback = heldout_scorer(heldout, corpus, qrels, k, workers=run.train.encode_workers)
            trainer = Trainer(encoder, run, corpus=corpus, eval_callback=callback)
            trained = trainer.train(samples)
            for step, score in trained.eval_trace:
                result.curves.append({"config": name, "seed": seed, "step": step, metric: score})

            index = build_index(corpus, encoder, workers=run.train.encode_workers)
            modes = ("session", "query", "rewrite") if name == FULL_OBJECTIVE else ("session",)
            for mode in modes:
                _, report = evaluate_conversations(heldout, encoder, index, qrels, (k,), mode)
                result.scores.append({"config": name, "seed": seed, "input": mode, metric: report.mean(metric)})
            logger.info("%s seed %d: held-out %s %.4f", name, seed, metric, result.scores[-len(modes)][metric])
    return result
