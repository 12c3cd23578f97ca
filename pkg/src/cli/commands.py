"""
Subcommand handlers.

Each ``cmd_*`` takes the parsed arguments and a ReportVisualizer and
returns a CommandResult describing what it read and wrote; ``main`` turns
that into a manifest and an exit code. Inputs are checked before any
output directory is created, so a failing command leaves nothing behind.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from src.cli.experiment import (
    ABLATIONS,
    ablation_runs,
    acceptance_checks,
    fresh_encoder,
    heldout_scorer,
    run_experiment,
    special_token_runs,
    training_vocabulary,
    write_acceptance_csv,
)
from src.cli.verify import run_verify
from src.errors import ConfigurationError, SchemaError
from src.evaluation.retrieval import evaluate_conversations, query_session, retrieve_sessions
from src.evaluation.trec import evaluate_run, read_qrels, read_run, write_report_csv, write_run
from src.index.store import build_index, load_index, save_index
from src.model.checkpoint import load_checkpoint, save_checkpoint
from src.model.encoder import Encoder
from src.robustness.dataset import load_eval_dataset
from src.robustness.generators import LlmContextGenerator, RuleContextGenerator
from src.robustness.harness import full_context_eval, partial_response_eval
from src.robustness.judge import HeuristicJudge, LlmJudge
from src.robustness.provider import ChatProvider
from src.robustness.report import RobustReport
from src.robustness.responder import GoldResponder, LeadSentenceResponder, LlmResponder
from src.text.conversation import Session
from src.text.loaders import load_corpus, load_training_mix
from src.text.synthetic import SyntheticTaskConfig, generate_task, write_task
from src.training.config import DEFAULT_PRESET, RunConfig, resolve_run_config, resume_run_config
from src.training.mining import mine_hard_negatives
from src.training.trainer import Trainer, write_loss_trace
from src.utils.visualizer import ReportVisualizer

logger = logging.getLogger(__name__)


@dataclass
class CommandResult:
    """What a command read, wrote and ran with; ``exit_code`` 0 means success."""

    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int | None = None
    exit_code: int = 0


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def require_files(**paths) -> dict[str, str]:
    """Check every non-empty path exists; report all missing ones at once."""
    given: dict[str, str] = {}
    for name, value in paths.items():
        if isinstance(value, (list, tuple)):
            given.update({f"{name}.{i}": str(p) for i, p in enumerate(value)})
        elif value:
            given[name] = str(value)
    missing = [f"{name}: {p} not found" for name, p in given.items() if not Path(p).exists()]
    if missing:
        raise ConfigurationError(missing)
    return given


def _flag_overrides(args: argparse.Namespace) -> dict[str, dict]:
    flags = vars(args)
    return {
        "train": {
            "seed": flags.get("seed"),
            "steps": flags.get("steps"),
            "learning_rate": flags.get("lr"),
            "batch_size": flags.get("batch_size"),
            "eval_every": flags.get("eval_every"),
            "remine_every": flags.get("remine_every"),
            "encode_workers": flags.get("workers"),
            "no_sit": flags.get("no_sit"),
            "vanilla_it": flags.get("vanilla_it"),
            "no_rcot": flags.get("no_rcot"),
        },
        "model": {"t_special": flags.get("t")},
        "loss": {"alpha": flags.get("alpha")},
        "contrastive": {"temperature": flags.get("temperature")},
    }


def resolve_from_args(args: argparse.Namespace) -> RunConfig:
    """Preset, then ``--config``, then the explicit flags of *args*."""
    return resolve_run_config(args.preset or DEFAULT_PRESET, args.config, _flag_overrides(args))


def _out_dir(args: argparse.Namespace) -> Path:
    if not args.out:
        raise ConfigurationError("--out is required for this command")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_encoder(path: str) -> Encoder:
    return load_checkpoint(path).encoder()


def load_sessions(path: str | Path) -> list[Session]:
    """A JSON session object, a JSON list of them, or JSONL with one per line."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        parsed = json.loads(text)
        records = parsed if isinstance(parsed, list) else [parsed]
    except json.JSONDecodeError:
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
    sessions = []
    for n, record in enumerate(records, start=1):
        record.setdefault("conversation_id", f"q{n}")
        try:
            sessions.append(Session.from_dict(record))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed session ({exc})", line=n, field="turns") from exc
    return sessions


# ---------------------------------------------------------------------------
# train / embed / index / search
# ---------------------------------------------------------------------------

def cmd_train(args: argparse.Namespace, viz: ReportVisualizer) -> CommandResult:
    inputs = require_files(
        train=args.train, corpus=args.corpus, resume=args.resume, mine_checkpoint=args.mine_checkpoint,
        dataset=args.eval_dataset, qrels=args.qrels,
    )
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None and resume.train_config:
        run = resume_run_config(resume.train_config, args.preset, args.config, _flag_overrides(args))
    else:
        run = resolve_from_args(args)
    samples = load_training_mix(args.train, run.train.seed)
    corpus = load_corpus(args.corpus) if args.corpus else None

    if resume is not None:
        encoder = resume.encoder()
    else:
        vocab = training_vocabulary(samples, corpus, max_size=run.model.vocab_size)
        encoder = fresh_encoder(vocab, run)

    if args.mine:
        if corpus is None:
            raise ConfigurationError("--mine needs --corpus")
        miner = _load_encoder(args.mine_checkpoint) if args.mine_checkpoint else encoder
        index = build_index(corpus, miner, workers=run.train.encode_workers)
        samples = mine_hard_negatives(
            samples, index, miner, {p.pid: p for p in corpus}, run.train.n_hard_negatives,
            run.train.mining_window_lo, run.train.mining_window_hi, seed=run.train.seed,
        )

    callback = None
    if args.eval_dataset and args.qrels and run.train.eval_every:
        if corpus is None:
            raise ConfigurationError("held-out evaluation during training needs --corpus")
        callback = heldout_scorer(load_eval_dataset(args.eval_dataset), corpus, read_qrels(args.qrels),
                                  args.k[0], workers=run.train.encode_workers)

    out = _out_dir(args)
    paths = {"checkpoint": out / "model.ckpt", "loss_trace": out / "loss_trace.csv"}
    trainer = Trainer(encoder, run, corpus=corpus, eval_callback=callback, checkpoint_path=paths["checkpoint"])
    result = trainer.train(samples, resume=resume)
    save_checkpoint(trainer.to_checkpoint(result), paths["checkpoint"])
    write_loss_trace(result.loss_trace, paths["loss_trace"])
    if result.eval_trace:
        paths["eval_curve"] = out / "eval_curve.csv"
        paths["eval_curve"].write_text(
            "step,score\n" + "".join(f"{s},{v:.6f}\n" for s, v in result.eval_trace), encoding="utf-8"
        )
    viz.print_loss_summary(result.loss_trace, every=max(1, run.train.log_every))
    return CommandResult(inputs, {k: str(v) for k, v in paths.items()}, run.to_dict(), run.train.seed)


def cmd_embed(args: argparse.Namespace, viz: ReportVisualizer) -> CommandResult:
    if bool(args.corpus) == bool(args.dataset):
        raise ConfigurationError("give exactly one of --corpus or --dataset")
    inputs = require_files(checkpoint=args.checkpoint, corpus=args.corpus, dataset=args.dataset)
    encoder = _load_encoder(args.checkpoint)
    if args.corpus:
        corpus = load_corpus(args.corpus)
        ids = [p.pid for p in corpus]
        vectors = build_index(corpus, encoder, workers=args.workers).vectors
    else:
        conversations = load_eval_dataset(args.dataset)
        sessions = [query_session(c, i, args.input_mode) for c in conversations for i in range(len(c.turns))]
        ids = [s.conversation_id for s in sessions]
        vectors = encoder.encode_sessions(sessions)

    out = _out_dir(args)
    paths = {"embeddings": out / "embeddings.npy", "ids": out / "embeddings.ids"}
    np.save(paths["embeddings"], np.asarray(vectors, dtype=np.float32))
    paths["ids"].write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")
    logger.info("Wrote %d embeddings of dim %d", len(ids), vectors.shape[1])
    return CommandResult(inputs, {k: str(v) for k, v in paths.items()})


def cmd_index(args: argparse.Namespace, viz: ReportVisualizer) -> CommandResult:
    inputs = require_files(corpus=args.corpus, checkpoint=args.checkpoint)
    index = build_index(load_corpus(args.corpus), _load_encoder(args.checkpoint), workers=args.workers,
                        metadata={"corpus": Path(args.corpus).name})
    out = _out_dir(args)
    path = save_index(index, out / "index.csix")
    return CommandResult(inputs, {"index": str(path)})


def cmd_search(args: argparse.Namespace, viz: ReportVisualizer) -> CommandResult:
    inputs = require_files(index=args.index, checkpoint=args.checkpoint, session=args.session)
    encoder = _load_encoder(args.checkpoint)
    index = load_index(args.index)
    if index.metadata.get("encoder_fingerprint") not in (None, encoder.weights.fingerprint()):
        logger.warning("Index %s was built with a different encoder", args.index)
    k = args.k[0]
    run = retrieve_sessions(load_sessions(args.session), encoder, index, depth=k, workers=args.workers)
    for entries in run.values():
        for entry in entries:
            sys.stdout.write(entry.to_line() + "\n")
    outputs = {}
    if args.out:
        outputs["run"] = str(write_run(run, _out_dir(args) / "search.run"))
    return CommandResult(inputs, outputs)


# ---------------------------------------------------------------------------
# eval / robust-eval
# ---------------------------------------------------------------------------

def cmd_eval(args: argparse.Namespace, viz: ReportVisualizer) -> CommandResult:
    inputs = require_files(run=args.run, qrels=args.qrels)
    report = evaluate_run(read_run(args.run), read_qrels(args.qrels), args.k)
    viz.print_metrics(report, title=f"Evaluation of {Path(args.run).name}")
    outputs = {}
    if args.out:
        outputs["report"] = str(write_report_csv(report, _out_dir(args) / "report.csv"))
    return CommandResult(inputs, outputs)


def _provider(run: RunConfig) -> ChatProvider | None:
    if not run.llm.enabled:
        return None
    logger.info("Using chat provider %s (%s)", run.llm.endpoint, run.llm.model)
    return ChatProvider(run.llm)


def cmd_robust_eval(args: argparse.Namespace, viz: ReportVisualizer) -> CommandResult:
    inputs = require_files(dataset=args.dataset, checkpoint=args.checkpoint, corpus=args.corpus,
                           qrels=args.qrels, index=args.index)
    run_config = resolve_from_args(args)
    conversations = load_eval_dataset(args.dataset)
    qrels = read_qrels(args.qrels)
    encoder = _load_encoder(args.checkpoint)
    corpus = load_corpus(args.corpus)
    index = load_index(args.index) if args.index else build_index(corpus, encoder, workers=args.workers)
    provider = _provider(run_config)
    name = args.name or Path(args.dataset).stem
    k = args.k[0]

    out = _out_dir(args)
    outputs: dict[str, Path] = {}
    _, reference = evaluate_conversations(conversations, encoder, index, qrels, (k,))
    report = RobustReport()
    if args.protocol in ("partial", "both"):
        if args.responder == "gold":
            responder = GoldResponder()
        elif provider is not None:
            responder = LlmResponder(provider)
        else:
            responder = LeadSentenceResponder()
        judge = LlmJudge(provider) if provider is not None else HeuristicJudge(args.threshold)
        partial = partial_response_eval(conversations, encoder, index, {p.pid: p for p in corpus}, qrels,
                                        judge, responder, k=k, reference=reference)
        outputs["partial_run"] = write_run(partial.run, out / "partial.run")
        report.add_partial(name, partial)
    if args.protocol in ("full", "both"):
        generator = (LlmContextGenerator(provider, run_config.train.seed) if provider is not None
                     else RuleContextGenerator(run_config.train.seed))
        full = full_context_eval(conversations, encoder, index, qrels, generator, k=k, workers=args.workers)
        for vid, variant_run in full.runs.items():
            outputs[f"variant{vid}_run"] = write_run(variant_run, out / f"variant{vid}.run")
        report.add_full(name, full)

    outputs["report"] = report.write_csv(out / "robust.csv")
    viz.print_robust(report, title=f"Robustness on {name}")
    return CommandResult(inputs, {k: str(v) for k, v in outputs.items()}, run_config.to_dict(),
                         run_config.train.seed)


# ---------------------------------------------------------------------------
# verify / synth / experiment
# ---------------------------------------------------------------------------

def cmd_verify(args: argparse.Namespace, viz: ReportVisualizer) -> CommandResult:
    results = run_verify(n_cases=args.cases, suites=args.suite)
    viz.print_verify(results)
    outputs = {}
    if args.out:
        path = _out_dir(args) / "verify.json"
        path.write_text(json.dumps([asdict(r) for r in results], indent=2) + "\n", encoding="utf-8")
        outputs["verify"] = str(path)
    return CommandResult(outputs=outputs, exit_code=0 if all(r.passed for r in results) else 1)


def cmd_synth(args: argparse.Namespace, viz: ReportVisualizer) -> CommandResult:
    config = SyntheticTaskConfig(
        n_entities=args.entities,
        aspects_per_entity=args.aspects,
        n_conversations=args.conversations,
        turns_per_conversation=args.turns,
        heldout_fraction=args.heldout_fraction,
        n_hard_negatives=args.negatives,
        seed=args.seed if args.seed is not None else 0,
    )
    problems = config.validate()
    if problems:
        raise ConfigurationError(problems)
    paths = write_task(generate_task(config), _out_dir(args))
    return CommandResult(outputs={k: str(v) for k, v in paths.items()}, config=asdict(config), seed=config.seed)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"expected comma-separated integers, got {text!r}") from exc


def cmd_experiment(args: argparse.Namespace, viz: ReportVisualizer) -> CommandResult:
    if not args.corpus:
        raise ConfigurationError("experiment needs --corpus")
    inputs = require_files(train=args.train, corpus=args.corpus, dataset=args.dataset, qrels=args.qrels)
    base = resolve_from_args(args)
    seeds = _int_list(args.seeds)
    if args.sweep_t:
        runs = special_token_runs(base, _int_list(args.sweep_t))
    else:
        names = [n.strip() for n in args.ablations.split(",") if n.strip()]
        unknown = [n for n in names if n not in ABLATIONS]
        if unknown:
            raise ConfigurationError([f"unknown ablation {n!r}" for n in unknown])
        runs = ablation_runs(base, names)

    samples = load_training_mix(args.train, base.train.seed)
    corpus = load_corpus(args.corpus)
    vocab = training_vocabulary(samples, corpus, max_size=base.model.vocab_size)
    result = run_experiment(runs, seeds, samples, corpus, load_eval_dataset(args.dataset),
                            read_qrels(args.qrels), k=args.k[0], vocab=vocab)

    out = _out_dir(args)
    paths = result.write(out)
    viz.print_experiment(result.means(), title="Held-out results")
    if result.curves and args.early_step:
        for config, ratio in result.curve_ratio(args.early_step).items():
            logger.info("%s: score at step %d is %.1f%% of final", config, args.early_step, 100 * ratio)

    checks = acceptance_checks(result, args.early_step)
    viz.print_acceptance(checks)
    if checks:
        paths["acceptance"] = out / "acceptance.csv"
        write_acceptance_csv(checks, paths["acceptance"])
    for check in checks:
        if not check.passed:
            logger.warning("Acceptance check failed: %s (%.4f vs %.4f)", check.name, check.observed, check.reference)
    return CommandResult(inputs, {k: str(v) for k, v in paths.items()}, base.to_dict(), base.train.seed)
