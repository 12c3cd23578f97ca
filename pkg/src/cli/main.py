"""
Command-line entry point: ``python -m src.cli <command> [options]``.

Exit codes: 0 on success, 2 for errors raised by this package (bad input,
bad configuration, corrupt files), 1 for anything else, including failed
verify suites.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from typing import Callable, Sequence

from rich.console import Console
from rich.logging import RichHandler

from src.cli import commands
from src.cli.manifest import RunManifest, write_manifest
from src.errors import CSITError
from src.evaluation.retrieval import INPUT_MODES
from src.robustness.judge import DEFAULT_THRESHOLD
from src.training.config import PRESETS
from src.utils.visualizer import ReportVisualizer

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USER_ERROR = 2

Handler = Callable[[argparse.Namespace, ReportVisualizer], commands.CommandResult]


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=True)],
        force=True,
    )


def _common() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", default=None, help="TOML config file applied over the preset")
    parser.add_argument("--preset", default=None, choices=sorted(PRESETS), help="Base hyperparameters (default: desk)")
    parser.add_argument("--seed", type=int, default=None, help="Overrides the configured seed")
    parser.add_argument("--out", default=None, help="Output directory")
    parser.add_argument("--k", type=int, nargs="+", default=[3], help="Cutoff(s); the first one drives search")
    parser.add_argument("--workers", type=int, default=1, help="Encoding threads")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def _training_flags() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--train", nargs="+", required=True, help="Training JSONL file(s), mixed uniformly")
    parser.add_argument("--corpus", default=None, help="Passage corpus (TSV or JSONL)")
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--alpha", type=float, default=None, help="Weight of the session-masked LM loss")
    parser.add_argument("--temperature", type=float, default=None)
    parser.add_argument("--t", type=int, default=None, help="Number of special embedding tokens")
    parser.add_argument("--eval-every", type=int, default=None)
    parser.add_argument("--remine-every", type=int, default=None)
    parser.add_argument("--no-sit", action="store_true", default=None, help="Drop the LM term")
    parser.add_argument("--vanilla-it", action="store_true", default=None, help="Plain causal mask for the LM term")
    parser.add_argument("--no-rcot", action="store_true", default=None, help="Single special token")
    return parser


def build_parser() -> argparse.ArgumentParser:
    common, training = _common(), _training_flags()
    parser = argparse.ArgumentParser(prog="csit", description="Conversational dense retrieval toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common, training], help="Train an encoder")
    p.add_argument("--resume", default=None, help="Checkpoint to continue from")
    p.add_argument("--mine", action="store_true", help="Mine hard negatives from --corpus before training")
    p.add_argument("--mine-checkpoint", default=None, help="Encoder used for mining (default: the fresh one)")
    p.add_argument("--eval-dataset", default=None, help="Held-out conversations for the eval curve")
    p.add_argument("--qrels", default=None)
    p.set_defaults(handler=commands.cmd_train)

    p = sub.add_parser("embed", parents=[common], help="Write session or passage embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", default=None)
    p.add_argument("--dataset", default=None, help="Evaluation conversations")
    p.add_argument("--input-mode", default="session", choices=INPUT_MODES)
    p.set_defaults(handler=commands.cmd_embed)

    p = sub.add_parser("index", parents=[common], help="Build a passage index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(handler=commands.cmd_index)

    p = sub.add_parser("search", parents=[common], help="Print TREC run lines for sessions")
    p.add_argument("--index", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--session", required=True, help="Session JSON or JSONL")
    p.set_defaults(handler=commands.cmd_search)

    p = sub.add_parser("eval", parents=[common], help="Score a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.set_defaults(handler=commands.cmd_eval)

    p = sub.add_parser("robust-eval", parents=[common], help="Partial-response and full-context protocols")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--index", default=None, help="Prebuilt index (default: build from --corpus)")
    p.add_argument("--protocol", default="both", choices=["partial", "full", "both"])
    p.add_argument("--responder", default="lead", choices=["lead", "gold"])
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="Heuristic judge overlap threshold")
    p.add_argument("--name", default=None, help="Dataset label in the report")
    p.set_defaults(handler=commands.cmd_robust_eval)

    p = sub.add_parser("verify", parents=[common], help="Run the oracle suites")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--suite", action="append", default=None,
                   choices=["gradient", "contrastive", "mask", "two_pass", "metrics"])
    p.set_defaults(handler=commands.cmd_verify)

    p = sub.add_parser("synth", parents=[common], help="Generate the synthetic coreference task")
    p.add_argument("--entities", type=int, default=400)
    p.add_argument("--aspects", type=int, default=5)
    p.add_argument("--conversations", type=int, default=200)
    p.add_argument("--turns", type=int, default=3)
    p.add_argument("--negatives", type=int, default=4)
    p.add_argument("--heldout-fraction", type=float, default=0.2)
    p.set_defaults(handler=commands.cmd_synth)

    p = sub.add_parser("experiment", parents=[common, training], help="Seeded ablation or t-sweep runs")
    p.add_argument("--dataset", required=True, help="Held-out conversations")
    p.add_argument("--qrels", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--ablations", default="csit,no_sit,vanilla_it,no_rcot")
    p.add_argument("--sweep-t", default=None, help="Comma-separated t values; replaces --ablations")
    p.add_argument("--early-step", type=int, default=500, help="Step compared against the final score")
    p.set_defaults(handler=commands.cmd_experiment)
    return parser


def main(argv: Sequence[str] | None = None, viz: ReportVisualizer | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    viz = viz or ReportVisualizer()
    handler: Handler = args.handler
    started = time.perf_counter()

    try:
        result = handler(args, viz)
    except CSITError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return EXIT_USER_ERROR
    except Exception:
        logger.exception("%s failed unexpectedly", args.command)
        return EXIT_FAILURE

    if args.out and result.outputs:
        manifest = RunManifest(
            command=args.command,
            argv=argv,
            config=result.config,
            seed=result.seed if result.seed is not None else args.seed,
            inputs=result.inputs,
            outputs=result.outputs,
            seconds=round(time.perf_counter() - started, 3),
        )
        write_manifest(manifest, args.out)
    return result.exit_code
