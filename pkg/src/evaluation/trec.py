"""
TREC Files and Run Evaluation
=============================

Qrels lines:  ``qid 0 pid rel``            (whitespace separated)
Run lines:    ``qid Q0 pid rank score tag``

``evaluate_run`` scores every query of a run against the qrels and
macro-averages per metric. A query is excluded from the means, and
counted in ``n_excluded``, when the qrels have no relevant pid for it
(absent, or only zero grades). Queries that appear in the qrels but not in
the run are not scored.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from src.errors import EvaluationError
from src.evaluation.metrics import METRICS, has_relevant

if TYPE_CHECKING:
    from src.index.store import SearchHit

logger = logging.getLogger(__name__)

Qrels = dict[str, dict[str, int]]

DEFAULT_METRICS = ("ndcg", "recall", "mrr")


@dataclass(frozen=True)
class RunEntry:
    qid: str
    pid: str
    rank: int
    score: float
    tag: str = "csit"

    def to_line(self) -> str:
        return f"{self.qid} Q0 {self.pid} {self.rank} {self.score:.6f} {self.tag}"


Run = dict[str, list[RunEntry]]


def run_from_hits(qid: str, hits: Sequence["SearchHit"], tag: str = "csit") -> list[RunEntry]:
    return [RunEntry(qid, h.pid, h.rank, h.score, tag) for h in hits]


# ---------------------------------------------------------------------------
# Reading and writing
# ---------------------------------------------------------------------------

def _lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.strip():
                yield line_no, line.split()


def read_qrels(path: str | Path) -> Qrels:
    """
    Raises:
        EvaluationError: On a malformed line or a negative grade.
    """
    path = Path(path)
    qrels: Qrels = {}
    for line_no, parts in _lines(path):
        if len(parts) != 4:
            raise EvaluationError(f"{path}: expected 'qid 0 pid rel', got {len(parts)} fields", line=line_no)
        qid, _, pid, rel = parts
        try:
            grade = int(rel)
        except ValueError:
            raise EvaluationError(f"{path}: relevance {rel!r} is not an integer", line=line_no, field="rel") from None
        if grade < 0:
            raise EvaluationError(f"{path}: negative relevance {grade}", line=line_no, field="rel")
        qrels.setdefault(qid, {})[pid] = grade
    logger.debug("Read qrels for %d queries from %s", len(qrels), path)
    return qrels


def write_qrels(qrels: Mapping[str, Mapping[str, int]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(qrels):
            for pid in sorted(qrels[qid]):
                fh.write(f"{qid} 0 {pid} {qrels[qid][pid]}\n")
    return path


def read_run(path: str | Path) -> Run:
    """
    Read a run file; entries of each query are returned in rank order.

    Raises:
        EvaluationError: On a malformed line, ranks that are not 1..n, or
            scores that increase with rank.
    """
    path = Path(path)
    run: Run = {}
    first_line: dict[str, int] = {}
    for line_no, parts in _lines(path):
        if len(parts) != 6:
            raise EvaluationError(f"{path}: expected 'qid Q0 pid rank score tag', got {len(parts)} fields", line=line_no)
        qid, _, pid, rank, score, tag = parts
        try:
            entry = RunEntry(qid, pid, int(rank), float(score), tag)
        except ValueError:
            raise EvaluationError(f"{path}: bad rank or score", line=line_no) from None
        run.setdefault(qid, []).append(entry)
        first_line.setdefault(qid, line_no)

    for qid, entries in run.items():
        entries.sort(key=lambda e: e.rank)
        if [e.rank for e in entries] != list(range(1, len(entries) + 1)):
            raise EvaluationError(f"{path}: ranks of query {qid!r} are not 1..{len(entries)}", line=first_line[qid])
        if any(a.score < b.score for a, b in zip(entries, entries[1:])):
            raise EvaluationError(f"{path}: scores of query {qid!r} increase with rank", line=first_line[qid])
    logger.debug("Read run with %d queries from %s", len(run), path)
    return run


def write_run(run: Mapping[str, Sequence[RunEntry]] | Iterable[RunEntry], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = [e for es in run.values() for e in es] if isinstance(run, Mapping) else list(run)
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(entry.to_line() + "\n")
    return path


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvaluationReport:
    """
    Per-query metric values and their macro means.

    Attributes:
        per_query: ``qid -> {metric@k: value}`` for evaluated queries.
        means: ``metric@k -> mean`` over evaluated queries.
        n_excluded: Run queries without any relevant judgment.
    """

    per_query: dict[str, dict[str, float]] = field(default_factory=dict)
    means: dict[str, float] = field(default_factory=dict)
    n_excluded: int = 0

    @property
    def n_evaluated(self) -> int:
        return len(self.per_query)

    def mean(self, metric: str) -> float:
        return self.means[metric]


def evaluate_run(
    run: Mapping[str, Sequence[RunEntry]],
    qrels: Mapping[str, Mapping[str, int]],
    k_list: Sequence[int] = (3,),
    metrics: Sequence[str] = DEFAULT_METRICS,
) -> EvaluationReport:
    """Score *run* against *qrels* at every cutoff in *k_list*."""
    unknown = [m for m in metrics if m not in METRICS]
    if unknown:
        raise EvaluationError(f"unknown metric(s): {', '.join(unknown)}")
    names = [f"{m}@{k}" for m in metrics for k in k_list]
    report = EvaluationReport()
    for qid in sorted(run):
        judgments = qrels.get(qid, {})
        if not has_relevant(judgments):
            report.n_excluded += 1
            continue
        ranked = [e.pid for e in sorted(run[qid], key=lambda e: e.rank)]
        report.per_query[qid] = {
            f"{m}@{k}": METRICS[m](ranked, judgments, k) for m in metrics for k in k_list
        }
    for name in names:
        values = [scores[name] for scores in report.per_query.values()]
        report.means[name] = sum(values) / len(values) if values else 0.0
    if report.n_excluded:
        logger.info("%d run queries have no relevant judgments and were excluded", report.n_excluded)
    return report


def evaluate_run_files(run_path: str | Path, qrels_path: str | Path, k_list: Sequence[int] = (3,)) -> EvaluationReport:
    return evaluate_run(read_run(run_path), read_qrels(qrels_path), k_list)


def write_report_csv(report: EvaluationReport, path: str | Path) -> Path:
    """Rows ``qid,metric,value``; the macro means use qid ``all``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["qid", "metric", "value"])
        for qid, scores in report.per_query.items():
            for name, value in scores.items():
                writer.writerow([qid, name, f"{value:.6f}"])
        for name, value in report.means.items():
            writer.writerow(["all", name, f"{value:.6f}"])
        writer.writerow(["all", "excluded", report.n_excluded])
    return path
