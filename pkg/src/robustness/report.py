"""
Robustness report: rows of ``dataset,protocol,variant,metric,value``.

Partial-response results contribute ``reference`` and ``modified`` rows
plus a ``diff`` row; full-context results contribute one row per variant
plus ``mean`` and ``sd`` rows. A result that used a provider fallback adds
a ``fallback`` row with value 1.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import astuple, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from src.errors import ContractError

if TYPE_CHECKING:
    from src.robustness.harness import FullContextResult, PartialResponseResult

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("dataset", "protocol", "variant", "metric", "value")


def mean_sd(values: Sequence[float]) -> tuple[float, float]:
    """
    Arithmetic mean and population standard deviation.

    Example:
        >>> mean, sd = mean_sd([40, 42, 44, 46, 48])
        >>> mean, round(sd ** 2, 9)
        (44.0, 8.0)

    Raises:
        ContractError: With fewer than two values.
    """
    if len(values) < 2:
        raise ContractError(f"need at least 2 values for a standard deviation, got {len(values)}")
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=0))


def robust_report(per_variant_metrics: dict[int, float] | Sequence[float]) -> tuple[float, float]:
    """(mean, SD) over per-variant metric means."""
    values = list(per_variant_metrics.values()) if isinstance(per_variant_metrics, dict) else list(per_variant_metrics)
    return mean_sd(values)


@dataclass(frozen=True)
class ReportRow:
    dataset: str
    protocol: str
    variant: str
    metric: str
    value: float


@dataclass
class RobustReport:
    rows: list[ReportRow] = field(default_factory=list)

    def add(self, dataset: str, protocol: str, variant, metric: str, value: float) -> None:
        self.rows.append(ReportRow(dataset, protocol, str(variant), metric, float(value)))

    def add_partial(self, dataset: str, result: "PartialResponseResult") -> None:
        m = result.metric
        self.add(dataset, "partial", "reference", m, result.reference.mean(m))
        self.add(dataset, "partial", "modified", m, result.mean)
        self.add(dataset, "partial", "diff", m, result.diff)
        self.add(dataset, "partial", "all", "substituted", result.n_substituted)
        if result.fallback:
            self.add(dataset, "partial", "all", "fallback", 1)

    def add_full(self, dataset: str, result: "FullContextResult") -> None:
        m = result.metric
        for vid, value in result.variant_means.items():
            self.add(dataset, "full", vid, m, value)
        mean, sd = result.summary
        self.add(dataset, "full", "mean", m, mean)
        self.add(dataset, "full", "sd", m, sd)
        self.add(dataset, "full", "all", "collapsed", result.n_collapsed)
        if result.fallback:
            self.add(dataset, "full", "all", "fallback", 1)

    def value(self, dataset: str, protocol: str, variant, metric: str) -> float:
        for row in self.rows:
            if (row.dataset, row.protocol, row.variant, row.metric) == (dataset, protocol, str(variant), metric):
                return row.value
        raise KeyError(f"{dataset}/{protocol}/{variant}/{metric}")

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for row in self.rows:
                writer.writerow([*astuple(row)[:4], repr(row.value)])
        logger.info("Robustness report written to %s (%d rows)", path, len(self.rows))
        return path
