"""
Retrieval Report Visualizer
===========================

Console rendering of the pipeline's results with the ``rich`` library.
Nothing here computes a metric; every view takes an already-built report
and prints it.

Views:

- **Metrics table**: macro means of an evaluation report, plus the number
  of evaluated and excluded queries.
- **Robustness table**: the rows of a robustness report, grouped by
  dataset and protocol.
- **Verify table**: pass/fail and maximum observed error per oracle suite.
- **Loss summary**: first, last and every n-th record of a loss trace.
- **Experiment table**: one row per configuration with held-out means.
- **Acceptance table**: directional experiment checks with observed and
  reference values.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Mapping, Sequence

try:
    from rich.console import Console
    from rich.table import Table
    from rich.panel import Panel
    RICH_AVAILABLE = True
except ImportError:
    RICH_AVAILABLE = False

if TYPE_CHECKING:
    from src.cli.experiment import AcceptanceCheck
    from src.cli.verify import SuiteResult
    from src.evaluation.trec import EvaluationReport
    from src.robustness.report import RobustReport
    from src.training.trainer import LossRecord

logger = logging.getLogger(__name__)


def _fmt(value: float, digits: int = 5) -> str:
    return f"{value:.{digits}f}"


class ReportVisualizer:
    """
    Rich console views of evaluation, robustness, verification and training
    results.

    Attributes:
        console: A ``rich.console.Console`` used for all output.
    """

    def __init__(self, console: "Console | None" = None) -> None:
        """
        Args:
            console: Console to print to; a fresh one writing to stdout by
                default. Tests pass ``Console(record=True)``.

        Raises:
            ImportError: If the ``rich`` library is not installed.
        """
        if not RICH_AVAILABLE:
            raise ImportError(
                "The 'rich' library is required for report output. "
                "Install it with: pip install rich"
            )
        self.console = console or Console()

    # ------------------------------------------------------------------
    # Evaluation
    # ------------------------------------------------------------------

    def print_metrics(self, report: "EvaluationReport", title: str = "Evaluation") -> None:
        table = Table(title=title, show_header=True, header_style="bold cyan", border_style="blue")
        table.add_column("Metric", style="bold")
        table.add_column("Mean", justify="right", style="green")
        for name, value in report.means.items():
            table.add_row(name, _fmt(value))
        self.console.print(table)
        self.console.print(
            f"[dim]{report.n_evaluated} queries evaluated, {report.n_excluded} excluded "
            f"(no relevant judgment)[/dim]"
        )

    def print_robust(self, report: "RobustReport", title: str = "Robustness") -> None:
        table = Table(title=title, show_header=True, header_style="bold cyan", border_style="blue")
        for column in ("Dataset", "Protocol", "Variant", "Metric"):
            table.add_column(column)
        table.add_column("Value", justify="right", style="green")
        for row in report.rows:
            style = "bold" if row.variant in ("mean", "sd", "diff") else None
            value = _fmt(row.value) if row.metric.count("@") else f"{row.value:g}"
            table.add_row(row.dataset, row.protocol, row.variant, row.metric, value, style=style)
        self.console.print(table)

    # ------------------------------------------------------------------
    # Verification and training
    # ------------------------------------------------------------------

    def print_verify(self, results: Sequence["SuiteResult"]) -> None:
        table = Table(title="Oracle suites", show_header=True, header_style="bold cyan", border_style="blue")
        table.add_column("Suite", style="bold")
        table.add_column("Cases", justify="right")
        table.add_column("Max error", justify="right")
        table.add_column("Tolerance", justify="right")
        table.add_column("Status")
        for r in results:
            status = "[green]PASS[/green]" if r.passed else "[red]FAIL[/red]"
            table.add_row(r.name, str(r.cases), f"{r.max_error:.3e}", f"{r.tolerance:.0e}", status)
        self.console.print(table)
        failed = [r.name for r in results if not r.passed]
        if failed:
            self.console.print(Panel(", ".join(failed), title="[red]Failed suites[/red]", border_style="red"))

    def print_loss_summary(self, trace: Sequence["LossRecord"], every: int = 100) -> None:
        if not trace:
            self.console.print("[yellow]Loss trace is empty.[/yellow]")
            return
        table = Table(title="Training loss", show_header=True, header_style="bold cyan", border_style="blue")
        table.add_column("Step", justify="right")
        for column in ("L_C", "L_S", "L"):
            table.add_column(column, justify="right")
        shown = [r for r in trace if r.step == trace[0].step or r.step % every == 0 or r is trace[-1]]
        for r in shown:
            table.add_row(str(r.step), _fmt(r.l_c, 4), _fmt(r.l_s, 4), _fmt(r.total, 4))
        self.console.print(table)

    def print_experiment(self, rows: Sequence[Mapping[str, object]], title: str = "Experiment") -> None:
        """Rows share their keys; the first row's keys become the columns."""
        if not rows:
            self.console.print("[yellow]No experiment results.[/yellow]")
            return
        table = Table(title=title, show_header=True, header_style="bold cyan", border_style="blue")
        columns = list(rows[0])
        for column in columns:
            table.add_column(column, justify="right" if isinstance(rows[0][column], float) else "left")
        for row in rows:
            table.add_row(*(_fmt(v) if isinstance(v, float) else str(v) for v in (row[c] for c in columns)))
        self.console.print(table)

    def print_acceptance(self, checks: Sequence["AcceptanceCheck"]) -> None:
        if not checks:
            self.console.print("[yellow]No acceptance checks apply to these runs.[/yellow]")
            return
        table = Table(title="Acceptance checks", show_header=True, header_style="bold cyan", border_style="blue")
        table.add_column("Check", style="bold")
        table.add_column("Observed", justify="right")
        table.add_column("Reference", justify="right")
        table.add_column("Status")
        for c in checks:
            status = "[green]PASS[/green]" if c.passed else "[red]FAIL[/red]"
            table.add_row(c.name, _fmt(c.observed), _fmt(c.reference), status)
        self.console.print(table)
