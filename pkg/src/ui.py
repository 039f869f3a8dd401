"""
Rich rendering for wildflow reports.

Views
─────
  run report     → one table per stage, failed checks highlighted
  iteration trace→ per-step table with acceptance cause and energies
  χ table        → t, χ(t), λ(t) samples plus T̄
"""
from __future__ import annotations

from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table
from rich.text import Text

from src.models import ChiTable, IterationTrace, RunReport, StageReport, VerificationCheck

console = Console()

_PASS = Text("PASS", style="bold green")
_FAIL = Text("FAIL", style="bold red")


# ── Helpers ────────────────────────────────────────────────────────────────

def _header(title: str) -> None:
    console.print(
        Panel(
            Text(title, style="bold cyan", justify="center"),
            border_style="bright_blue",
        )
    )


def _spinner(msg: str):
    return Progress(
        SpinnerColumn(),
        TextColumn(f"[cyan]{msg}[/cyan]"),
        transient=True,
        console=console,
    )


def _divider() -> None:
    console.rule(style="dim blue")


def _num(value: float | None) -> str:
    if value is None:
        return "—"
    return f"{value:.3e}" if value != 0 and (abs(value) < 1e-3 or abs(value) >= 1e4) else f"{value:.4g}"


def _status(passed: bool) -> Text:
    return _PASS if passed else _FAIL


def _location(check: VerificationCheck) -> str:
    if not check.location:
        return ""
    t, *x = check.location
    return f"t={t:.3g} x=({', '.join(f'{c:.3g}' for c in x)})"


# ── Reports ────────────────────────────────────────────────────────────────

def render_stage(stage: StageReport) -> None:
    table = Table(
        title=f"{stage.stage}", title_style="bold", box=box.SIMPLE_HEAD, padding=(0, 1)
    )
    table.add_column("Check", style="cyan", no_wrap=True)
    table.add_column("Value", justify="right", no_wrap=True)
    table.add_column("", width=2, no_wrap=True)
    table.add_column("Tolerance", justify="right", no_wrap=True)
    table.add_column("Status", no_wrap=True)
    table.add_column("Where", style="dim", overflow="fold")

    for check in stage.checks:
        table.add_row(
            check.name,
            _num(check.value),
            check.comparison,
            _num(check.tolerance),
            _status(check.passed),
            _location(check) or check.detail,
        )
    console.print(table)
    if stage.error:
        console.print(f"[red]error:[/red] {stage.error}")


def render_report(report: RunReport) -> None:
    _header(f"wildflow {report.command}")
    prov = report.provenance
    console.print(
        f"[dim]config {prov.config_hash} · seed {prov.seed} · "
        f"{prov.created_at:%Y-%m-%d %H:%M:%S} UTC[/dim]"
    )
    for stage in report.stages:
        render_stage(stage)
    _divider()
    failure = report.first_failure()
    if failure is None and report.stages:
        console.print(Panel("[green]all stages passed[/green]", border_style="green"))
    else:
        name = failure.stage if failure else "—"
        console.print(Panel(f"[red]failed at stage {name}[/red]", border_style="red"))


# ── Trace & χ ──────────────────────────────────────────────────────────────

def render_trace(trace: IterationTrace) -> None:
    table = Table(title="perturbation steps", box=box.SIMPLE_HEAD, padding=(0, 1))
    table.add_column("#", style="dim", width=3, no_wrap=True)
    table.add_column("Status", no_wrap=True)
    table.add_column("Energy", justify="right", no_wrap=True)
    table.add_column("E(t₀)", justify="right", no_wrap=True)
    table.add_column("Deficit", justify="right", no_wrap=True)
    table.add_column("Gain", justify="right", no_wrap=True)
    table.add_column("Amplitude", justify="right", no_wrap=True)
    table.add_column("Cause", style="dim", overflow="fold")

    for r in trace.records:
        table.add_row(
            str(r.step),
            Text("accepted", style="green") if r.accepted else Text("rejected", style="yellow"),
            _num(r.energy_after),
            _num(r.initial_energy_after),
            _num(r.deficit_after),
            _num(r.gain),
            _num(r.amplitude),
            r.cause,
        )
    console.print(table)
    beta = "—" if trace.beta_hat is None else f"{trace.beta_hat:.4g}"
    console.print(
        f"[dim]{len(trace.accepted)}/{len(trace.records)} accepted · β̂ = {beta}"
        f"{' · stopped on stagnation' if trace.stopped_early else ''}[/dim]"
    )


def render_chi_table(chi: ChiTable, max_rows: int = 12) -> None:
    table = Table(title=f"χ ({chi.mode.value})", box=box.SIMPLE_HEAD, padding=(0, 1))
    table.add_column("t", justify="right", no_wrap=True)
    table.add_column("χ(t)", justify="right", no_wrap=True)
    if chi.lambda_values:
        table.add_column("λ(t)", justify="right", no_wrap=True)

    stride = max(1, len(chi.times) // max_rows)
    for i in range(0, len(chi.times), stride):
        row = [_num(chi.times[i]), _num(chi.chi[i])]
        if chi.lambda_values:
            row.append(_num(chi.lambda_values[i]))
        table.add_row(*row)
    console.print(table)
    console.print(f"[dim]T̄ = {_num(chi.t_bar)} · χ horizon = {_num(chi.horizon)}[/dim]")
