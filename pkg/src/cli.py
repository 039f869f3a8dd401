"""
Command-line interface for wildflow.

    wildflow build   [--config FILE] [--seed N] [--out DIR] [--tol-scale X]
    wildflow perturb DIR [--config FILE] [--seed N] [--steps K] [--out DIR]
    wildflow verify  DIR [--tol-scale X]
    wildflow chi     [--config FILE] [--out DIR]
    wildflow report  DIR [--out DIR]

Exit codes: 0 every stage passed, 2 a verification stage failed,
3 the configuration could not be used.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

import click
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler

from config import settings
from src import artifacts, pipeline
from src.errors import ConfigurationError
from src.models import RunConfig
from src.ui import (
    _spinner,
    console,
    render_chi_table,
    render_report,
    render_trace,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFICATION = 2
EXIT_CONFIGURATION = 3


def _configure_logging() -> None:
    logging.basicConfig(
        level=settings.LOG_LEVEL,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def _load_config(path: str | None, **overrides: Any) -> RunConfig:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        if path:
            return RunConfig.from_file(path, **overrides)
        return RunConfig(**overrides)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid run config: {exc}") from exc


def _fail_config(ctx: click.Context, exc: Exception) -> None:
    console.print(f"[bold red]configuration error:[/bold red] {exc}")
    ctx.exit(EXIT_CONFIGURATION)


def _finish(ctx: click.Context, result: pipeline.RunResult) -> None:
    render_report(result.report)
    if result.error is not None and result.exit_code == EXIT_CONFIGURATION:
        console.print(f"[bold red]configuration error:[/bold red] {result.error}")
    if result.directory is not None:
        console.print(f"[dim]output: {result.directory}[/dim]")
    ctx.exit(result.exit_code)


_config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False),
    help="Flat key = value run-config file.",
)
_seed_option = click.option("--seed", type=int, help="Seed for bumps and the perturbation loop.")
_out_option = click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Output directory.")
_tol_option = click.option("--tol-scale", type=float, help="Multiply every tolerance by this factor.")


@click.group()
def cli() -> None:
    """Compactly supported subsolutions and convex-integration steps for semi-stationary Euler."""
    _configure_logging()
    settings.validate_run_settings()


@cli.command()
@_config_option
@_seed_option
@_out_option
@_tol_option
@click.pass_context
def build(ctx: click.Context, config_path: str | None, seed: int | None,
          out_dir: str | None, tol_scale: float | None) -> None:
    """Construct and verify the initial strict subsolution."""
    try:
        config = _load_config(config_path, seed=seed, out_dir=out_dir, tol_scale=tol_scale)
    except ConfigurationError as exc:
        _fail_config(ctx, exc)
        return
    with _spinner("building subsolution…") as progress:
        progress.add_task("build", total=None)
        result = pipeline.run_build(config)
    _finish(ctx, result)


@cli.command()
@click.argument("directory", type=click.Path(exists=True, file_okay=False))
@_config_option
@_seed_option
@click.option("--steps", type=int, help="Number of perturbation trials.")
@_out_option
@_tol_option
@click.pass_context
def perturb(ctx: click.Context, directory: str, config_path: str | None, seed: int | None,
            steps: int | None, out_dir: str | None, tol_scale: float | None) -> None:
    """Run perturbation steps on a stored subsolution and extract m⁰."""
    try:
        config = _load_config(
            config_path, seed=seed, steps=steps, out_dir=out_dir, tol_scale=tol_scale
        )
    except ConfigurationError as exc:
        _fail_config(ctx, exc)
        return
    with _spinner(f"perturbing ({config.steps} steps)…") as progress:
        progress.add_task("perturb", total=None)
        result = pipeline.run_perturb(directory, config)
    if result.trace is not None:
        render_trace(result.trace)
    _finish(ctx, result)


@cli.command()
@click.argument("directory", type=click.Path(exists=True, file_okay=False))
@_config_option
@_tol_option
@click.pass_context
def verify(ctx: click.Context, directory: str, config_path: str | None, tol_scale: float | None) -> None:
    """Re-check a stored subsolution from its files."""
    try:
        config = _load_config(config_path, tol_scale=tol_scale)
    except ConfigurationError as exc:
        _fail_config(ctx, exc)
        return
    result = pipeline.run_verify(directory, config.tolerances, config)
    _finish(ctx, result)


@cli.command()
@_config_option
@_out_option
@click.pass_context
def chi(ctx: click.Context, config_path: str | None, out_dir: str | None) -> None:
    """Tabulate χ(t), λ(t) and the maximal time T̄."""
    try:
        config = _load_config(config_path, out_dir=out_dir)
    except ConfigurationError as exc:
        _fail_config(ctx, exc)
        return
    result = pipeline.run_chi(config)
    directory = pipeline.output_directory(config, "chi")
    directory.mkdir(parents=True, exist_ok=True)
    if result.chi_table is not None:
        render_chi_table(result.chi_table)
        artifacts.write_chi_table(result.chi_table, directory)
        header, rows = artifacts.chi_table_rows(result.chi_table)
        artifacts.write_csv(directory / "chi.csv", header, rows)
    artifacts.write_report(result.report, directory)
    result.directory = directory
    _finish(ctx, result)


@cli.command()
@click.argument("directory", type=click.Path(exists=True, file_okay=False))
@_out_option
@click.pass_context
def report(ctx: click.Context, directory: str, out_dir: str | None) -> None:
    """Render a stored report and write CSV tables for χ and the trace."""
    try:
        run_report = artifacts.read_report(directory)
    except (artifacts.ArtifactError, ValidationError) as exc:
        _fail_config(ctx, exc)
        return
    target = Path(out_dir) if out_dir else Path(directory)
    render_report(run_report)

    trace = artifacts.read_trace(directory)
    if trace is not None:
        render_trace(trace)
        header, rows = artifacts.trace_rows(trace)
        artifacts.write_csv(target / "trace.csv", header, rows)
    chi_table = artifacts.read_chi_table(directory)
    if chi_table is not None:
        render_chi_table(chi_table)
        header, rows = artifacts.chi_table_rows(chi_table)
        artifacts.write_csv(target / "chi.csv", header, rows)
    ctx.exit(EXIT_OK if run_report.passed else EXIT_VERIFICATION)


if __name__ == "__main__":
    cli()
