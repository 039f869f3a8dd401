"""Run directories: manifest, SFLD fields, reports, traces and CSV tables.

A subsolution directory holds

    manifest.json          grid, law, domain, times, χ descriptor, λ samples, config
    rho0.sfld, m_slope.sfld, U_tilde.sfld
    p1.sfld, u.sfld, p_eps.sfld, phi.sfld, A.sfld, U2.sfld, V.sfld   (when built here)
    samples/dm_###.sfld, dm_dot_###.sfld, dU_###.sfld                (after perturb)
    report.json, trace.json, m0.sfld
"""
from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Any

import numpy as np

from src.bogovskii import StarDomain
from src.field_core import AnyField, ScalarField, SymTensorField, VectorField
from src.field_io import read_field, write_field
from src.models import ChiTable, IterationTrace, RunConfig, RunReport
from src.pressure_law import PressureLaw
from src.subsolution_builder import ChiProfile, Subsolution
from src.utils import config_hash, read_json, write_json

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
REPORT = "report.json"
TRACE = "trace.json"
CHI_TABLE = "chi.json"
SAMPLES = "samples"
FORMAT = "wildflow-subsolution"
FORMAT_VERSION = 1


class ArtifactError(ValueError):
    """A run directory is missing files or carries an unknown format."""


def _part_fields(sub: Subsolution) -> dict[str, AnyField]:
    parts = sub.parts
    if parts is None:
        return {}
    return {
        "p1": parts.p1,
        "u": parts.poisson.u,
        "p_eps": parts.poisson.p_eps,
        "phi": parts.divergence.phi,
        "A": parts.lift.A,
        "U2": parts.lift.U2,
        "V": parts.lift.V,
    }


def write_subsolution(
    sub: Subsolution,
    directory: Path | str,
    *,
    config: RunConfig | None = None,
    extra: dict[str, Any] | None = None,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    grid = sub.grid
    manifest: dict[str, Any] = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "grid": {"dims": list(grid.dims), "lower": list(grid.box.lower), "upper": list(grid.box.upper)},
        "law": sub.law.describe(),
        "rho_bar": sub.rho_bar,
        "domain": {"outer_radius": sub.domain.outer_radius, "star_radius": sub.domain.star_radius},
        "times": [float(t) for t in sub.times],
        "chi": sub.chi.describe() if sub.chi is not None else None,
        "lambda_values": None if sub.lambda_values is None else [float(v) for v in sub.lambda_values],
        "perturbed": sub.perturbed,
        "parts": sorted(_part_fields(sub)),
    }
    if config is not None:
        manifest["config"] = config.hashed_payload()
        manifest["config_hash"] = config_hash(config.hashed_payload())
        manifest["seed"] = config.seed
    if extra:
        manifest.update(extra)

    write_field(directory / "rho0.sfld", sub.rho0)
    write_field(directory / "m_slope.sfld", sub.m_slope)
    write_field(directory / "U_tilde.sfld", sub.U_tilde)
    for name, f in _part_fields(sub).items():
        write_field(directory / f"{name}.sfld", f)
    if sub.perturbed:
        samples = directory / SAMPLES
        for i in range(sub.times.size):
            write_field(samples / f"dm_{i:03d}.sfld", VectorField(grid, sub.dm[i]))
            write_field(samples / f"dm_dot_{i:03d}.sfld", VectorField(grid, sub.dm_dot[i]))
            write_field(samples / f"dU_{i:03d}.sfld", SymTensorField(grid, sub.dU[i]))
    write_json(directory / MANIFEST, manifest)
    logger.info("wrote subsolution to %s", directory)
    return directory


def read_manifest(directory: Path | str) -> dict[str, Any]:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise ArtifactError(f"{directory} has no {MANIFEST}")
    manifest = read_json(path)
    if manifest.get("format") != FORMAT or manifest.get("version") != FORMAT_VERSION:
        raise ArtifactError(f"{path} is not a {FORMAT} v{FORMAT_VERSION} manifest")
    return manifest


def read_subsolution(directory: Path | str) -> Subsolution:
    """Rebuild a Subsolution from its directory; intermediate parts stay on disk."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    rho0 = read_field(directory / "rho0.sfld")
    m_slope = read_field(directory / "m_slope.sfld")
    U_tilde = read_field(directory / "U_tilde.sfld", traceless=True)
    if not (isinstance(rho0, ScalarField) and isinstance(m_slope, VectorField)
            and isinstance(U_tilde, SymTensorField)):
        raise ArtifactError(f"{directory} holds fields of unexpected types")
    times = np.asarray(manifest["times"], dtype=np.float64)
    chi = ChiProfile.from_description(manifest["chi"]) if manifest.get("chi") else None
    lam = manifest.get("lambda_values")
    sub = Subsolution(
        rho0=rho0,
        law=PressureLaw.from_description(manifest["law"]),
        times=times,
        m_slope=m_slope,
        U_tilde=U_tilde,
        domain=StarDomain(**manifest["domain"]),
        rho_bar=float(manifest["rho_bar"]),
        chi=chi,
        lambda_values=None if lam is None else np.asarray(lam),
    )
    if manifest.get("perturbed"):
        samples = directory / SAMPLES
        stacks = {
            key: np.stack([read_field(samples / f"{key}_{i:03d}.sfld").values for i in range(times.size)])
            for key in ("dm", "dm_dot", "dU")
        }
        sub = sub.with_perturbation(stacks["dm"], stacks["dm_dot"], stacks["dU"])
    return sub


def read_part(directory: Path | str, name: str) -> AnyField:
    path = Path(directory) / f"{name}.sfld"
    if not path.exists():
        raise ArtifactError(f"{directory} has no stored field {name!r}")
    return read_field(path)


# ── Reports & traces ───────────────────────────────────────────────────────

def write_report(report: RunReport, directory: Path | str) -> Path:
    return write_json(Path(directory) / REPORT, report.model_dump(mode="json"))


def read_report(directory: Path | str) -> RunReport:
    path = Path(directory) / REPORT
    if not path.exists():
        raise ArtifactError(f"{directory} has no {REPORT}")
    data = read_json(path)
    data.pop("passed", None)
    for stage in data.get("stages", []):
        stage.pop("passed", None)
    return RunReport.model_validate(data)


def write_trace(trace: IterationTrace, directory: Path | str) -> Path:
    return write_json(Path(directory) / TRACE, trace.model_dump(mode="json"))


def read_trace(directory: Path | str) -> IterationTrace | None:
    path = Path(directory) / TRACE
    return IterationTrace.model_validate(read_json(path)) if path.exists() else None


def write_chi_table(table: ChiTable, directory: Path | str) -> Path:
    return write_json(Path(directory) / CHI_TABLE, table.model_dump(mode="json"))


def read_chi_table(directory: Path | str) -> ChiTable | None:
    path = Path(directory) / CHI_TABLE
    return ChiTable.model_validate(read_json(path)) if path.exists() else None


def write_csv(path: Path | str, header: list[str], rows: list[list[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def chi_table_rows(table: ChiTable) -> tuple[list[str], list[list[float]]]:
    header = ["t", "chi"] + (["lambda"] if table.lambda_values else [])
    rows = []
    for i, (t, chi) in enumerate(zip(table.times, table.chi)):
        row = [t, chi]
        if table.lambda_values:
            row.append(table.lambda_values[i])
        rows.append(row)
    return header, rows


def trace_rows(trace: IterationTrace) -> tuple[list[str], list[list[Any]]]:
    header = [
        "step", "accepted", "cause", "energy_after", "initial_energy_after",
        "deficit_before", "deficit_after", "deficit_on_cutoff", "gain", "amplitude",
        "max_hull_violation", "localization_error",
    ]
    rows = [[getattr(r, h) for h in header] for r in trace.records]
    return header, rows
