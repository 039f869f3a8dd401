"""Stage orchestration for the build, perturb, verify and chi commands.

Each stage appends a StageReport to the run report.  An exception inside a
stage, or a failed check, stops the run; the report then names the stage and
is still written to disk.
"""
from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from config import settings
from src import artifacts
from src.admissibility import (
    AdmissibilityConstants,
    admissibility_constants,
    validate_admissibility,
)
from src.bogovskii import StarDomain, bogovskii_solve, obstruction_witness
from src.compact_poisson import pressure_deviation, solve_compact, verify_pws_decay
from src.convex_integration import PerturbationParams, initial_data_extract, iterate
from src.errors import (
    ChiTooSmallError,
    ConfigurationError,
    IncompatibleDensityError,
    VerificationFailure,
)
from src.field_core import (
    BallRegion,
    Box,
    Grid,
    ScalarField,
    make_grid,
    mollifier,
)
from src.field_io import write_field
from src.models import (
    BumpKind,
    ChiMode,
    ChiTable,
    IterationTrace,
    Provenance,
    RunConfig,
    RunReport,
    StageReport,
    Tolerances,
    VerificationCheck,
)
from src.subsolution_builder import (
    Subsolution,
    assemble_subsolution,
    build_subsolution,
    choose_chi,
    density_from_bump,
    lambda_profile,
    random_zero_mean_bump,
    validate_subsolution,
    zero_mean_bump,
)
from src.utils import config_hash, package_versions

logger = logging.getLogger(__name__)

# T̄ itself has χ = nλ; resampled windows stop short of it.
T_BAR_SHRINK = 0.99


@dataclass
class RunResult:
    report: RunReport
    directory: Path | None = None
    sub: Subsolution | None = None
    chi_table: ChiTable | None = None
    trace: IterationTrace | None = None
    error: Exception | None = None

    @property
    def exit_code(self) -> int:
        if isinstance(self.error, (ChiTooSmallError, ConfigurationError)):
            return 3
        return 0 if self.report.passed else 2


@contextmanager
def _stage(report: RunReport, name: str) -> Iterator[StageReport]:
    stage = StageReport(stage=name)
    report.stages.append(stage)
    logger.info("stage %s: start", name)
    try:
        yield stage
    except VerificationFailure:
        raise
    except (ValueError, ArithmeticError) as exc:
        stage.error = str(exc)
        logger.error("stage %s failed: %s", name, exc)
        raise VerificationFailure(stage) from exc
    if not stage.passed:
        raise VerificationFailure(stage)
    logger.info("stage %s: passed", name)


def _stopped(command: str, exc: VerificationFailure) -> Exception:
    logger.error("%s stopped at stage %r", command, exc.stage.stage)
    return exc.__cause__ or exc


def _new_report(command: str, config: RunConfig) -> RunReport:
    return RunReport(
        command=command,
        provenance=Provenance(
            config_hash=config_hash(config.hashed_payload()),
            seed=config.seed,
            versions=package_versions(),
        ),
    )


def output_directory(config: RunConfig, command: str) -> Path:
    if config.out_dir:
        return Path(config.out_dir)
    return settings.RUNS_DIR / f"{command}-{config_hash(config.hashed_payload())}"


# ── Inputs ─────────────────────────────────────────────────────────────────

def make_geometry(config: RunConfig) -> tuple[Grid, BallRegion, StarDomain]:
    grid = make_grid(Box.cube(config.box_half_width, config.dim), config.grid_dims)
    return grid, BallRegion(config.omega_radius), StarDomain(config.outer_radius)


def initial_density(config: RunConfig, grid: Grid) -> ScalarField:
    """ρ₀ = p⁻¹(p(ρ̄) + bump) for the configured bump."""
    law = config.pressure_law()
    if config.bump_kind == BumpKind.RANDOM:
        rng = np.random.default_rng(config.seed)
        bump = random_zero_mean_bump(grid, config.omega_radius, config.bump_amplitude, rng)
    else:
        bump = zero_mean_bump(
            grid, config.omega_radius, config.bump_amplitude, balanced=config.bump_balanced
        )
    return density_from_bump(law, config.rho_bar, bump)


def _times(config: RunConfig) -> np.ndarray:
    return np.linspace(0.0, config.horizon, config.time_samples)


# ── Build ──────────────────────────────────────────────────────────────────

def _build_stages(config: RunConfig, report: RunReport) -> tuple[Subsolution, ChiTable]:
    tol = config.tolerances
    law = config.pressure_law()

    with _stage(report, "geometry") as stage:
        grid, omega, domain = make_geometry(config)
        stage.metrics = {
            "dims": list(grid.dims), "spacing": grid.max_spacing,
            "omega_radius": omega.radius, "outer_radius": domain.outer_radius,
        }
        stage.checks = [
            VerificationCheck.positive(
                "omega_eps_inside_outer", domain.outer_radius - omega.radius - config.epsilon
            ),
        ]

    with _stage(report, "pressure_deviation") as stage:
        rho0 = initial_density(config, grid)
        stage.metrics = {"rho_min": float(rho0.values.min()), "rho_max": float(rho0.values.max())}
        try:
            p1 = pressure_deviation(rho0, law, config.rho_bar)
        except IncompatibleDensityError:
            if grid.dim == 2:
                raw = ScalarField(grid, law.p(rho0.values) - law.p(config.rho_bar))
                stage.metrics["obstruction"] = obstruction_witness(raw).message
            raise
        stage.checks = [VerificationCheck.positive("density_positive", float(rho0.values.min()))]

    with _stage(report, "compact_poisson") as stage:
        poisson = solve_compact(
            p1, config.epsilon, omega, spectral_tol=tol.spectral, support_tol=tol.support
        )
        decay = verify_pws_decay(mollifier(config.epsilon, grid))
        stage.checks = poisson.checks(tol.spectral, tol.support) + decay.checks()
        stage.metrics = {
            "decay_exponent": decay.decay_exponent,
            "decay_steepening": decay.steepening,
            "tail_ratio": decay.tail_ratio,
        }

    with _stage(report, "bogovskii") as stage:
        divergence = bogovskii_solve(
            poisson.smoothed, domain,
            angles=config.bogovskii_angles, ray_nodes=config.bogovskii_ray_nodes,
        )
        stage.checks = divergence.checks(tol.quadrature)
        stage.metrics = {
            "removed_mass": divergence.removed_mass,
            "relative_mass": divergence.relative_mass,
        }

    with _stage(report, "lift") as stage:
        sub = assemble_subsolution(
            rho0, law, p1, poisson, divergence,
            times=_times(config), rho_bar=config.rho_bar, tolerances=tol,
        )
        stage.checks = sub.parts.lift.checks(tol.spectral, tol.quadrature)
        stage.metrics = {"max_m_slope": sub.m_slope.max_abs(), "max_U_tilde": sub.U_tilde.max_abs()}

    with _stage(report, "chi") as stage:
        sub, constants, table = _attach_chi(sub, config)
        stage.metrics = table.model_dump(mode="json")
        stage.checks = [VerificationCheck.positive("chi_gap", float(sub.chi.min_gap))]

    with _stage(report, "subsolution") as stage:
        stage.checks, stage.metrics = _copy(validate_subsolution(sub, tol))

    with _stage(report, "admissibility") as stage:
        stage.checks, stage.metrics = _copy(validate_admissibility(sub, constants, tol))
    return sub, table


def _copy(source: StageReport) -> tuple[list[VerificationCheck], dict]:
    if source.error:
        raise ValueError(source.error)
    return source.checks, source.metrics


def _constants_for(sub: Subsolution, config: RunConfig) -> AdmissibilityConstants:
    computed = admissibility_constants(sub)
    if config.chi_c1 is None and config.chi_c2 is None:
        return computed
    c0 = computed.C0
    # Explicit C₁, C₂ are expressed through c₁ = C₁/(2C₀) and c₂ = C₂/C₀.
    c1 = computed.c1 if config.chi_c1 is None else config.chi_c1 / (2.0 * c0)
    c2 = computed.c2 if config.chi_c2 is None else config.chi_c2 / c0
    return AdmissibilityConstants(C0=c0, c1=c1, c2=c2)


def _attach_chi(sub: Subsolution, config: RunConfig) -> tuple[Subsolution, AdmissibilityConstants, ChiTable]:
    """λ samples, admissibility constants and χ; an ODE χ shrinks the window to T̄."""
    n = sub.dim
    lam = lambda_profile(sub)
    constants = _constants_for(sub, config)
    chi = choose_chi(
        lam.values, sub.times, n, config.chi_mode, config.chi_margin,
        chi0=config.chi0, constants=constants,
    )
    if config.chi_mode == ChiMode.ODE and chi.t_bar is not None and chi.t_bar < sub.times[-1]:
        horizon = T_BAR_SHRINK * chi.t_bar
        logger.warning("resampling the time window to [0, %.6g] inside T̄ = %.6g", horizon, chi.t_bar)
        sub = sub.with_times(np.linspace(0.0, horizon, sub.times.size))
        lam = lambda_profile(sub)
        chi = choose_chi(
            lam.values, sub.times, n, config.chi_mode, config.chi_margin,
            chi0=chi.chi0, constants=constants,
        )
    sub = sub.with_chi(chi, lam.values)
    table = ChiTable(
        mode=config.chi_mode,
        times=[float(t) for t in sub.times],
        chi=[float(v) for v in sub.chi_values()],
        lambda_values=[float(v) for v in lam.values],
        horizon=chi.horizon,
        t_bar=chi.t_bar,
        constants=constants.as_dict(),
    )
    return sub, constants, table


def run_build(config: RunConfig) -> RunResult:
    report = _new_report("build", config)
    directory = output_directory(config, "build")
    sub = table = error = None
    try:
        sub, table = _build_stages(config, report)
    except VerificationFailure as exc:
        error = _stopped("build", exc)
    if sub is not None and sub.chi is not None:
        artifacts.write_subsolution(sub, directory, config=config)
        artifacts.write_chi_table(table, directory)
    directory.mkdir(parents=True, exist_ok=True)
    artifacts.write_report(report, directory)
    return RunResult(report=report, directory=directory, sub=sub, error=error)


# ── Perturb ────────────────────────────────────────────────────────────────

def perturbation_params(config: RunConfig) -> PerturbationParams:
    return PerturbationParams(
        frequency=config.wave_frequency,
        cutoff_radius=config.cutoff_radius,
        margin=config.hull_margin,
        search_budget=config.search_budget,
        seed=config.seed,
        stagnation_limit=config.stagnation_limit,
    )


def _perturbation_checks(trace: IterationTrace) -> list[VerificationCheck]:
    energies = trace.energies
    drops = [b - a for a, b in zip(energies, energies[1:])]
    worst_drop = -min(drops) if drops else 0.0
    accepted = trace.accepted
    violation = max((r.max_hull_violation for r in accepted), default=-1.0)
    return [
        VerificationCheck.at_most("energy_monotone", max(worst_drop, 0.0), 0.0),
        VerificationCheck.at_most(
            "accepted_hull_strict", violation, 0.0, detail="largest e − χ/n among accepted steps"
        ),
    ]


def run_perturb(directory: Path | str, config: RunConfig) -> RunResult:
    directory = Path(directory)
    report = _new_report("perturb", config)
    out = Path(config.out_dir) if config.out_dir else directory / f"perturb-seed{config.seed}"
    tol = config.tolerances
    sub = trace = error = None
    try:
        with _stage(report, "load") as stage:
            sub = artifacts.read_subsolution(directory)
            if sub.chi is None:
                raise ValueError(f"{directory} has no χ attached")
            stage.metrics = {"source": str(directory), "samples": int(sub.times.size)}

        with _stage(report, "perturbation") as stage:
            sub, trace = iterate(sub, config.steps, perturbation_params(config), tolerances=tol)
            stage.checks = _perturbation_checks(trace)
            stage.metrics = {
                "steps": len(trace.records),
                "accepted": len(trace.accepted),
                "stopped_early": trace.stopped_early,
                "beta_hat": trace.beta_hat,
            }

        with _stage(report, "subsolution") as stage:
            stage.checks, stage.metrics = _copy(validate_subsolution(sub, tol))

        with _stage(report, "admissibility") as stage:
            stage.checks, stage.metrics = _copy(validate_admissibility(sub, tolerances=tol))

        with _stage(report, "initial_data") as stage:
            data = initial_data_extract(sub)
            stage.checks = [
                VerificationCheck.at_most("m0_divergence", data.divergence_residual, tol.spectral),
            ]
            stage.metrics = data.as_dict()
            write_field(out / "m0.sfld", data.m0)
    except VerificationFailure as exc:
        error = _stopped("perturb", exc)

    if sub is not None and sub.chi is not None:
        artifacts.write_subsolution(sub, out, config=config, extra={"source": str(directory)})
    out.mkdir(parents=True, exist_ok=True)
    if trace is not None:
        artifacts.write_trace(trace, out)
    artifacts.write_report(report, out)
    return RunResult(report=report, directory=out, sub=sub, trace=trace, error=error)


# ── Verify ─────────────────────────────────────────────────────────────────

def run_verify(directory: Path | str, tolerances: Tolerances, config: RunConfig | None = None) -> RunResult:
    """Re-check a stored subsolution (perturbed or not) from its files alone."""
    directory = Path(directory)
    config = config or RunConfig()
    report = _new_report("verify", config)
    sub = error = None
    try:
        with _stage(report, "load") as stage:
            sub = artifacts.read_subsolution(directory)
            if sub.chi is None:
                raise ValueError(f"{directory} has no χ attached")
            stage.metrics = {"source": str(directory), "perturbed": sub.perturbed}

        with _stage(report, "subsolution") as stage:
            stage.checks, stage.metrics = _copy(validate_subsolution(sub, tolerances))

        with _stage(report, "admissibility") as stage:
            stage.checks, stage.metrics = _copy(validate_admissibility(sub, tolerances=tolerances))
    except VerificationFailure as exc:
        error = _stopped("verify", exc)
    return RunResult(report=report, directory=directory, sub=sub, error=error)


# ── χ table ────────────────────────────────────────────────────────────────

def run_chi(config: RunConfig) -> RunResult:
    """Build the subsolution far enough to sample λ, then select χ and T̄."""
    report = _new_report("chi", config)
    table = error = None
    try:
        with _stage(report, "subsolution_parts") as stage:
            grid, omega, domain = make_geometry(config)
            sub = build_subsolution(
                initial_density(config, grid), config.pressure_law(), config.epsilon, domain,
                rho_bar=config.rho_bar, omega=omega, times=_times(config),
                tolerances=config.tolerances,
                angles=config.bogovskii_angles, ray_nodes=config.bogovskii_ray_nodes,
            )
            stage.metrics = {"max_m_slope": sub.m_slope.max_abs(), "max_U_tilde": sub.U_tilde.max_abs()}

        with _stage(report, "chi") as stage:
            sub, _, table = _attach_chi(sub, config)
            stage.metrics = table.model_dump(mode="json")
            stage.checks = [VerificationCheck.positive("chi_gap", float(sub.chi.min_gap))]
    except VerificationFailure as exc:
        error = _stopped("chi", exc)
    return RunResult(report=report, chi_table=table, error=error)
