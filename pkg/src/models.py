"""Pydantic models: run configuration, verification reports, iteration traces.

Numerical value types (grids, fields, states) are frozen dataclasses in their
own modules; everything that is persisted as JSON or crosses the CLI boundary
is defined here.
"""
from __future__ import annotations

import math
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator

from config import settings
from src.pressure_law import PressureKind, PressureLaw


# ── Enumerations ───────────────────────────────────────────────────────────

class ChiMode(str, Enum):
    CONSTANT = "constant"
    ODE = "ode"


class BumpKind(str, Enum):
    PLATEAU = "plateau"
    RANDOM = "random"


class WeakKind(str, Enum):
    MASS = "mass"
    MOMENTUM = "momentum"
    ENERGY = "energy"


# ── Verification records ───────────────────────────────────────────────────

_BIG = 1e300


def _finite(value: float) -> float:
    value = float(value)
    if math.isnan(value):
        return _BIG
    return max(-_BIG, min(_BIG, value))


class VerificationCheck(BaseModel):
    """One numerical claim together with the tolerance it was held to."""

    name: str
    value: float
    tolerance: float
    comparison: str = "<="
    passed: bool
    detail: str = ""
    location: Optional[list[float]] = None

    @classmethod
    def at_most(cls, name: str, value: float, tolerance: float, **kwargs: Any) -> VerificationCheck:
        value = _finite(value)
        return cls(name=name, value=value, tolerance=tolerance, comparison="<=",
                   passed=value <= tolerance, **kwargs)

    @classmethod
    def at_least(cls, name: str, value: float, tolerance: float, **kwargs: Any) -> VerificationCheck:
        value = _finite(value)
        return cls(name=name, value=value, tolerance=tolerance, comparison=">=",
                   passed=value >= tolerance, **kwargs)

    @classmethod
    def positive(cls, name: str, value: float, **kwargs: Any) -> VerificationCheck:
        value = _finite(value)
        return cls(name=name, value=value, tolerance=0.0, comparison=">",
                   passed=value > 0.0, **kwargs)


class StageReport(BaseModel):
    stage: str
    checks: list[VerificationCheck] = Field(default_factory=list)
    metrics: dict[str, Any] = Field(default_factory=dict)
    error: str = ""

    @computed_field
    @property
    def passed(self) -> bool:
        return not self.error and all(c.passed for c in self.checks)

    def check(self, name: str) -> VerificationCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


class Provenance(BaseModel):
    config_hash: str
    seed: int
    versions: dict[str, str] = Field(default_factory=dict)
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))


class RunReport(BaseModel):
    command: str
    stages: list[StageReport] = Field(default_factory=list)
    provenance: Provenance

    @computed_field
    @property
    def passed(self) -> bool:
        return bool(self.stages) and all(s.passed for s in self.stages)

    def stage(self, name: str) -> StageReport:
        for s in self.stages:
            if s.stage == name:
                return s
        raise KeyError(name)

    def first_failure(self) -> Optional[StageReport]:
        return next((s for s in self.stages if not s.passed), None)


class StepRecord(BaseModel):
    """Outcome of one perturbation trial."""

    step: int
    accepted: bool
    cause: str = ""
    energy_before: float
    energy_after: float
    initial_energy_before: float
    initial_energy_after: float
    deficit_before: float
    deficit_after: float
    deficit_on_cutoff: float = 0.0
    alpha: float = 0.0
    gain: float = 0.0
    max_hull_violation: float = 0.0
    momentum_residual: float = 0.0
    divergence_residual: float = 0.0
    support_excess: float = 0.0
    localization_error: float = 0.0
    amplitude: float = 0.0
    frequency: float = 0.0
    cutoff_center: list[float] = Field(default_factory=list)
    cutoff_radius: float = 0.0
    candidate: int = -1


class IterationTrace(BaseModel):
    seed: int
    records: list[StepRecord] = Field(default_factory=list)
    stopped_early: bool = False
    beta_hat: Optional[float] = None

    @property
    def accepted(self) -> list[StepRecord]:
        return [r for r in self.records if r.accepted]

    @property
    def energies(self) -> list[float]:
        return [r.energy_after for r in self.accepted]


class ChiTable(BaseModel):
    mode: ChiMode
    times: list[float]
    chi: list[float]
    lambda_values: list[float] = Field(default_factory=list)
    horizon: Optional[float] = None
    t_bar: Optional[float] = None
    constants: dict[str, float] = Field(default_factory=dict)


# ── Run configuration ──────────────────────────────────────────────────────

class Tolerances(BaseModel):
    model_config = ConfigDict(frozen=True)

    spectral: float = settings.SPECTRAL_TOL
    quadrature: float = settings.QUADRATURE_TOL
    support: float = settings.SUPPORT_TOL
    admissibility: float = settings.ADMISSIBILITY_TOL

    def scaled(self, factor: float) -> Tolerances:
        return Tolerances(
            spectral=self.spectral * factor,
            quadrature=self.quadrature * factor,
            support=self.support * factor,
            admissibility=self.admissibility * factor,
        )


class RunConfig(BaseModel):
    """Flat run configuration; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    dim: int = settings.SPATIAL_DIM
    grid_dims: int = settings.GRID_DIMS
    box_half_width: float = settings.BOX_HALF_WIDTH
    omega_radius: float = settings.OMEGA_RADIUS
    outer_radius: float = settings.OUTER_RADIUS
    epsilon: float = settings.EPSILON

    pressure_kind: PressureKind = PressureKind.GAMMA
    kappa: float = 1.0
    gamma: float = 2.0
    pressure_table: str = ""
    rho_bar: float = 1.0
    bump_kind: BumpKind = BumpKind.PLATEAU
    bump_amplitude: float = 0.1
    bump_balanced: bool = True

    horizon: float = settings.HORIZON
    time_samples: int = settings.TIME_SAMPLES
    chi_mode: ChiMode = ChiMode.ODE
    chi_margin: float = 0.1
    chi0: Optional[float] = None
    chi_c1: Optional[float] = None
    chi_c2: Optional[float] = None

    steps: int = 10
    wave_frequency: float = settings.WAVE_FREQUENCY
    cutoff_radius: float = 0.35
    hull_margin: float = settings.HULL_MARGIN
    search_budget: int = settings.SEARCH_BUDGET
    stagnation_limit: int = settings.STAGNATION_LIMIT
    seed: int = settings.DEFAULT_SEED

    tol_scale: float = 1.0
    spectral_tol: float = settings.SPECTRAL_TOL
    quadrature_tol: float = settings.QUADRATURE_TOL
    support_tol: float = settings.SUPPORT_TOL
    admissibility_tol: float = settings.ADMISSIBILITY_TOL
    bogovskii_angles: int = settings.BOGOVSKII_ANGLES
    bogovskii_ray_nodes: int = settings.BOGOVSKII_RAY_NODES

    out_dir: str = ""

    @field_validator("dim")
    @classmethod
    def supported_dim(cls, v: int) -> int:
        if v not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        return v

    @field_validator("grid_dims")
    @classmethod
    def resolved_grid(cls, v: int) -> int:
        if v < settings.MIN_GRID_POINTS:
            raise ValueError(f"grid_dims must be at least {settings.MIN_GRID_POINTS}")
        return v

    @field_validator("time_samples")
    @classmethod
    def enough_samples(cls, v: int) -> int:
        if v < 3:
            raise ValueError("time_samples must be at least 3")
        return v

    @field_validator(
        "tol_scale", "spectral_tol", "quadrature_tol", "support_tol", "admissibility_tol",
        "horizon", "rho_bar", "wave_frequency", "hull_margin", "cutoff_radius",
    )
    @classmethod
    def strictly_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("must be positive")
        return v

    @model_validator(mode="after")
    def consistent_geometry(self) -> RunConfig:
        if self.omega_radius + self.epsilon >= self.outer_radius:
            raise ValueError("outer_radius must exceed omega_radius + epsilon")
        if self.outer_radius + 2 * self.epsilon > self.box_half_width:
            raise ValueError("box_half_width must exceed outer_radius + 2*epsilon")
        if self.pressure_kind == PressureKind.TABULATED and not self.pressure_table:
            raise ValueError("pressure_kind=tabulated needs pressure_table")
        if self.wave_frequency < 2:
            raise ValueError("wave_frequency must be at least 2")
        return self

    @classmethod
    def from_file(cls, path: Path | str, **overrides: Any) -> RunConfig:
        """Parse a flat ``key = value`` file; CLI overrides win over file values."""
        raw = {k.strip().lower(): v for k, v in dotenv_values(path).items() if v is not None}
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    @property
    def tolerances(self) -> Tolerances:
        return Tolerances(
            spectral=self.spectral_tol,
            quadrature=self.quadrature_tol,
            support=self.support_tol,
            admissibility=self.admissibility_tol,
        ).scaled(self.tol_scale)

    def pressure_law(self) -> PressureLaw:
        if self.pressure_kind == PressureKind.GAMMA:
            return PressureLaw.gamma_law(self.kappa, self.gamma)
        pairs = [item.split(":") for item in self.pressure_table.split(",") if item.strip()]
        return PressureLaw.tabulated([float(r) for r, _ in pairs], [float(p) for _, p in pairs])

    def hashed_payload(self) -> dict[str, Any]:
        return self.model_dump(mode="json", exclude={"out_dir"})
