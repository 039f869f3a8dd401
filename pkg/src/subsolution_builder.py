"""Assembly of the initial strict subsolution (m̃, Ũ, q₀) from a density ρ₀.

    p₁ = p(ρ₀) − p(ρ̄)            compatible pressure deviation
    Δu = p₁ − p₁∗ω^ε              compact Poisson solve
    U⁽¹⁾ = −n/(n−1)∇²u + p^ε/(n−1) I
    div φ = p₁∗ω^ε                Bogovskii solve on Ω′
    A → (U⁽²⁾, V, m_slope)        antisymmetric lift
    Ũ = U⁽¹⁾ + U⁽²⁾,  m̃(t) = t·m_slope,  q₀ = p(ρ₀) + χ(t)/n
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import nnls

from config.settings import SPECTRAL_TOL
from src.bogovskii import (
    AntisymmetricLift,
    DivergenceSolution,
    StarDomain,
    antisymmetric_lift,
    bogovskii_solve,
)
from src.compact_poisson import CompactPoissonSolution, pressure_deviation, solve_compact
from src.errors import DomainError
from src.euler_geometry import e_field
from src.field_core import (
    BallRegion,
    Grid,
    ScalarField,
    SymTensorField,
    VectorField,
    bessel_window,
    divergence_array,
    gradient_array,
    hessian_array,
    laplacian_array,
    relative_max,
    support_excess,
)
from src.models import ChiMode, StageReport, Tolerances, VerificationCheck
from src.pressure_law import PressureKind, PressureLaw

logger = logging.getLogger(__name__)

__all__ = [
    "PressureKind",
    "PressureLaw",
    "ChiProfile",
    "LambdaProfile",
    "Subsolution",
    "SubsolutionParts",
    "zero_mean_bump",
    "random_zero_mean_bump",
    "density_from_bump",
    "build_U1",
    "build_subsolution",
    "assemble_subsolution",
    "trivial_subsolution",
    "lambda_profile",
    "choose_chi",
    "validate_subsolution",
]


# ── Bump generators ────────────────────────────────────────────────────────
# Bumps are Kaiser–Bessel windows; a window of radius R is resolved to near
# roundoff once π/h exceeds BUMP_SHARPNESS/R.
BUMP_SHARPNESS = 16.0


def zero_mean_bump(
    grid: Grid, radius: float, amplitude: float, *, balanced: bool = True,
    sharpness: float = BUMP_SHARPNESS,
) -> ScalarField:
    """Window on B_{radius/2} minus a wider window on B_radius scaled to cancel its discrete mean.

    ``balanced=False`` returns the bare positive bump (nonzero mean).
    """
    r = grid.radius()
    inner = bessel_window(r / (0.5 * radius), sharpness)
    if not balanced:
        return ScalarField(grid, amplitude * inner)
    outer = bessel_window(r / radius, sharpness)
    values = inner - (inner.sum() / outer.sum()) * outer
    values *= amplitude / np.max(np.abs(values))
    return ScalarField(grid, values)


def random_zero_mean_bump(
    grid: Grid, radius: float, amplitude: float, rng: np.random.Generator, *,
    modes: int = 4, sharpness: float = BUMP_SHARPNESS,
) -> ScalarField:
    """Seeded sum of windows inside B_radius, balanced to zero mean by a carrier window."""
    n = grid.dim
    values = np.zeros(grid.dims)
    for _ in range(modes):
        width = rng.uniform(0.4, 0.6) * radius
        direction = rng.standard_normal(n)
        direction /= np.linalg.norm(direction)
        center = direction * rng.uniform(0.0, radius - width)
        values += rng.uniform(-1.0, 1.0) * bessel_window(grid.radius(tuple(center)) / width, sharpness)
    carrier = bessel_window(grid.radius() / radius, sharpness)
    values -= (values.sum() / carrier.sum()) * carrier
    peak = np.max(np.abs(values))
    if peak == 0.0:
        return ScalarField.zeros(grid)
    values *= amplitude / peak
    return ScalarField(grid, values)


def density_from_bump(law: PressureLaw, rho_bar: float, bump: ScalarField) -> ScalarField:
    """ρ₀ = p⁻¹(p(ρ̄) + bump), exactly ρ̄ where the bump vanishes."""
    base = float(law.p(rho_bar))
    target = base + bump.values
    try:
        rho = law.inverse(target)
    except DomainError as exc:
        raise DomainError(f"bump drives p(ρ̄) + bump out of range: {exc}") from exc
    rho = np.where(bump.values == 0.0, rho_bar, rho)
    return ScalarField(bump.grid, rho)


# ── U⁽¹⁾ ──────────────────────────────────────────────────────────────────

def build_U1(u: ScalarField, p_eps: ScalarField, *, tolerance: float = SPECTRAL_TOL) -> SymTensorField:
    """U⁽¹⁾ = −n/(n−1)·∇²u + p^ε/(n−1)·I; rejected unless Δu = p^ε within ``tolerance``."""
    grid = u.grid
    n = grid.dim
    residual = relative_max(laplacian_array(u.values, grid) - p_eps.values, p_eps.values)
    if residual > tolerance:
        raise ValueError(f"u does not solve Δu = p^ε: relative residual {residual:.3e}")
    full = -(n / (n - 1.0)) * hessian_array(u.values, grid)
    for i in range(n):
        full[i, i] += p_eps.values / (n - 1.0)
    return SymTensorField.from_full(grid, full, traceless=True, project=True)


# ── χ profiles ─────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ChiProfile:
    """χ(t): a constant, the closed-form solution of χ′ = −C₁χ^½ − C₂χ^{3/2}, or samples.

    ``t_bar`` is the time up to which χ > nλ was verified (None when unchecked).
    """

    kind: str
    chi0: float
    c1: float = 0.0
    c2: float = 0.0
    times: tuple[float, ...] = ()
    values: tuple[float, ...] = ()
    t_bar: float | None = None
    min_gap: float | None = None
    cross_check: float | None = None
    _spline: Any = field(init=False, repr=False, default=None)

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "ode", "sampled"):
            raise ValueError(f"unknown χ profile kind {self.kind!r}")
        if not self.chi0 > 0:
            raise ValueError(f"χ(0) must be positive, got {self.chi0}")
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("ODE coefficients must be nonnegative")
        if self.kind == "sampled":
            if len(self.times) < 2 or len(self.times) != len(self.values):
                raise ValueError("sampled χ needs matching times and values")
            object.__setattr__(self, "_spline", PchipInterpolator(self.times, self.values))

    @classmethod
    def constant(cls, value: float) -> ChiProfile:
        return cls("constant", float(value))

    @classmethod
    def ode(cls, chi0: float, c1: float, c2: float) -> ChiProfile:
        return cls("ode", float(chi0), float(c1), float(c2))

    @classmethod
    def sampled(cls, times: np.ndarray, values: np.ndarray) -> ChiProfile:
        return cls("sampled", float(values[0]), times=tuple(map(float, times)), values=tuple(map(float, values)))

    @property
    def horizon(self) -> float:
        """First time χ reaches 0 (inf if never)."""
        if self.kind != "ode":
            return float("inf")
        w0 = np.sqrt(self.chi0)
        if self.c1 > 0 and self.c2 > 0:
            return 2.0 * np.arctan(w0 * np.sqrt(self.c2 / self.c1)) / np.sqrt(self.c1 * self.c2)
        if self.c1 > 0:
            return 2.0 * w0 / self.c1
        return float("inf")

    def _root(self, t: np.ndarray) -> np.ndarray:
        """w = √χ for the ODE profile, clamped to 0 past the horizon."""
        c1, c2 = self.c1, self.c2
        w0 = np.sqrt(self.chi0)
        if c1 > 0 and c2 > 0:
            w = np.sqrt(c1 / c2) * np.tan(np.arctan(w0 * np.sqrt(c2 / c1)) - 0.5 * np.sqrt(c1 * c2) * t)
        elif c1 > 0:
            w = w0 - 0.5 * c1 * t
        elif c2 > 0:
            w = w0 / (1.0 + 0.5 * c2 * w0 * t)
        else:
            w = np.full_like(t, w0)
        return np.where(t >= self.horizon, 0.0, np.maximum(w, 0.0))

    def value(self, t: np.ndarray | float) -> np.ndarray | float:
        t_arr = np.asarray(t, dtype=np.float64)
        if self.kind == "constant":
            out = np.full_like(t_arr, self.chi0)
        elif self.kind == "ode":
            out = self._root(t_arr) ** 2
        else:
            out = self._spline(t_arr)
        return float(out) if out.ndim == 0 else out

    def derivative(self, t: np.ndarray | float) -> np.ndarray | float:
        t_arr = np.asarray(t, dtype=np.float64)
        if self.kind == "constant":
            out = np.zeros_like(t_arr)
        elif self.kind == "ode":
            w = self._root(t_arr)
            out = -w * (self.c1 + self.c2 * w**2)
        else:
            out = self._spline.derivative()(t_arr)
        return float(out) if out.ndim == 0 else out

    def with_validity(self, t_bar: float | None, min_gap: float | None) -> ChiProfile:
        return dataclasses.replace(self, t_bar=t_bar, min_gap=min_gap)

    def describe(self) -> dict:
        data = {"kind": self.kind, "chi0": self.chi0, "t_bar": self.t_bar, "min_gap": self.min_gap}
        if self.kind == "ode":
            data.update(c1=self.c1, c2=self.c2, horizon=self.horizon, cross_check=self.cross_check)
        if self.kind == "sampled":
            data.update(times=list(self.times), values=list(self.values))
        return data

    @classmethod
    def from_description(cls, data: dict) -> ChiProfile:
        kind = data["kind"]
        if kind == "constant":
            base = cls.constant(data["chi0"])
        elif kind == "ode":
            base = cls.ode(data["chi0"], data["c1"], data["c2"])
            base = dataclasses.replace(base, cross_check=data.get("cross_check"))
        else:
            base = cls.sampled(np.asarray(data["times"]), np.asarray(data["values"]))
        return base.with_validity(data.get("t_bar"), data.get("min_gap"))


# ── Subsolution ────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SubsolutionParts:
    """Intermediate fields of the construction, kept for persistence and reports."""

    p1: ScalarField
    poisson: CompactPoissonSolution
    divergence: DivergenceSolution
    lift: AntisymmetricLift
    U1: SymTensorField


@dataclass(frozen=True, eq=False)
class Subsolution:
    """(m, U, q₀) sampled at ``times``; perturbations are stored as per-sample arrays.

    m(t_i) = t_i·m_slope + dm[i],   ∂_t m(t_i) = m_slope + dm_dot[i],
    U(t_i) = Ũ + dU[i] (packed upper triangle),   q₀ = p(ρ₀) + χ(t)/n.
    """

    rho0: ScalarField
    law: PressureLaw
    times: np.ndarray
    m_slope: VectorField
    U_tilde: SymTensorField
    domain: StarDomain
    rho_bar: float = 1.0
    chi: ChiProfile | None = None
    lambda_values: np.ndarray | None = None
    dm: np.ndarray | None = None
    dm_dot: np.ndarray | None = None
    dU: np.ndarray | None = None
    parts: SubsolutionParts | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        times = np.array(self.times, dtype=np.float64)
        if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
            raise ValueError("times must be a strictly increasing vector of at least two samples")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        n, dims = self.grid.dim, self.grid.dims
        shapes = {
            "dm": (times.size, n) + dims,
            "dm_dot": (times.size, n) + dims,
            "dU": (times.size, n * (n + 1) // 2) + dims,
        }
        present = [getattr(self, k) is not None for k in shapes]
        if any(present) and not all(present):
            raise ValueError("dm, dm_dot and dU must be given together")
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, dtype=np.float64)
                if arr.shape != shape:
                    raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def grid(self) -> Grid:
        return self.rho0.grid

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def perturbed(self) -> bool:
        return self.dm is not None

    def m_tilde(self, t: float) -> VectorField:
        return self.m_slope * t

    def m_at(self, i: int) -> VectorField:
        base = self.m_slope.values * self.times[i]
        return VectorField(self.grid, base + self.dm[i] if self.perturbed else base)

    def m_dot_at(self, i: int) -> VectorField:
        base = self.m_slope.values
        return VectorField(self.grid, base + self.dm_dot[i] if self.perturbed else base)

    def U_at(self, i: int) -> SymTensorField:
        base = self.U_tilde.values
        return SymTensorField(self.grid, base + self.dU[i] if self.perturbed else base, traceless=True)

    def q0_at(self, i: int) -> ScalarField:
        if self.chi is None:
            raise ValueError("q₀ needs χ; attach a profile with with_chi first")
        return ScalarField(self.grid, self.law.p(self.rho0.values) + self.chi.value(self.times[i]) / self.dim)

    def m_samples(self) -> np.ndarray:
        """(T_s, n, *dims) momentum at every sample."""
        shape = (-1,) + (1,) * (self.dim + 1)
        out = self.times.reshape(shape) * self.m_slope.values[None]
        return out + self.dm if self.perturbed else out

    def U_samples(self) -> np.ndarray:
        """(T_s, k, *dims) packed U at every sample."""
        out = np.broadcast_to(self.U_tilde.values, (self.times.size,) + self.U_tilde.values.shape)
        return out + self.dU if self.perturbed else np.array(out)

    def chi_values(self) -> np.ndarray:
        if self.chi is None:
            raise ValueError("χ is not attached")
        return np.asarray(self.chi.value(self.times))

    def with_chi(self, chi: ChiProfile, lambda_values: np.ndarray | None = None) -> Subsolution:
        return dataclasses.replace(
            self, chi=chi, lambda_values=None if lambda_values is None else np.asarray(lambda_values)
        )

    def with_times(self, times: np.ndarray) -> Subsolution:
        if self.perturbed:
            raise ValueError("cannot resample the time grid of a perturbed subsolution")
        return dataclasses.replace(self, times=np.asarray(times), lambda_values=None)

    def with_perturbation(self, dm: np.ndarray, dm_dot: np.ndarray, dU: np.ndarray) -> Subsolution:
        """Add a perturbation on top of any existing one."""
        if self.perturbed:
            dm, dm_dot, dU = self.dm + dm, self.dm_dot + dm_dot, self.dU + dU
        return dataclasses.replace(self, dm=dm, dm_dot=dm_dot, dU=dU)


def _default_times(horizon: float, samples: int) -> np.ndarray:
    return np.linspace(0.0, horizon, samples)


def build_subsolution(
    rho0: ScalarField,
    law: PressureLaw,
    epsilon: float,
    domain: StarDomain,
    *,
    rho_bar: float,
    omega: BallRegion | None = None,
    times: np.ndarray | None = None,
    tolerances: Tolerances | None = None,
    angles: int | None = None,
    ray_nodes: int | None = None,
) -> Subsolution:
    """Pre-perturbation subsolution; attach χ with ``choose_chi`` + ``with_chi``."""
    tolerances = tolerances or Tolerances()
    times = _default_times(1.0, 33) if times is None else np.asarray(times)

    p1 = pressure_deviation(rho0, law, rho_bar)
    poisson = solve_compact(
        p1, epsilon, omega, spectral_tol=tolerances.spectral, support_tol=tolerances.support
    )
    kwargs = {k: v for k, v in (("angles", angles), ("ray_nodes", ray_nodes)) if v is not None}
    divergence = bogovskii_solve(poisson.smoothed, domain, **kwargs)
    return assemble_subsolution(
        rho0, law, p1, poisson, divergence, times=times, rho_bar=rho_bar, tolerances=tolerances
    )


def assemble_subsolution(
    rho0: ScalarField,
    law: PressureLaw,
    p1: ScalarField,
    poisson: CompactPoissonSolution,
    divergence: DivergenceSolution,
    *,
    times: np.ndarray,
    rho_bar: float,
    tolerances: Tolerances,
) -> Subsolution:
    """Lift φ, form U⁽¹⁾ and Ũ = U⁽¹⁾ + U⁽²⁾ from the solved pieces."""
    lift = antisymmetric_lift(poisson.smoothed, divergence.phi, tolerance=tolerances.quadrature)
    U1 = build_U1(poisson.u, poisson.p_eps, tolerance=tolerances.spectral)
    U_tilde = SymTensorField.from_full(
        rho0.grid, U1.full() + lift.U2.full(), traceless=True, project=True
    )
    logger.info(
        "subsolution assembled: max|m_slope| %.3e, max|Ũ| %.3e",
        lift.m_slope.max_abs(), U_tilde.max_abs(),
    )
    return Subsolution(
        rho0=rho0, law=law, times=np.asarray(times), m_slope=lift.m_slope, U_tilde=U_tilde,
        domain=divergence.domain, rho_bar=rho_bar,
        parts=SubsolutionParts(p1=p1, poisson=poisson, divergence=divergence, lift=lift, U1=U1),
    )


def trivial_subsolution(
    grid: Grid,
    law: PressureLaw,
    rho_bar: float,
    domain: StarDomain,
    times: np.ndarray,
    chi: ChiProfile | None = None,
) -> Subsolution:
    """Constant density, zero momentum and zero Ũ."""
    return Subsolution(
        rho0=ScalarField(grid, np.full(grid.dims, float(rho_bar))),
        law=law, times=np.asarray(times),
        m_slope=VectorField.zeros(grid), U_tilde=SymTensorField.zeros(grid),
        domain=domain, rho_bar=rho_bar, chi=chi,
    )


# ── λ(t) and χ(t) ──────────────────────────────────────────────────────────

@dataclass(frozen=True)
class LambdaProfile:
    """λ(t) = max_x e(ρ₀, m̃(t), Ũ) at ``times`` and its envelope C₁t² + C₂."""

    times: np.ndarray
    values: np.ndarray
    c1: float
    c2: float

    def envelope(self, t: np.ndarray | float) -> np.ndarray:
        return self.c1 * np.asarray(t) ** 2 + self.c2


def lambda_profile(sub: Subsolution, times: np.ndarray | None = None) -> LambdaProfile:
    times = sub.times if times is None else np.asarray(times, dtype=np.float64)
    U_full = sub.U_tilde.full()
    values = np.array([
        float(np.max(e_field(sub.rho0.values, t * sub.m_slope.values, U_full))) for t in times
    ])
    design = np.stack([times**2, np.ones_like(times)], axis=1)
    (c1, c2), _ = nnls(design, values)
    # Lift the fit until it dominates every sample.
    shortfall = float(np.max(values - design @ np.array([c1, c2])))
    if shortfall > 0:
        c2 += shortfall * (1.0 + 1e-9) + 1e-300
    return LambdaProfile(times=times, values=values, c1=float(c1), c2=float(c2))


def choose_chi(
    lambda_values: np.ndarray,
    times: np.ndarray,
    n: int,
    mode: ChiMode | str = ChiMode.CONSTANT,
    margin: float = 0.1,
    *,
    chi0: float | None = None,
    constants: Any = None,
) -> ChiProfile:
    """χ with χ > nλ on the samples.

    ``constant`` returns n·max λ + margin.  ``ode`` solves the admissibility
    ODE from χ(0) (default nλ(0) + margin) with ``constants`` (AdmissibilityConstants
    or a (C₁, C₂) pair) and
    records the maximal time T̄ up to which χ > nλ.
    """
    lam = np.asarray(lambda_values, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    mode = ChiMode(mode)
    if not margin > 0:
        raise ValueError("χ margin must be positive")

    if mode == ChiMode.CONSTANT:
        profile = ChiProfile.constant(chi0 if chi0 is not None else n * float(lam.max()) + margin)
        gap = float(np.min(profile.value(times) - n * lam))
        if gap <= 0:
            raise ValueError(f"constant χ = {profile.chi0:.6g} does not exceed nλ (gap {gap:.3e})")
        return profile.with_validity(float(times[-1]), gap)

    from src.admissibility import chi_ode_solve, maximal_time

    if constants is None:
        raise ValueError("ode-admissible χ needs the admissibility constants (C₁, C₂)")
    start = chi0 if chi0 is not None else n * float(lam[0]) + margin
    profile = chi_ode_solve(start, constants, float(times[-1]))
    t_bar = maximal_time(profile, lam, times, n)
    within = times <= t_bar
    gap = float(np.min(np.asarray(profile.value(times[within])) - n * lam[within]))
    if t_bar < times[-1]:
        logger.warning("χ stays above nλ only up to T̄ = %.6g < T = %.6g", t_bar, times[-1])
    return profile.with_validity(t_bar, gap)


# ── Validation ─────────────────────────────────────────────────────────────

def _peak_location(values: np.ndarray, grid: Grid, t: float) -> list[float]:
    """[t, x…] of the largest component magnitude of ``values`` (leading axes are components)."""
    magnitude = np.abs(values).reshape((-1,) + grid.dims).max(axis=0)
    idx = np.unravel_index(int(np.argmax(magnitude)), grid.dims)
    return [float(t)] + [float(x[idx]) for x in grid.coordinates]


def validate_subsolution(sub: Subsolution, tolerances: Tolerances | None = None) -> StageReport:
    """Strict-subsolution predicates at every time sample.

    m and Ũ carry the Bogovskii field, so their support is held to the
    quadrature tolerance rather than the spectral support tolerance of u.
    """
    tolerances = tolerances or Tolerances()
    report = StageReport(stage="subsolution")
    if sub.chi is None:
        report.error = "χ not attached"
        return report
    grid, n = sub.grid, sub.dim
    rho = sub.rho0.values
    grad_p = gradient_array(sub.law.p(rho), grid)
    region = sub.domain.region
    outer_mass = float(np.sum(rho[sub.domain.mask(grid)]) * grid.cell_volume)

    div_m = momentum = excess = trace = energy_ratio = 0.0
    min_gap = float("inf")
    worst_at: list[float] | None = None
    div_at: list[float] | None = None
    momentum_at: list[float] | None = None
    for i, t in enumerate(sub.times):
        m, U = sub.m_at(i), sub.U_at(i)
        chi_t = float(sub.chi.value(t))
        U_full = U.full()
        div = divergence_array(m.values, grid)
        value = relative_max(div, m.values)
        if value > div_m:
            div_m, div_at = value, _peak_location(div, grid, t)
        resid = sub.m_dot_at(i).values + divergence_array(U_full, grid) + grad_p
        value = relative_max(resid, grad_p if np.any(grad_p) else sub.m_dot_at(i).values)
        if value > momentum:
            momentum, momentum_at = value, _peak_location(resid, grid, t)
        excess = max(excess, support_excess(m, region), support_excess(U, region))
        trace = max(trace, relative_max(U.trace().values, U.values))
        gap = chi_t / n - e_field(rho, m.values, U_full)
        idx = np.unravel_index(int(np.argmin(gap)), grid.dims)
        if float(gap[idx]) < min_gap:
            min_gap = float(gap[idx])
            worst_at = [float(t)] + [float(x[idx]) for x in grid.coordinates]
        kinetic = float(np.sum(m.values**2) * grid.cell_volume)
        energy_ratio = max(energy_ratio, kinetic / (chi_t * outer_mass))

    report.checks = [
        VerificationCheck.at_most("divergence_free", div_m, tolerances.spectral, location=div_at),
        VerificationCheck.at_most("momentum_identity", momentum, tolerances.quadrature, location=momentum_at),
        VerificationCheck.at_most("support", excess, tolerances.quadrature),
        VerificationCheck.at_most("traceless", trace, 1e-10),
        VerificationCheck.positive("hull_gap", min_gap, location=worst_at),
        VerificationCheck.at_most("energy_bound", energy_ratio, 1.0),
    ]
    report.metrics = {
        "samples": int(sub.times.size),
        "chi_kind": sub.chi.kind,
        "min_hull_gap": min_gap,
        "perturbed": sub.perturbed,
    }
    logger.info("subsolution validation: %s", "passed" if report.passed else "FAILED")
    return report
