"""Energy admissibility: internal energy, the χ inequality, T̄ and weak residuals."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from src.errors import ChiTooSmallError, DomainError
from src.field_core import Grid, gradient_array, unpack_symmetric
from src.models import StageReport, Tolerances, VerificationCheck, WeakKind
from src.pressure_law import PressureKind, PressureLaw
from src.subsolution_builder import ChiProfile, Subsolution
from src.weak_forms import (
    TestFunctionFamily,
    WeakResidual,
    balance_residual,
    signed_balance,
    vector_balance_residual,
)

logger = logging.getLogger(__name__)

SAFETY = 1.01
TABLE_NODES = 513


# ── Internal energy ────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class InternalEnergy:
    """ε(ρ) = ∫_{ρ_ref}^{ρ} p(s)/s² ds, so that p(ρ) = ρ²ε′(ρ)."""

    law: PressureLaw
    rho_ref: float
    method: str = "closed"
    _table: Any = field(init=False, repr=False, default=None)

    def __post_init__(self) -> None:
        self.law.check_density(self.rho_ref)
        if self.method not in ("closed", "quadrature"):
            raise ValueError(f"unknown internal-energy method {self.method!r}")
        if self.law.kind == PressureKind.TABULATED:
            lo, hi = self.law.density_range
            nodes = np.linspace(lo, hi, TABLE_NODES)
            values = np.array([self._quad(r) for r in nodes])
            object.__setattr__(self, "_table", CubicSpline(nodes, values))

    def _quad(self, rho: float) -> float:
        value, _ = integrate.quad(
            lambda s: float(self.law.p(s)) / s**2, self.rho_ref, rho, epsabs=1e-14, epsrel=1e-12, limit=200
        )
        return value

    def value(self, rho: np.ndarray | float) -> np.ndarray:
        rho = self.law.check_density(rho)
        if self.law.kind == PressureKind.TABULATED:
            return self._table(rho)
        if self.method == "quadrature":
            return np.vectorize(self._quad)(rho)
        kappa, gamma = self.law.kappa, self.law.gamma
        if gamma == 1.0:
            return kappa * np.log(rho / self.rho_ref)
        return kappa * (rho ** (gamma - 1.0) - self.rho_ref ** (gamma - 1.0)) / (gamma - 1.0)

    def derivative(self, rho: np.ndarray | float) -> np.ndarray:
        rho = self.law.check_density(rho)
        return self.law.p(rho) / rho**2


def internal_energy(law: PressureLaw, rho_ref: float, method: str = "closed") -> InternalEnergy:
    try:
        return InternalEnergy(law, float(rho_ref), method)
    except DomainError as exc:
        raise DomainError(f"reference density outside the law's range: {exc}") from exc


# ── Constants ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class AdmissibilityConstants:
    C0: float
    c1: float
    c2: float

    @property
    def C1(self) -> float:
        return 2.0 * self.c1 * self.C0

    @property
    def C2(self) -> float:
        return self.c2 * self.C0

    def as_dict(self) -> dict[str, float]:
        return {"C0": self.C0, "c1": self.c1, "c2": self.c2, "C1": self.C1, "C2": self.C2}


def _max_gradient(values: np.ndarray, grid: Grid, mask: np.ndarray | None) -> float:
    if np.ptp(values) == 0.0:
        return 0.0
    norm = np.sqrt(np.sum(gradient_array(values, grid) ** 2, axis=0))
    return float(norm[mask].max() if mask is not None else norm.max())


def admissibility_constants(sub_or_rho0: Subsolution | Any, law: PressureLaw | None = None) -> AdmissibilityConstants:
    """Grid-sup bounds on ρ₀ and its gradients, inflated by 1%.

    Accepts a Subsolution (sups over Ω′) or a bare ρ₀ field with its law
    (sups over the whole box).
    """
    if isinstance(sub_or_rho0, Subsolution):
        sub = sub_or_rho0
        rho0, law, rho_ref = sub.rho0, sub.law, sub.rho_bar
        mask = sub.domain.mask(sub.grid)
    else:
        rho0, rho_ref, mask = sub_or_rho0, None, None
        if law is None:
            raise ValueError("a bare density needs its pressure law")
    rho = rho0.values
    if np.any(rho <= 0):
        raise DomainError(f"density must be positive, min ρ₀ = {float(rho.min()):.6g}")
    if rho_ref is None:
        rho_ref = float(np.median(rho))
    energy = internal_energy(law, rho_ref)
    f1 = energy.value(rho) + law.p(rho) / rho
    grid = rho0.grid
    constants = AdmissibilityConstants(
        C0=SAFETY * float(np.sqrt(rho.max())),
        c1=SAFETY * _max_gradient(f1, grid, mask),
        c2=SAFETY * _max_gradient(1.0 / rho, grid, mask),
    )
    logger.info("admissibility constants: %s", constants.as_dict())
    return constants


# ── χ ODE ──────────────────────────────────────────────────────────────────

def _coefficients(constants: AdmissibilityConstants | tuple[float, float]) -> tuple[float, float]:
    if isinstance(constants, AdmissibilityConstants):
        return constants.C1, constants.C2
    c1, c2 = constants
    return float(c1), float(c2)


def chi_ode_solve(
    chi0: float, constants: AdmissibilityConstants | tuple[float, float], horizon: float
) -> ChiProfile:
    """χ′ = −C₁χ^½ − C₂χ^{3/2}, χ(0) = χ₀, in closed form, cross-checked by RK45.

    The cross-check runs until 0.9 of the positivity horizon or ``horizon``,
    whichever comes first, and is stored as a relative deviation.
    """
    c1, c2 = _coefficients(constants)
    profile = ChiProfile.ode(chi0, c1, c2)
    end = min(float(horizon), 0.9 * profile.horizon)
    if not end > 0:
        return profile

    def rhs(_t: float, y: np.ndarray) -> np.ndarray:
        chi = max(float(y[0]), 0.0)
        return np.array([-c1 * np.sqrt(chi) - c2 * chi**1.5])

    t_eval = np.linspace(0.0, end, 65)
    sol = integrate.solve_ivp(rhs, (0.0, end), [chi0], method="RK45", rtol=1e-12, atol=1e-14, t_eval=t_eval)
    if not sol.success:
        logger.warning("χ ODE cross-check failed: %s", sol.message)
        return profile
    deviation = float(np.max(np.abs(sol.y[0] - profile.value(t_eval))) / chi0)
    if deviation > 1e-8:
        logger.warning("χ closed form and RK45 differ by %.3e relative", deviation)
    return dataclasses.replace(profile, cross_check=deviation)


def maximal_time(
    chi: ChiProfile,
    lambda_values: np.ndarray | Callable[[float], float],
    times: np.ndarray,
    n: int,
) -> float:
    """T̄ = sup{t : χ(s) > nλ(s) for s ≤ t}.

    λ is a callable or samples at ``times`` (linearly interpolated).  Without a
    crossing T̄ is the positivity horizon of χ when λ ≡ 0, otherwise the end of
    the sampled window.
    """
    times = np.asarray(times, dtype=np.float64)
    if callable(lambda_values):
        lam_fn = lambda_values
        lam = np.array([float(lambda_values(t)) for t in times])
    else:
        lam = np.asarray(lambda_values, dtype=np.float64)
        lam_fn = lambda t: float(np.interp(t, times, lam))

    def gap(t: float) -> float:
        return float(chi.value(t)) - n * lam_fn(t)

    g0 = gap(float(times[0]))
    if g0 <= 0:
        raise ChiTooSmallError(float(chi.value(times[0])), n * float(lam[0]))
    g = np.array([gap(t) for t in times])
    bad = np.nonzero(g <= 0)[0]
    if bad.size:
        k = int(bad[0])
        # χ vanishes past its horizon, so a zero gap there is the horizon itself.
        if g[k] == 0.0:
            return min(float(times[k]), float(chi.horizon))
        root = brentq(gap, times[k - 1], times[k], xtol=1e-14, rtol=1e-14)
        return min(float(root), float(chi.horizon))
    if np.all(lam == 0.0):
        return float(chi.horizon)
    logger.info("χ − nλ stays positive on the sampled window; T̄ censored at %.6g", times[-1])
    return float(times[-1])


# ── Pointwise criterion ────────────────────────────────────────────────────

@dataclass(frozen=True)
class AdmissibilityField:
    """Left side of the pointwise energy criterion on grid × time samples.

    ``bound`` is the per-time envelope ½χ′ + ½(C₁√χ + C₂χ^{3/2}) built from
    the constants; it vanishes when χ solves the admissibility ODE.
    """

    times: np.ndarray
    worst: np.ndarray
    actual: np.ndarray
    bound: np.ndarray | None = None

    @property
    def max_worst(self) -> float:
        return float(self.worst.max())

    @property
    def max_actual(self) -> float:
        return float(self.actual.max())

    def worst_location(self, grid: Grid) -> list[float]:
        idx = np.unravel_index(int(np.argmax(self.worst)), self.worst.shape)
        return [float(self.times[idx[0]])] + [float(x[idx[1:]]) for x in grid.coordinates]


def _potential_gradients(sub: Subsolution) -> tuple[np.ndarray, np.ndarray]:
    """∇(ε(ρ₀) + p(ρ₀)/ρ₀) and ∇(1/ρ₀), both (n, *dims)."""
    grid = sub.grid
    rho = sub.rho0.values
    if np.ptp(rho) == 0.0:
        zeros = np.zeros((grid.dim,) + grid.dims)
        return zeros, zeros.copy()
    energy = internal_energy(sub.law, sub.rho_bar)
    return (
        gradient_array(energy.value(rho) + sub.law.p(rho) / rho, grid),
        gradient_array(1.0 / rho, grid),
    )


def pointwise_admissibility(
    sub: Subsolution, constants: AdmissibilityConstants | None = None
) -> AdmissibilityField:
    """½χ′ + m·∇(ε(ρ₀) + p(ρ₀)/ρ₀) + (χ/2)·m·∇(1/ρ₀), worst-case and actual.

    The worst case replaces m·v by √(ρ₀χ)·1_{Ω′}·|v|, which bounds every
    state with |m|² ≤ ρ₀χ supported in Ω′.
    """
    if sub.chi is None:
        raise ValueError("pointwise admissibility needs χ")
    grid = sub.grid
    rho = sub.rho0.values
    g, h = _potential_gradients(sub)
    g_norm = np.sqrt(np.sum(g**2, axis=0))
    h_norm = np.sqrt(np.sum(h**2, axis=0))
    inside = sub.domain.mask(grid).astype(np.float64)

    chi = sub.chi_values()
    dchi = np.asarray(sub.chi.derivative(sub.times), dtype=np.float64)
    m = sub.m_samples()
    worst = np.empty((sub.times.size,) + grid.dims)
    actual = np.empty_like(worst)
    for i in range(sub.times.size):
        root = np.sqrt(rho * chi[i]) * inside
        worst[i] = 0.5 * dchi[i] + root * (g_norm + 0.5 * chi[i] * h_norm)
        actual[i] = 0.5 * dchi[i] + np.sum(m[i] * (g + 0.5 * chi[i] * h), axis=0)
    bound = None
    if constants is not None:
        root = np.sqrt(chi)
        bound = 0.5 * dchi + 0.5 * (constants.C1 * root + constants.C2 * root**3)
    return AdmissibilityField(times=sub.times, worst=worst, actual=actual, bound=bound)


def satisfies_chi_inequality(chi: ChiProfile, constants: AdmissibilityConstants) -> bool:
    """Whether χ′ ≤ −C₁χ^½ − C₂χ^{3/2} holds by construction."""
    if chi.kind == "ode":
        return chi.c1 >= constants.C1 and chi.c2 >= constants.C2
    if chi.kind == "constant":
        return constants.C1 == 0.0 and constants.C2 == 0.0
    return False


# ── Weak residuals ─────────────────────────────────────────────────────────

def _family(grid: Grid, times: np.ndarray, family: TestFunctionFamily | None, nonnegative: bool) -> TestFunctionFamily:
    if family is None:
        return TestFunctionFamily.for_times(grid, times, nonnegative=nonnegative)
    if family.grid != grid:
        raise ValueError("test family lives on a different grid")
    if len(family) == 0:
        raise ValueError("test family is empty")
    if nonnegative and not family.nonnegative:
        raise ValueError("the energy inequality needs a nonnegative test family")
    return family


def weak_residual(
    kind: WeakKind | str,
    sub: Subsolution,
    *,
    relaxed: bool = True,
    surrogate: bool = False,
    family: TestFunctionFamily | None = None,
) -> WeakResidual:
    """Weak-form residual of the mass, momentum or energy balance for ``sub``.

    mass       ∂_t ρ₀ + div m = 0
    momentum   ∂_t m + div U + ∇q₀ = 0 (``relaxed``) or the Euler flux
               m⊗m/ρ₀ + p(ρ₀)I
    energy     ∂_t E + div F ≤ 0 against nonnegative tests; the result's
               ``signed`` value must be ≥ −tol.  ``surrogate`` replaces |m|²
               by ρ₀χ on Ω′.
    """
    kind = WeakKind(kind)
    grid, n = sub.grid, sub.dim
    times = sub.times
    rho = sub.rho0.values
    family = _family(grid, times, family, nonnegative=kind == WeakKind.ENERGY)
    m = sub.m_samples()
    T = times.size

    if kind == WeakKind.MASS:
        density = np.broadcast_to(rho, (T,) + grid.dims)
        return balance_residual(times, density, m, family)

    if kind == WeakKind.MOMENTUM:
        flux = np.empty((T, n, n) + grid.dims)
        if relaxed:
            U = sub.U_samples()
            for i in range(T):
                q0 = sub.q0_at(i).values
                flux[i] = unpack_symmetric(U[i], n)
                for k in range(n):
                    flux[i, k, k] += q0 - q0.mean()
        else:
            p = sub.law.p(rho)
            for i in range(T):
                flux[i] = m[i][:, None] * m[i][None, :] / rho
                for k in range(n):
                    flux[i, k, k] += p - p.mean()
        return vector_balance_residual(times, m, flux, family)

    density, flux = energy_flux_terms(sub, surrogate=surrogate)
    return signed_balance(times, density, flux, family)


def energy_flux_terms(sub: Subsolution, *, surrogate: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """(E, F) at every time: E = ρ₀ε + |m|²/2ρ₀, F = (ε + |m|²/2ρ₀² + p/ρ₀)m.

    With ``surrogate`` the kinetic density |m|² is replaced by ρ₀χ·1_{Ω′}.
    """
    rho = sub.rho0.values
    eps = internal_energy(sub.law, sub.rho_bar).value(rho)
    m = sub.m_samples()
    if surrogate:
        chi = sub.chi_values().reshape((-1,) + (1,) * sub.dim)
        kinetic = rho * chi * sub.domain.mask(sub.grid)
    else:
        kinetic = np.sum(m**2, axis=1)
    E = rho * eps + kinetic / (2.0 * rho)
    F = (eps + kinetic / (2.0 * rho**2) + sub.law.p(rho) / rho)[:, None] * m
    return E, F


def validate_admissibility(
    sub: Subsolution,
    constants: AdmissibilityConstants | None = None,
    tolerances: Tolerances | None = None,
    *,
    family: TestFunctionFamily | None = None,
) -> StageReport:
    """Pointwise criterion plus mass, momentum and energy weak residuals.

    A χ that does not satisfy χ′ ≤ −C₁χ^½ − C₂χ^{3/2} for ``constants`` fails
    the ``chi_inequality`` check; a constant χ passes only when C₁ = C₂ = 0.
    """
    tolerances = tolerances or Tolerances()
    report = StageReport(stage="admissibility")
    if sub.chi is None:
        report.error = "χ not attached"
        return report
    constants = constants or admissibility_constants(sub)
    field_ = pointwise_admissibility(sub, constants)
    mass = weak_residual(WeakKind.MASS, sub, family=family)
    momentum = weak_residual(WeakKind.MOMENTUM, sub, family=family)
    energy = weak_residual(WeakKind.ENERGY, sub, surrogate=True)
    covers = sub.chi.t_bar is None or sub.chi.t_bar >= float(sub.times[-1]) * (1.0 - 1e-12)

    checks = [
        VerificationCheck.at_most("mass_weak", mass.relative, tolerances.quadrature, detail=mass.test),
        VerificationCheck.at_most(
            "momentum_weak", momentum.relative, tolerances.quadrature, detail=momentum.test
        ),
        VerificationCheck.at_most(
            "actual_below_worst", float(np.max(field_.actual - field_.worst)), tolerances.admissibility
        ),
        VerificationCheck(
            name="t_bar_covers_window", value=float(sub.chi.t_bar or sub.times[-1]),
            tolerance=float(sub.times[-1]), comparison=">=", passed=covers,
        ),
    ]
    enforced = satisfies_chi_inequality(sub.chi, constants)
    checks.append(VerificationCheck.at_least(
        "chi_inequality", float(enforced), 1.0,
        detail=f"χ is {sub.chi.kind}; C₁ = {constants.C1:.3e}, C₂ = {constants.C2:.3e}",
    ))
    checks.append(VerificationCheck.at_most(
        "pointwise_worst", field_.max_worst, tolerances.admissibility,
        location=field_.worst_location(sub.grid),
    ))
    checks.append(VerificationCheck.at_least(
        "energy_inequality", energy.signed, -tolerances.quadrature, detail=energy.test
    ))
    report.checks = checks
    report.metrics = {
        "constants": constants.as_dict(),
        "chi_inequality_enforced": enforced,
        "max_worst": field_.max_worst,
        "max_actual": field_.max_actual,
        "energy_signed": energy.signed,
        "t_bar": sub.chi.t_bar,
        "chi_horizon": sub.chi.horizon,
    }
    logger.info("admissibility: %s", "passed" if report.passed else "FAILED")
    return report
