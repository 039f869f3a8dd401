"""Compactly supported solutions of Δu = p₁ − p₁∗ω^ε.

The Fourier-side factor (ω̂^ε − 1)/|k|² is the transform of a compactly
supported kernel (1 − ω̂^ε vanishes to second order at k = 0), so
u = p₁ ∗ (that kernel) lives in Ω^ε whenever p₁ lives in Ω.  On the grid the
construction is a single pointwise multiplication in Fourier space.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from config.settings import SPECTRAL_TOL, SUPPORT_TOL
from src.errors import IncompatibleDensityError
from src.field_core import (
    BallRegion,
    ScalarField,
    band_limit,
    from_spectral,
    kernel_transform,
    laplacian_array,
    mollifier,
    relative_max,
    support_excess,
    support_radius,
    to_spectral,
)
from src.models import VerificationCheck
from src.pressure_law import PressureLaw

logger = logging.getLogger(__name__)

MEAN_TOL = 1e-10
# Values below this fraction of the peak count as outside the support.
ROUNDOFF_FLOOR = 1e-12


def pressure_deviation(rho0: ScalarField, law: PressureLaw, rho_bar: float) -> ScalarField:
    """p₁ = p(ρ₀) − p(ρ̄), rejected unless its discrete mean vanishes."""
    law.check_density(rho0.values)
    p1 = law.p(rho0.values) - law.p(rho_bar)
    peak = float(np.max(np.abs(p1)))
    mean = float(np.mean(p1))
    if abs(mean) > MEAN_TOL * peak:
        raise IncompatibleDensityError(
            f"incompatible density: mean of p(ρ₀) − p(ρ̄) is {mean:.3e} "
            f"(> {MEAN_TOL:g}·max|p₁| = {MEAN_TOL * peak:.3e})"
        )
    return ScalarField(rho0.grid, p1)


@dataclass(frozen=True, eq=False)
class CompactPoissonSolution:
    u: ScalarField
    p_eps: ScalarField
    p1: ScalarField
    epsilon: float
    residual_linf: float
    support_excess: float
    region: BallRegion
    smoothed: ScalarField = field(repr=False, default=None)  # p₁∗ω^ε

    def checks(self, spectral_tol: float = SPECTRAL_TOL, support_tol: float = SUPPORT_TOL) -> list[VerificationCheck]:
        return [
            VerificationCheck.at_most("poisson_residual", self.residual_linf, spectral_tol),
            VerificationCheck.at_most(
                "u_support_excess", self.support_excess, support_tol,
                detail=f"outside ball of radius {self.region.radius:.4g}",
            ),
            VerificationCheck.at_most("u_mean", abs(self.u.mean()), 1e-12 * max(self.u.max_abs(), 1.0)),
        ]


def _fourier_factor(omega_hat: np.ndarray, k_squared: np.ndarray) -> np.ndarray:
    factor = np.zeros_like(omega_hat)
    nonzero = k_squared > 0
    factor[nonzero] = (omega_hat[nonzero] - 1.0) / k_squared[nonzero]
    return factor


def solve_compact(
    p1: ScalarField,
    epsilon: float,
    omega: BallRegion | None = None,
    *,
    spectral_tol: float = SPECTRAL_TOL,
    support_tol: float = SUPPORT_TOL,
) -> CompactPoissonSolution:
    """Solve Δu = p^ε with û = p̂₁(ω̂^ε − 1)/|k|² and û(0) = 0.

    ``omega`` is the region carrying p₁; when omitted it is the smallest
    origin centred ball holding every node where the input p₁ rises above
    roundoff.  Support is checked against that region grown by ε plus one
    grid cell.
    """
    grid = p1.grid
    mean = p1.mean()
    if abs(mean) > MEAN_TOL * max(p1.max_abs(), 1e-300):
        logger.warning("solve_compact: p₁ has nonzero mean %.3e; u will not be compact", mean)
    if omega is None:
        omega = BallRegion(support_radius(p1, floor=ROUNDOFF_FLOOR))

    p1 = band_limit(p1)
    omega_hat = kernel_transform(mollifier(epsilon, grid))
    p_hat = to_spectral(p1.values, grid)

    u_hat = p_hat * _fourier_factor(omega_hat, grid.k_squared)
    u_hat.flat[0] = 0.0
    u = ScalarField(grid, from_spectral(u_hat, grid))
    p_eps = ScalarField(grid, from_spectral(p_hat * (1.0 - omega_hat), grid))
    smoothed = ScalarField(grid, from_spectral(p_hat * omega_hat, grid))

    residual = relative_max(laplacian_array(u.values, grid) - p_eps.values, p_eps.values)
    region = omega.grown(epsilon + grid.max_spacing)
    excess = support_excess(u, region)

    if residual > spectral_tol:
        logger.warning("compact Poisson residual %.3e exceeds %.1e", residual, spectral_tol)
    if excess > support_tol:
        logger.warning(
            "u leaks outside Ω^ε: support excess %.3e > %.1e (grid too coarse or box too small)",
            excess, support_tol,
        )
    logger.info("compact Poisson solve: residual %.2e, support excess %.2e", residual, excess)
    return CompactPoissonSolution(
        u=u, p_eps=p_eps, p1=p1, epsilon=epsilon, residual_linf=residual,
        support_excess=excess, region=region, smoothed=smoothed,
    )


def torus_inverse_laplacian(p: ScalarField) -> ScalarField:
    """Zero-mean periodic solution of Δu = p − mean(p)."""
    grid = p.grid
    hat = to_spectral(band_limit(p).values, grid)
    k2 = grid.k_squared
    out = np.zeros_like(hat)
    nonzero = k2 > 0
    out[nonzero] = -hat[nonzero] / k2[nonzero]
    return ScalarField(grid, from_spectral(out, grid))


@dataclass(frozen=True)
class DecayReport:
    zero_mode: float
    max_modulus: float
    tail_ratio: float
    decay_exponent: float
    steepening: bool
    shell_k: tuple[float, ...]
    shell_max: tuple[float, ...]

    def checks(self) -> list[VerificationCheck]:
        return [
            VerificationCheck.at_most("kernel_zero_mode_error", abs(self.zero_mode - 1.0), 1e-12),
            VerificationCheck.at_most("kernel_modulus_bound", self.max_modulus - 1.0, 1e-12),
        ]


def verify_pws_decay(omega_eps: ScalarField) -> DecayReport:
    """Real-axis consequences of the Paley–Wiener–Schwartz bound for ω̂^ε."""
    grid = omega_eps.grid
    modulus = np.abs(kernel_transform(omega_eps))
    k_mag = np.sqrt(sum(k**2 for k in np.meshgrid(*grid.wavenumbers, indexing="ij")))
    k_nyq = min(np.pi / h for h in grid.spacing)
    dk = min(2.0 * np.pi / length for length in grid.box.lengths)

    inside = k_mag <= k_nyq
    shell = np.floor(k_mag[inside] / dk).astype(int)
    n_shells = int(shell.max()) + 1
    shell_max = np.zeros(n_shells)
    np.maximum.at(shell_max, shell, modulus[inside])
    shell_k = (np.arange(n_shells) + 0.5) * dk

    zero_mode = float(modulus.flat[0])
    # Fit only shells above roundoff.
    usable = np.nonzero((np.arange(n_shells) > 0) & (shell_max > 1e-13 * zero_mode))[0]
    slope_lo = slope_hi = 0.0
    if usable.size >= 4:
        half = usable.size // 2
        lo, hi = usable[:half], usable[half:]
        slope_lo = float(np.polyfit(np.log(shell_k[lo]), np.log(shell_max[lo]), 1)[0])
        slope_hi = float(np.polyfit(np.log(shell_k[hi]), np.log(shell_max[hi]), 1)[0])

    return DecayReport(
        zero_mode=zero_mode,
        max_modulus=float(modulus.max()),
        tail_ratio=float(shell_max[-1] / zero_mode),
        decay_exponent=-slope_hi,
        steepening=slope_hi < slope_lo,
        shell_k=tuple(shell_k.tolist()),
        shell_max=tuple(shell_max.tolist()),
    )
