"""Separable space-time test functions and weak-form pairings.

A test function is Ψ(x, t) = S(x)·τ(t) with S a truncated Gaussian bump and
τ a Gaussian time window, centred early, midway or late, modulated by 1, sin
or cos.  Pairings are a plain sum over the grid in space and, in time, the
trapezoid rule on a cubic-spline refinement of the samples, so that narrow
windows near the ends of the interval are still resolved.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from src.field_core import Grid, gradient_array, smooth_step, smooth_step_derivative

logger = logging.getLogger(__name__)

BUMP_WIDTHS = (0.05, 0.07, 0.09)
CENTER_OFFSET = 0.15
# (centre, width) of each Gaussian time window as fractions of the window
# length; every window is below e^{-32} at both ends.
TIME_WINDOWS = ((0.125, 1.0 / 64.0), (0.5, 0.05), (0.875, 1.0 / 64.0))
# Time pairings integrate a cubic spline of the samples on this many
# subintervals per sampling step.
TIME_REFINEMENT = 16


@dataclass(frozen=True)
class SpatialBump:
    """exp(−|x−c|²/2σ²), cut off smoothly between 8σ and 9σ."""

    center: tuple[float, ...]
    sigma: float

    def _radial(self, grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        offsets = np.stack([x - c for x, c in zip(grid.coordinates, self.center)])
        r = np.sqrt(np.sum(offsets**2, axis=0))
        gauss = np.exp(-0.5 * (r / self.sigma) ** 2)
        return offsets, r, gauss

    def values(self, grid: Grid) -> np.ndarray:
        _, r, gauss = self._radial(grid)
        return gauss * smooth_step((r - 8.0 * self.sigma) / self.sigma)

    def gradient(self, grid: Grid, *, spectral: bool = False) -> np.ndarray:
        """∇S with shape (n, *dims); analytic unless ``spectral``."""
        if spectral:
            return gradient_array(self.values(grid), grid)
        offsets, r, gauss = self._radial(grid)
        s = (r - 8.0 * self.sigma) / self.sigma
        window = smooth_step(s)
        dwindow = smooth_step_derivative(s) / self.sigma
        safe_r = np.where(r > 0, r, 1.0)
        radial = gauss * (-window / self.sigma**2 + np.where(r > 0, dwindow / safe_r, 0.0))
        return offsets * radial


@dataclass(frozen=True)
class TimeWeight:
    """Gaussian window centred at t0 + centre·T, modulated by 1, sin or cos of 2πt/T."""

    t0: float
    horizon: float
    mode: str = "one"
    nonnegative: bool = False
    centre: float = 0.5
    width: float = 0.05

    @property
    def sigma(self) -> float:
        return self.width * self.horizon

    def _parts(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=np.float64)
        centre = self.t0 + self.centre * self.horizon
        g = np.exp(-0.5 * ((t - centre) / self.sigma) ** 2)
        dg = -(t - centre) / self.sigma**2 * g
        omega = 2.0 * np.pi / self.horizon
        phase = omega * (t - self.t0)
        if self.mode == "one":
            mod, dmod = np.ones_like(t), np.zeros_like(t)
        elif self.mode == "sin":
            mod, dmod = np.sin(phase), omega * np.cos(phase)
        elif self.mode == "cos":
            mod, dmod = np.cos(phase), -omega * np.sin(phase)
        else:
            raise ValueError(f"unknown time modulation {self.mode!r}")
        if self.nonnegative and self.mode != "one":
            mod, dmod = 0.5 * (1.0 + mod), 0.5 * dmod
        return g, dg, mod, dmod

    def values(self, t: np.ndarray) -> np.ndarray:
        g, _, mod, _ = self._parts(t)
        return g * mod

    def derivative(self, t: np.ndarray) -> np.ndarray:
        g, dg, mod, dmod = self._parts(t)
        return dg * mod + g * dmod


@dataclass
class TestFunctionFamily:
    """Fixed family of separable test functions on a grid and time window."""

    __test__ = False

    grid: Grid
    t0: float
    horizon: float
    nonnegative: bool = False
    spatial: list[SpatialBump] = field(init=False)
    temporal: list[TimeWeight] = field(init=False)

    def __post_init__(self) -> None:
        if not self.horizon > 0:
            raise ValueError("test functions need a positive time window")
        n = self.grid.dim
        h = self.grid.box.half_width
        mid = tuple(0.5 * (lo + hi) for lo, hi in zip(self.grid.box.lower, self.grid.box.upper))
        shifts = [np.zeros(n), np.eye(n)[0] * CENTER_OFFSET * h, -np.eye(n)[1] * CENTER_OFFSET * h]
        self.spatial = [
            SpatialBump(tuple(float(m + s) for m, s in zip(mid, shift)), width * h)
            for width in BUMP_WIDTHS
            for shift in shifts
        ]
        self.temporal = [
            TimeWeight(self.t0, self.horizon, mode, self.nonnegative, centre, width)
            for centre, width in TIME_WINDOWS
            for mode in ("one", "sin", "cos")
        ]

    @classmethod
    def for_times(cls, grid: Grid, times: np.ndarray, *, nonnegative: bool = False) -> TestFunctionFamily:
        times = np.asarray(times, dtype=np.float64)
        return cls(grid, float(times[0]), float(times[-1] - times[0]), nonnegative)

    def __iter__(self) -> Iterator[tuple[SpatialBump, TimeWeight]]:
        for bump in self.spatial:
            for weight in self.temporal:
                yield bump, weight

    def __len__(self) -> int:
        return len(self.spatial) * len(self.temporal)


# ── Pairings ───────────────────────────────────────────────────────────────

def space_pairing(samples: np.ndarray, weight: np.ndarray, grid: Grid) -> np.ndarray:
    """Σ_x samples(t, x)·weight(x)·hⁿ for every time sample (leading axis)."""
    flat = np.asarray(samples).reshape(samples.shape[0], -1)
    return flat @ np.asarray(weight).ravel() * grid.cell_volume


def refine_times(times: np.ndarray) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64)
    return np.linspace(times[0], times[-1], (times.size - 1) * TIME_REFINEMENT + 1)


def resample(series: np.ndarray, times: np.ndarray, fine: np.ndarray) -> np.ndarray:
    """Cubic-spline values of ``series`` (leading axis = time) at ``fine``."""
    return CubicSpline(times, series, axis=0)(fine)


def time_pairing(series: np.ndarray, weights: np.ndarray, times: np.ndarray) -> float:
    return float(integrate.trapezoid(series * weights, times))


@dataclass(frozen=True)
class WeakResidual:
    """Worst normalized residual over a test family; ``signed`` keeps the sign."""

    relative: float
    value: float
    scale: float
    test: str = ""
    signed: float = 0.0


def _worst(entries: list[tuple[float, float, str]]) -> WeakResidual:
    best = WeakResidual(0.0, 0.0, 0.0)
    for value, scale, label in entries:
        rel = abs(value) / scale if scale > 0 else 0.0
        if rel >= best.relative:
            best = WeakResidual(rel, value, scale, label, value / scale if scale > 0 else 0.0)
    return best


def _label(bump: SpatialBump, weight: TimeWeight, extra: str = "") -> str:
    centre = ",".join(f"{c:.3g}" for c in bump.center)
    return f"σ={bump.sigma:.3g} c=({centre}) t={weight.centre:g}T τ={weight.mode}{extra}"


def balance_residual(
    times: np.ndarray,
    density: np.ndarray,
    flux: np.ndarray,
    family: TestFunctionFamily,
    *,
    spectral: bool = True,
) -> WeakResidual:
    """Weak form of ∂_t D + div F = 0 for scalar D (T_s, *dims), F (T_s, n, *dims).

    Returns the worst |∫∫ D ∂_tΨ + F·∇Ψ| / ∫∫(|D ∂_tΨ| + Σ|F_j ∂_jΨ|).
    """
    grid = family.grid
    n = grid.dim
    fine = refine_times(times)
    entries = []
    for bump in family.spatial:
        s = bump.values(grid)
        grad = bump.gradient(grid, spectral=spectral)
        d_s = space_pairing(density, s, grid)
        d_abs = space_pairing(np.abs(density), np.abs(s), grid)
        f_s = sum(space_pairing(flux[:, j], grad[j], grid) for j in range(n))
        f_abs = sum(space_pairing(np.abs(flux[:, j]), np.abs(grad[j]), grid) for j in range(n))
        d_s, d_abs, f_s, f_abs = (resample(s_, times, fine) for s_ in (d_s, d_abs, f_s, f_abs))
        for weight in family.temporal:
            tau, dtau = weight.values(fine), weight.derivative(fine)
            value = time_pairing(d_s, dtau, fine) + time_pairing(f_s, tau, fine)
            scale = time_pairing(d_abs, np.abs(dtau), fine) + time_pairing(f_abs, np.abs(tau), fine)
            entries.append((value, scale, _label(bump, weight)))
    return _worst(entries)


def vector_balance_residual(
    times: np.ndarray,
    density: np.ndarray,
    flux: np.ndarray,
    family: TestFunctionFamily,
    *,
    spectral: bool = True,
) -> WeakResidual:
    """Row-wise ``balance_residual`` for D (T_s, n, *dims), F (T_s, n, n, *dims)."""
    worst = WeakResidual(0.0, 0.0, 0.0)
    for k in range(family.grid.dim):
        r = balance_residual(times, density[:, k], flux[:, k], family, spectral=spectral)
        if r.relative >= worst.relative:
            worst = WeakResidual(r.relative, r.value, r.scale, f"{r.test} k={k}", r.signed)
    return worst


def divergence_residual(
    times: np.ndarray, vector: np.ndarray, family: TestFunctionFamily, *, spectral: bool = True
) -> WeakResidual:
    """Weak form of div v = 0: worst |∫∫ v·∇Ψ| / ∫∫ Σ|v_j ∂_jΨ|."""
    zeros = np.zeros((vector.shape[0],) + family.grid.dims)
    return balance_residual(times, zeros, vector, family, spectral=spectral)


def signed_balance(
    times: np.ndarray,
    density: np.ndarray,
    flux: np.ndarray,
    family: TestFunctionFamily,
    *,
    spectral: bool = True,
) -> WeakResidual:
    """Most negative normalized value of ∫∫ D ∂_tΨ + F·∇Ψ over a nonnegative family.

    For a dissipative balance ∂_t D + div F ≤ 0 every value is ≥ 0, so the
    returned ``signed`` entry is the worst violation (negative) or the
    smallest slack (positive).
    """
    grid = family.grid
    n = grid.dim
    fine = refine_times(times)
    worst: WeakResidual | None = None
    for bump in family.spatial:
        s = bump.values(grid)
        grad = bump.gradient(grid, spectral=spectral)
        d_s = space_pairing(density, s, grid)
        d_abs = space_pairing(np.abs(density), np.abs(s), grid)
        f_s = sum(space_pairing(flux[:, j], grad[j], grid) for j in range(n))
        f_abs = sum(space_pairing(np.abs(flux[:, j]), np.abs(grad[j]), grid) for j in range(n))
        d_s, d_abs, f_s, f_abs = (resample(s_, times, fine) for s_ in (d_s, d_abs, f_s, f_abs))
        for weight in family.temporal:
            tau, dtau = weight.values(fine), weight.derivative(fine)
            value = time_pairing(d_s, dtau, fine) + time_pairing(f_s, tau, fine)
            scale = time_pairing(d_abs, np.abs(dtau), fine) + time_pairing(f_abs, np.abs(tau), fine)
            signed = value / scale if scale > 0 else 0.0
            if worst is None or signed < worst.signed:
                worst = WeakResidual(abs(signed), value, scale, _label(bump, weight), signed)
    return worst
