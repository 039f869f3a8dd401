"""Barotropic pressure laws p(ρ) with p′ > 0."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.interpolate import PchipInterpolator

from src.errors import DomainError

logger = logging.getLogger(__name__)


class PressureKind(str, Enum):
    GAMMA = "gamma"
    TABULATED = "tabulated"


@dataclass(frozen=True, eq=False)
class PressureLaw:
    """p(ρ) = κρ^γ, or a monotone cubic spline through a table."""

    kind: PressureKind
    kappa: float = 1.0
    gamma: float = 1.0
    table_rho: tuple[float, ...] = ()
    table_p: tuple[float, ...] = ()

    _spline: PchipInterpolator | None = field(init=False, repr=False, default=None)
    _inverse_guess: PchipInterpolator | None = field(init=False, repr=False, default=None)

    def __post_init__(self) -> None:
        if self.kind == PressureKind.GAMMA:
            if not (self.kappa > 0 and self.gamma > 0):
                raise ValueError(
                    f"gamma law needs κ > 0 and γ > 0, got κ={self.kappa}, γ={self.gamma}"
                )
            return
        rho = np.asarray(self.table_rho, dtype=np.float64)
        p = np.asarray(self.table_p, dtype=np.float64)
        if rho.size < 3 or rho.shape != p.shape:
            raise ValueError("tabulated law needs at least three (ρ, p) pairs of equal length")
        if np.any(rho <= 0) or np.any(np.diff(rho) <= 0):
            raise ValueError("tabulated densities must be positive and strictly increasing")
        if np.any(np.diff(p) <= 0):
            raise ValueError("tabulated pressure must be strictly increasing (p′ > 0)")
        object.__setattr__(self, "_spline", PchipInterpolator(rho, p, extrapolate=False))
        object.__setattr__(self, "_inverse_guess", PchipInterpolator(p, rho, extrapolate=False))

    # ── Constructors ───────────────────────────────────────────────────────

    @classmethod
    def gamma_law(cls, kappa: float, gamma: float) -> PressureLaw:
        return cls(PressureKind.GAMMA, kappa=float(kappa), gamma=float(gamma))

    @classmethod
    def identity(cls) -> PressureLaw:
        return cls.gamma_law(1.0, 1.0)

    @classmethod
    def tabulated(cls, rho: list[float], p: list[float]) -> PressureLaw:
        return cls(
            PressureKind.TABULATED,
            table_rho=tuple(float(v) for v in rho),
            table_p=tuple(float(v) for v in p),
        )

    # ── Evaluation ─────────────────────────────────────────────────────────

    @property
    def density_range(self) -> tuple[float, float]:
        if self.kind == PressureKind.GAMMA:
            return (0.0, float("inf"))
        return (self.table_rho[0], self.table_rho[-1])

    @property
    def pressure_range(self) -> tuple[float, float]:
        if self.kind == PressureKind.GAMMA:
            return (0.0, float("inf"))
        return (self.table_p[0], self.table_p[-1])

    def check_density(self, rho: np.ndarray | float) -> np.ndarray:
        rho = np.asarray(rho, dtype=np.float64)
        lo, hi = self.density_range
        if np.any(rho <= 0):
            raise DomainError(f"density must be positive, min ρ = {float(rho.min()):.6g}")
        if np.any(rho < lo) or np.any(rho > hi):
            raise DomainError(
                f"density range [{float(rho.min()):.6g}, {float(rho.max()):.6g}] "
                f"leaves the law's working range [{lo:.6g}, {hi:.6g}]"
            )
        return rho

    def p(self, rho: np.ndarray | float) -> np.ndarray:
        rho = self.check_density(rho)
        if self.kind == PressureKind.GAMMA:
            return self.kappa * rho**self.gamma
        return self._spline(rho)

    def dp(self, rho: np.ndarray | float) -> np.ndarray:
        rho = self.check_density(rho)
        if self.kind == PressureKind.GAMMA:
            return self.kappa * self.gamma * rho ** (self.gamma - 1.0)
        return self._spline.derivative()(rho)

    def inverse(self, pressure: np.ndarray | float) -> np.ndarray:
        """ρ with p(ρ) = pressure; Newton-polished for tabulated laws."""
        pressure = np.asarray(pressure, dtype=np.float64)
        lo, hi = self.pressure_range
        below = pressure <= lo if self.kind == PressureKind.GAMMA else pressure < lo
        if np.any(below) or np.any(pressure > hi):
            raise DomainError(
                f"pressure range [{float(pressure.min()):.6g}, {float(pressure.max()):.6g}] "
                f"is outside the invertible range ({lo:.6g}, {hi:.6g}]"
            )
        if self.kind == PressureKind.GAMMA:
            return (pressure / self.kappa) ** (1.0 / self.gamma)
        rho = self._inverse_guess(pressure)
        r_lo, r_hi = self.density_range
        for _ in range(8):
            rho = np.clip(rho - (self._spline(rho) - pressure) / self._spline.derivative()(rho), r_lo, r_hi)
        return rho

    def describe(self) -> dict:
        if self.kind == PressureKind.GAMMA:
            return {"kind": self.kind.value, "kappa": self.kappa, "gamma": self.gamma}
        return {"kind": self.kind.value, "rho": list(self.table_rho), "p": list(self.table_p)}

    @classmethod
    def from_description(cls, data: dict) -> PressureLaw:
        if data["kind"] == PressureKind.GAMMA.value:
            return cls.gamma_law(data["kappa"], data["gamma"])
        return cls.tabulated(data["rho"], data["p"])
