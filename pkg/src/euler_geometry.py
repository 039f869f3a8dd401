"""Pointwise geometry of the relaxed Euler system.

States are triples (m, U, q) with U symmetric and traceless.  The relaxed
system ∂_t m + div U + ∇q = 0, div m = 0 is linear; its wave cone is the set
of states whose block matrix [[U + qI, m], [mᵀ, 0]] is singular.  The
nonlinear constraint lives in e(ρ, m, U) = λ_max(m⊗m/ρ − U).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from config.settings import TRACE_TOL
from src.errors import DomainError
from src.field_core import Grid
from src.pressure_law import PressureLaw
from src.weak_forms import (
    TestFunctionFamily,
    WeakResidual,
    divergence_residual,
    vector_balance_residual,
)

logger = logging.getLogger(__name__)


# ── Largest eigenvalue ─────────────────────────────────────────────────────

def lambda_max(S: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of symmetric matrices stored component-first (n, n, ...)."""
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    if n == 2:
        half_tr = 0.5 * (S[0, 0] + S[1, 1])
        return half_tr + np.sqrt(0.25 * (S[0, 0] - S[1, 1]) ** 2 + S[0, 1] ** 2)
    if n != 3:
        raise ValueError(f"closed-form eigenvalues need n = 2 or 3, got {n}")
    off = S[0, 1] ** 2 + S[0, 2] ** 2 + S[1, 2] ** 2
    q = (S[0, 0] + S[1, 1] + S[2, 2]) / 3.0
    p2 = (S[0, 0] - q) ** 2 + (S[1, 1] - q) ** 2 + (S[2, 2] - q) ** 2 + 2.0 * off
    p = np.sqrt(p2 / 6.0)
    safe_p = np.where(p > 0, p, 1.0)
    b = (S - q * np.eye(3).reshape((3, 3) + (1,) * (S.ndim - 2))) / safe_p
    det_b = (
        b[0, 0] * (b[1, 1] * b[2, 2] - b[1, 2] * b[2, 1])
        - b[0, 1] * (b[1, 0] * b[2, 2] - b[1, 2] * b[2, 0])
        + b[0, 2] * (b[1, 0] * b[2, 1] - b[1, 1] * b[2, 0])
    )
    phi = np.arccos(np.clip(0.5 * det_b, -1.0, 1.0)) / 3.0
    return np.where(p > 0, q + 2.0 * p * np.cos(phi), q)


def _require_positive(rho: np.ndarray | float) -> np.ndarray:
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(rho <= 0):
        raise DomainError(f"density must be positive, min ρ = {float(np.min(rho)):.6g}")
    return rho


def e_field(rho: np.ndarray, m: np.ndarray, U: np.ndarray) -> np.ndarray:
    """e on component-first arrays: m (n, ...), U (n, n, ...), ρ broadcast to (...)."""
    rho = _require_positive(rho)
    S = m[:, None] * m[None, :] / rho - U
    return lambda_max(S)


def e_value(rho: float | np.ndarray, m: np.ndarray, U: np.ndarray) -> float | np.ndarray:
    """e(ρ, m, U) for component-last input: m (..., n), U (..., n, n)."""
    m = np.asarray(m, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    out = e_field(rho, np.moveaxis(m, -1, 0), np.moveaxis(U, (-2, -1), (0, 1)))
    return float(out) if np.ndim(out) == 0 else out


# ── States ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class State:
    m: np.ndarray
    U: np.ndarray
    q: float = 0.0

    def __post_init__(self) -> None:
        m = np.array(self.m, dtype=np.float64).reshape(-1)
        U = np.array(self.U, dtype=np.float64)
        n = m.size
        if U.shape != (n, n):
            raise ValueError(f"U must be {n}×{n}, got {U.shape}")
        scale = max(float(np.max(np.abs(U))), 1.0)
        if np.max(np.abs(U - U.T)) > TRACE_TOL * scale:
            raise ValueError("U must be symmetric")
        if abs(np.trace(U)) > TRACE_TOL * scale:
            raise ValueError(f"U must be traceless, tr U = {np.trace(U):.3e}")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "U", 0.5 * (U + U.T))
        object.__setattr__(self, "q", float(self.q))

    @property
    def dim(self) -> int:
        return self.m.size

    def __add__(self, other: State) -> State:
        return State(self.m + other.m, self.U + other.U, self.q + other.q)

    def __sub__(self, other: State) -> State:
        return State(self.m - other.m, self.U - other.U, self.q - other.q)

    def __mul__(self, alpha: float) -> State:
        return State(alpha * self.m, alpha * self.U, alpha * self.q)

    __rmul__ = __mul__


@dataclass(frozen=True)
class HullParams:
    rho: float
    chi: float
    law: PressureLaw | None = None

    def __post_init__(self) -> None:
        if not self.rho > 0:
            raise DomainError(f"ρ must be positive, got {self.rho}")
        if not self.chi > 0:
            raise DomainError(f"χ must be positive, got {self.chi}")

    def q_target(self, n: int) -> float:
        base = float(self.law.p(self.rho)) if self.law is not None else 0.0
        return base + self.chi / n


def hull_margin(s: State, hp: HullParams) -> tuple[float, float]:
    """(χ/n − e(ρ, m, U), q − (p(ρ) + χ/n)); positive margin means hyperinterior."""
    n = s.dim
    margin = hp.chi / n - e_value(hp.rho, s.m, s.U)
    return float(margin), s.q - hp.q_target(n)


def equality_case_U(rho: float, m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    n = m.size
    return np.outer(m, m) / rho - (m @ m) / (n * rho) * np.eye(n)


def equality_case_deviation(s: State, hp: HullParams) -> float:
    """max |U − (m⊗m/ρ − |m|²/nρ·I)|, zero on K."""
    return float(np.max(np.abs(s.U - equality_case_U(hp.rho, s.m))))


def in_K(s: State, hp: HullParams, tol: float = 1e-10) -> bool:
    """Membership in K: e = χ/n, |m|² = ρχ, q on the Euler graph and U in the equality case."""
    margin, q_defect = hull_margin(s, hp)
    scale = hp.chi / s.dim
    if margin < -tol * scale or abs(q_defect) > tol * max(1.0, abs(s.q)):
        return False
    if abs(s.m @ s.m - hp.rho * hp.chi) > tol * hp.rho * hp.chi:
        return False
    return equality_case_deviation(s, hp) <= tol * max(1.0, float(np.max(np.abs(s.U))))


def flux_from_state(rho: float, m: np.ndarray, law: PressureLaw) -> tuple[np.ndarray, float]:
    """The unique (U, q) with (m, U, q) on the Euler graph."""
    _require_positive(rho)
    m = np.asarray(m, dtype=np.float64)
    n = m.size
    U = equality_case_U(rho, m)
    q = float(law.p(rho)) + float(m @ m) / (n * rho)
    return U, q


def operator_norm_bound_holds(rho: float, m: np.ndarray, U: np.ndarray, tol: float = 1e-12) -> bool:
    """‖U‖ ≤ (n − 1)·e(ρ, m, U) for traceless symmetric U."""
    U = np.asarray(U, dtype=np.float64)
    n = U.shape[0]
    norm = float(np.max(np.abs(np.linalg.eigvalsh(U))))
    return norm <= (n - 1) * e_value(rho, m, U) + tol * max(1.0, norm)


# ── Wave cone ──────────────────────────────────────────────────────────────

def wave_cone_matrix(s: State) -> np.ndarray:
    n = s.dim
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = s.U + s.q * np.eye(n)
    M[:n, n] = s.m
    M[n, :n] = s.m
    return M


def wave_cone_residual(s: State) -> float:
    return float(np.linalg.det(wave_cone_matrix(s)))


def in_wave_cone(s: State, tol: float = 1e-12) -> bool:
    M = wave_cone_matrix(s)
    scale = float(np.max(np.abs(M))) ** (s.dim + 1)
    return abs(np.linalg.det(M)) <= tol * scale


def wave_cone_kernel(s: State) -> tuple[np.ndarray, float]:
    """Unit null vector (ξ_x, ξ_t) of M and the ratio σ_min/σ_max."""
    _, sigma, vt = np.linalg.svd(wave_cone_matrix(s))
    ratio = float(sigma[-1] / sigma[0]) if sigma[0] > 0 else 0.0
    return vt[-1], ratio


def kernel_residual(s: State, xi: np.ndarray) -> float:
    M = wave_cone_matrix(s)
    xi = np.asarray(xi, dtype=np.float64)
    denom = float(np.max(np.abs(M))) * float(np.linalg.norm(xi))
    return float(np.linalg.norm(M @ xi)) / denom if denom > 0 else 0.0


# ── Directions spanned by pairs of K-states ────────────────────────────────

@dataclass(frozen=True, eq=False)
class PairDirection:
    """z̄ = (z⁺ − z⁻)/2 for two K-states of equal |m|, with its kernel vector.

    With a = (m⁺ + m⁻)/2 and b = (m⁺ − m⁻)/2 (so a ⊥ b),
    z̄ = (b, (a⊗b + b⊗a)/ρ, 0) and ξ = (a, −|a|²/ρ).
    """

    rho: float
    a: np.ndarray
    b: np.ndarray
    zbar: State
    xi: np.ndarray

    @property
    def unit_normal(self) -> np.ndarray:
        return self.a / np.linalg.norm(self.a)

    @property
    def time_frequency(self) -> float:
        """ξ_t/|ξ_x|."""
        return -float(np.linalg.norm(self.a)) / self.rho

    @property
    def skew_generator(self) -> np.ndarray:
        """Skew J with J·ξ̂_x = b."""
        e = self.unit_normal
        return np.outer(self.b, e) - np.outer(e, self.b)


def pair_direction(m_plus: np.ndarray, m_minus: np.ndarray, rho: float) -> PairDirection:
    m_plus = np.asarray(m_plus, dtype=np.float64)
    m_minus = np.asarray(m_minus, dtype=np.float64)
    _require_positive(rho)
    r_plus, r_minus = float(m_plus @ m_plus), float(m_minus @ m_minus)
    if abs(r_plus - r_minus) > 1e-10 * max(r_plus, r_minus, 1e-300):
        raise ValueError("pair_direction needs |m⁺| = |m⁻|")
    a = 0.5 * (m_plus + m_minus)
    b = 0.5 * (m_plus - m_minus)
    if not np.linalg.norm(a) > 0:
        raise ValueError("degenerate pair: m⁺ = −m⁻ gives no spatial frequency")
    zbar = State(b, (np.outer(a, b) + np.outer(b, a)) / rho, 0.0)
    xi = np.append(a, -float(a @ a) / rho)
    return PairDirection(rho=float(rho), a=a, b=b, zbar=zbar, xi=xi)


def sample_pair_directions(
    rho: float, chi: float, n: int, count: int, rng: np.random.Generator
) -> list[PairDirection]:
    """Draw ``count`` pairs m± on the sphere |m|² = ρχ; near-antipodal pairs are skipped."""
    radius = np.sqrt(rho * chi)
    out: list[PairDirection] = []
    attempts = 0
    while len(out) < count and attempts < 20 * count:
        attempts += 1
        u, v = rng.standard_normal((2, n))
        m_plus = radius * u / np.linalg.norm(u)
        m_minus = radius * v / np.linalg.norm(v)
        if np.linalg.norm(m_plus + m_minus) < 2e-3 * radius:
            continue
        out.append(pair_direction(m_plus, m_minus, rho))
    return out


def segment_amplitude(
    z: State, zbar: State, hp: HullParams, *, margin: float = 0.0, iterations: int = 80
) -> float:
    """Largest s ≥ 0 with e(ρ, z ± s·z̄) ≤ χ/n − margin for both signs."""
    bound = hp.chi / z.dim - margin

    def ok(s: float) -> bool:
        return all(
            e_value(hp.rho, z.m + sign * s * zbar.m, z.U + sign * s * zbar.U) <= bound
            for sign in (1.0, -1.0)
        )

    if not ok(0.0):
        return 0.0
    hi = 1.0
    while ok(hi):
        hi *= 2.0
        if hi > 1e12:
            return float("inf")
    lo = 0.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


# ── Plane waves ────────────────────────────────────────────────────────────

def plane_wave_check(
    s: State,
    xi: np.ndarray,
    profile: Callable[[np.ndarray], np.ndarray],
    grid: Grid,
    times: np.ndarray,
    *,
    kernel_tol: float = 1e-10,
) -> WeakResidual:
    """Weak residual of (m, U, q)·h(x·ξ_x + tξ_t) in the relaxed linear system."""
    xi = np.asarray(xi, dtype=np.float64)
    if kernel_residual(s, xi) > kernel_tol:
        raise ValueError("xi is not in the kernel of the wave-cone matrix")
    n = s.dim
    times = np.asarray(times, dtype=np.float64)
    phase = sum(xi[k] * x for k, x in enumerate(grid.coordinates))
    shape = (times.size,) + (1,) * n
    h = profile(phase[None] + xi[n] * times.reshape(shape))       # (T, *dims)

    m = s.m.reshape((1, n) + (1,) * n) * h[:, None]
    flux = (s.U + s.q * np.eye(n)).reshape((1, n, n) + (1,) * n) * h[:, None, None]
    family = TestFunctionFamily.for_times(grid, times)
    momentum = vector_balance_residual(times, m, flux, family, spectral=False)
    divergence = divergence_residual(times, m, family, spectral=False)
    worst = momentum if momentum.relative >= divergence.relative else divergence
    logger.debug("plane wave check: momentum %.2e, divergence %.2e", momentum.relative, divergence.relative)
    return worst
