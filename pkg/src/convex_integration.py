"""Localized plane-wave perturbations of a subsolution and the iteration built on them.

A wave is generated by a scalar potential

    Θ(x, t) = (s/N³)·η(x, t)·cos(N(ê·(x − c) + νt) + ϑ)

and a skew matrix J = b⊗ê − ê⊗b.  The pair

    δm = J∇ΔΘ,    δU = HJ − JH  with  H = ∇²∂_tΘ

solves ∂_t δm + div δU = 0 and div δm = 0 identically, δU is symmetric and
traceless, and δm = s·η·sin(…)·b up to terms of order 1/N coming from the
derivatives of the cutoff η.  With ν = −|a|/ρ the leading part is the
wave-cone direction spanned by two K-states (see ``pair_direction``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy import integrate

from config.settings import (
    DEFAULT_SEED,
    HULL_MARGIN,
    SEARCH_BUDGET,
    STAGNATION_LIMIT,
    WAVE_FREQUENCY,
)
from src.euler_geometry import (
    PairDirection,
    State,
    e_field,
    in_wave_cone,
    kernel_residual,
    sample_pair_directions,
)
from src.field_core import (
    Grid,
    VectorField,
    divergence_array,
    gradient_array,
    hessian_array,
    laplacian_array,
    relative_max,
    smooth_plateau,
    smooth_plateau_derivative,
    unpack_symmetric,
)
from src.models import IterationTrace, StepRecord, Tolerances
from src.subsolution_builder import Subsolution

logger = logging.getLogger(__name__)

BISECTION_STEPS = 60
GATE_RETRIES = 3


# ── Parameters & cutoffs ───────────────────────────────────────────────────

@dataclass(frozen=True)
class Cutoff:
    """η(x, t) = plateau(|x − c|/r)·plateau((t − t₀)/window)."""

    center: tuple[float, ...]
    radius: float
    t0: float
    window: float

    def space(self, grid: Grid) -> np.ndarray:
        return smooth_plateau(grid.radius(self.center) / self.radius)

    def time(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = (np.asarray(t, dtype=np.float64) - self.t0) / self.window
        return smooth_plateau(s), smooth_plateau_derivative(s) / self.window

    def support_mask(self, grid: Grid) -> np.ndarray:
        return grid.radius(self.center) < self.radius


@dataclass(frozen=True)
class PerturbationParams:
    frequency: float = WAVE_FREQUENCY
    cutoff_radius: float = 0.35
    margin: float = HULL_MARGIN
    search_budget: int = SEARCH_BUDGET
    seed: int = DEFAULT_SEED
    stagnation_limit: int = STAGNATION_LIMIT
    fraction: float = 0.5
    centre_candidates: int = 8

    def __post_init__(self) -> None:
        if self.frequency < 2:
            raise ValueError(f"wave frequency must be at least 2, got {self.frequency}")
        if not 0 < self.margin < 1:
            raise ValueError(f"hull margin must lie in (0, 1), got {self.margin}")
        if not 0 < self.fraction <= 1:
            raise ValueError(f"fraction must lie in (0, 1], got {self.fraction}")
        if not self.cutoff_radius > 0:
            raise ValueError("cutoff radius must be positive")
        if self.search_budget < 1 or self.centre_candidates < 1:
            raise ValueError("search budget and centre candidates must be at least 1")

    def radius_at(self, step: int) -> float:
        """Cutoff radius for step k: halved every four steps, never below one wavelength."""
        return max(self.cutoff_radius * 0.5 ** (step // 4), 2.0 * np.pi / self.frequency)


def exhaustion_radius(outer_radius: float, step: int) -> float:
    """Radius of Ω_k; Ω_k grows toward Ω′ with |Ω′ \\ Ω_k| shrinking like 2^{−k}."""
    return outer_radius * (1.0 - 2.0 ** (-(step + 2)))


def time_window(times: np.ndarray, step: int) -> float:
    """Window length (1 + 2^{−k})·span; η ≡ 1 on the first half of it."""
    span = float(times[-1] - times[0])
    return span * (1.0 + 2.0 ** (-step))


# ── Waves ──────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class LocalizedWave:
    """Wave fields at every time sample: δm, ∂_tδm (T, n, *dims), δU packed (T, k, *dims)."""

    dm: np.ndarray
    dm_dot: np.ndarray
    dU: np.ndarray
    leading: np.ndarray
    frequency: float
    amplitude: float

    def scaled(self, factor: float) -> LocalizedWave:
        return LocalizedWave(
            self.dm * factor, self.dm_dot * factor, self.dU * factor, self.leading * factor,
            self.frequency, self.amplitude * factor,
        )

    @property
    def localization_error(self) -> float:
        """max|δm − s·η·sin(…)·b| / max|s·η·b|."""
        return relative_max(self.dm - self.leading, self.leading)


def _pack_batch(full: np.ndarray, n: int) -> np.ndarray:
    """(T, n, n, *dims) → (T, n(n+1)/2, *dims)."""
    rows, cols = np.triu_indices(n)
    return np.stack([full[:, i, j] for i, j in zip(rows, cols)], axis=1)


def _unpack_batch(packed: np.ndarray, n: int) -> np.ndarray:
    """(T, k, *dims) → (T, n, n, *dims)."""
    return np.moveaxis(unpack_symmetric(np.moveaxis(packed, 1, 0), n), 2, 0)


def realize_wave(
    normal: np.ndarray,
    b: np.ndarray,
    time_frequency: float,
    cutoff: Cutoff,
    grid: Grid,
    times: np.ndarray,
    frequency: float,
    *,
    amplitude: float = 1.0,
    phase: float = 0.0,
) -> LocalizedWave:
    """Exact wave for unit spatial normal ê ⊥ b and ν = ξ_t/|ξ_x|."""
    n = grid.dim
    normal = np.asarray(normal, dtype=np.float64)
    normal = normal / np.linalg.norm(normal)
    b = np.asarray(b, dtype=np.float64)
    if abs(float(normal @ b)) > 1e-10 * max(1.0, float(np.linalg.norm(b))):
        raise ValueError("wave amplitude b must be orthogonal to the spatial frequency")
    times = np.asarray(times, dtype=np.float64)
    N = float(frequency)
    c = amplitude / N**3
    J = np.outer(b, normal) - np.outer(normal, b)

    shape_t = (times.size,) + (1,) * n
    space = cutoff.space(grid)
    tau, dtau = cutoff.time(times)
    offset = sum(e * (x - x0) for e, x, x0 in zip(normal, grid.coordinates, cutoff.center))
    arg = N * (offset[None] + time_frequency * times.reshape(shape_t)) + phase
    cos, sin = np.cos(arg), np.sin(arg)
    tau, dtau = tau.reshape(shape_t), dtau.reshape(shape_t)

    theta = c * space[None] * tau * cos
    theta_t = c * space[None] * (dtau * cos - tau * N * time_frequency * sin)

    grad_lap = gradient_array(laplacian_array(theta, grid), grid)          # (T, n, *dims)
    grad_lap_t = gradient_array(laplacian_array(theta_t, grid), grid)
    H = hessian_array(theta_t, grid)                                        # (T, n, n, *dims)

    dm = np.einsum("ij,tj...->ti...", J, grad_lap)
    dm_dot = np.einsum("ij,tj...->ti...", J, grad_lap_t)
    HJ = np.einsum("tik...,kj->tij...", H, J)
    JH = np.einsum("ik,tkj...->tij...", J, H)
    dU_full = HJ - JH
    trace = sum(dU_full[:, i, i] for i in range(n)) / n
    for i in range(n):
        dU_full[:, i, i] -= trace
    leading = amplitude * (space[None] * tau * sin)[:, None] * b.reshape((1, n) + (1,) * n)
    return LocalizedWave(
        dm=dm, dm_dot=dm_dot, dU=_pack_batch(dU_full, n), leading=leading,
        frequency=N, amplitude=float(amplitude),
    )


def localized_wave(
    zbar: State,
    xi: np.ndarray,
    cutoff: Cutoff,
    grid: Grid,
    times: np.ndarray,
    frequency: float,
    *,
    amplitude: float = 1.0,
    phase: float = 0.0,
    tol: float = 1e-10,
) -> LocalizedWave:
    """Realize a wave-cone direction z̄ = (b, −ν(ê⊗b + b⊗ê), 0) with kernel vector ξ.

    Directions outside Λ, or with a kernel vector that M(z̄) does not
    annihilate, are rejected.  Only directions of the pair form above can be
    realized by the potential construction.
    """
    xi = np.asarray(xi, dtype=np.float64)
    n = zbar.dim
    if not in_wave_cone(zbar):
        raise ValueError("direction not in the wave cone")
    if kernel_residual(zbar, xi) > tol:
        raise ValueError("xi is not in the kernel of the wave-cone matrix")
    if zbar.q != 0.0:
        raise ValueError("waves perturb (m, U) only; z̄ must have zero q-component")
    xi_x = xi[:n]
    norm = float(np.linalg.norm(xi_x))
    if norm == 0.0:
        raise ValueError("xi has no spatial frequency")
    normal = xi_x / norm
    nu = float(xi[n]) / norm
    b = zbar.m
    expected = -nu * (np.outer(normal, b) + np.outer(b, normal))
    scale = max(float(np.max(np.abs(zbar.U))), float(np.linalg.norm(b)), 1e-300)
    if np.max(np.abs(zbar.U - expected)) > 1e-8 * scale:
        raise ValueError("direction is in the wave cone but not of the realizable pair form")
    return realize_wave(normal, b, nu, cutoff, grid, times, frequency, amplitude=amplitude, phase=phase)


def pair_wave(
    direction: PairDirection,
    cutoff: Cutoff,
    grid: Grid,
    times: np.ndarray,
    frequency: float,
    *,
    amplitude: float = 1.0,
    phase: float = 0.0,
) -> LocalizedWave:
    return realize_wave(
        direction.unit_normal, direction.b, direction.time_frequency, cutoff, grid, times,
        frequency, amplitude=amplitude, phase=phase,
    )


# ── Energies ───────────────────────────────────────────────────────────────

def _kinetic(sub: Subsolution) -> np.ndarray:
    """∫|m(t_i)|² for every sample."""
    return np.sum(sub.m_samples() ** 2, axis=tuple(range(1, sub.dim + 2))) * sub.grid.cell_volume


def space_time_energy(sub: Subsolution) -> float:
    return float(integrate.trapezoid(_kinetic(sub), sub.times))


def initial_energy(sub: Subsolution) -> float:
    return float(_kinetic(sub)[0])


def deficit_samples(sub: Subsolution) -> np.ndarray:
    """∫_{Ω′}(ρ₀χ(t_i) − |m(t_i)|²) at every sample."""
    mask = sub.domain.mask(sub.grid)
    rho_mass = float(np.sum(sub.rho0.values[mask])) * sub.grid.cell_volume
    m = sub.m_samples()
    inside = np.sum(m[..., mask] ** 2, axis=(1, 2)) * sub.grid.cell_volume
    return sub.chi_values() * rho_mass - inside


def deficit(sub: Subsolution, t: float) -> float:
    """Deficit at time t, linearly interpolated between samples."""
    return float(np.interp(t, sub.times, deficit_samples(sub)))


# ── One step ───────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class _Snapshot:
    """Hull data of the current subsolution at every sample, component-first."""

    m: np.ndarray          # (n, T, *dims)
    U: np.ndarray          # (n, n, T, *dims)
    rho: np.ndarray        # (*dims)
    chi_n: np.ndarray      # (T, 1, ..., 1)
    e: np.ndarray          # (T, *dims)

    @classmethod
    def of(cls, sub: Subsolution) -> _Snapshot:
        n = sub.dim
        m = np.moveaxis(sub.m_samples(), 1, 0)
        U = np.moveaxis(_unpack_batch(sub.U_samples(), n), 0, 2)
        chi_n = (sub.chi_values() / n).reshape((-1,) + (1,) * n)
        rho = sub.rho0.values
        return cls(m=m, U=U, rho=rho, chi_n=chi_n, e=e_field(rho, m, U))

    @property
    def gap(self) -> np.ndarray:
        return self.chi_n - self.e


def _largest_amplitude(
    snap: _Snapshot, wave: LocalizedWave, mask: np.ndarray, bound: np.ndarray, sign: float
) -> float:
    """Largest s ≥ 0 with e(z + sign·s·w) ≤ bound on the masked points; e is convex in s."""
    rho = snap.rho[mask]
    m = snap.m[..., mask]
    U = snap.U[..., mask]
    w_m = sign * np.moveaxis(wave.dm, 1, 0)[..., mask]
    w_U = sign * np.moveaxis(_unpack_batch(wave.dU, snap.m.shape[0]), 0, 2)[..., mask]
    limit = bound[..., mask] + 1e-12 * snap.chi_n.reshape(-1, 1)

    def ok(s: float) -> bool:
        return bool(np.all(e_field(rho, m + s * w_m, U + s * w_U) <= limit))

    if not ok(0.0):
        return 0.0
    hi = 1.0
    while ok(hi):
        hi *= 2.0
        if hi > 1e8:
            return hi
    lo = 0.0
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def _gain(sub: Subsolution, wave: LocalizedWave, s: float) -> tuple[float, float]:
    """(space-time, t₀) energy change from adding s·wave."""
    m = sub.m_samples()
    cross = np.sum(m * wave.dm, axis=tuple(range(1, sub.dim + 2)))
    square = np.sum(wave.dm**2, axis=tuple(range(1, sub.dim + 2)))
    per_t = (2.0 * s * cross + s**2 * square) * sub.grid.cell_volume
    return float(integrate.trapezoid(per_t, sub.times)), float(per_t[0])


def _support_excess(values: np.ndarray, inside: np.ndarray) -> float:
    magnitude = np.abs(values).reshape((-1,) + inside.shape).max(axis=0)
    peak = float(magnitude.max())
    if peak == 0.0 or inside.all():
        return 0.0
    return float(magnitude[~inside].max()) / peak


@dataclass(frozen=True)
class _Candidate:
    index: int
    wave: LocalizedWave
    amplitude: float
    gain: float
    initial_gain: float


def _rank_centres(
    sub: Subsolution, snap: _Snapshot, params: PerturbationParams, step: int, rng: np.random.Generator
) -> Iterator[Cutoff]:
    """Random centres inside Ω_k ordered by the deficit they cover."""
    grid, n = sub.grid, sub.dim
    radius = params.radius_at(step)
    outer = sub.domain.outer_radius
    reach = max(min(exhaustion_radius(outer, step), outer - 4.0 * grid.max_spacing) - radius, 0.0)
    window = time_window(sub.times, step)
    draws = rng.standard_normal((params.centre_candidates, n))
    lengths = reach * rng.random(params.centre_candidates) ** (1.0 / n)
    centres = [
        tuple(float(v) for v in d / max(np.linalg.norm(d), 1e-300) * r) for d, r in zip(draws, lengths)
    ]
    local = sub.chi_values()[0] * sub.rho0.values - np.sum(snap.m[:, 0] ** 2, axis=0)
    scored = []
    for centre in centres:
        cutoff = Cutoff(centre, radius, float(sub.times[0]), window)
        scored.append((float(np.sum(local * cutoff.space(grid))), cutoff))
    for _, cutoff in sorted(scored, key=lambda item: -item[0]):
        yield cutoff


def perturb_step(
    sub: Subsolution,
    params: PerturbationParams,
    *,
    step: int = 0,
    rng: np.random.Generator | None = None,
    tolerances: Tolerances | None = None,
) -> tuple[Subsolution, StepRecord]:
    """Add one localized wave if it keeps every sample strictly inside the hull.

    Every point may spend ``params.fraction`` of its room above the floor
    δ·χ/n.  The accepted amplitude is re-verified on the full grid; a failed
    gate halves the amplitude up to three times before the step is rejected.
    """
    if sub.chi is None:
        raise ValueError("perturbation needs χ attached to the subsolution")
    tolerances = tolerances or Tolerances()
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    grid, n = sub.grid, sub.dim
    snap = _Snapshot.of(sub)
    gap = snap.gap
    floor = params.margin * snap.chi_n
    bound = snap.e + params.fraction * np.maximum(gap - floor, 0.0)

    energy0, initial0 = space_time_energy(sub), initial_energy(sub)
    deficits0 = deficit_samples(sub)
    record = dict(
        step=step, accepted=False, energy_before=energy0, energy_after=energy0,
        initial_energy_before=initial0, initial_energy_after=initial0,
        deficit_before=float(deficits0[0]), deficit_after=float(deficits0[0]),
        alpha=float(deficits0[0]), frequency=float(params.frequency),
    )

    cutoff = None
    for candidate in _rank_centres(sub, snap, params, step, rng):
        inside = candidate.support_mask(grid)
        if inside.any() and float(np.min((gap - floor)[:, inside])) > 0.0:
            cutoff = candidate
            break
    if cutoff is None:
        logger.info("step %d rejected: no interior margin on any cutoff", step)
        return sub, StepRecord(**record, cause="no interior margin on any cutoff")
    record.update(cutoff_center=list(cutoff.center), cutoff_radius=cutoff.radius)

    inside = cutoff.support_mask(grid)
    eta_t, _ = cutoff.time(sub.times)
    weight = eta_t.reshape((-1,) + (1,) * n) * cutoff.space(grid)[None]
    local_deficit = (snap.chi_n * n) * snap.rho[None] - np.sum(snap.m**2, axis=0)
    record["deficit_on_cutoff"] = float(
        integrate.trapezoid(np.sum(local_deficit * weight, axis=tuple(range(1, n + 1))), sub.times)
    ) * grid.cell_volume

    centre_idx = tuple(int(np.argmin(np.abs(ax - c))) for ax, c in zip(grid.axes, cutoff.center))
    rho_c = float(sub.rho0.values[centre_idx])
    directions = sample_pair_directions(rho_c, float(sub.chi_values()[0]), n, params.search_budget, rng)
    phases = rng.uniform(0.0, 2.0 * np.pi, len(directions))

    best: _Candidate | None = None
    for index, (direction, phase) in enumerate(zip(directions, phases)):
        wave = pair_wave(direction, cutoff, grid, sub.times, params.frequency, phase=float(phase))
        for sign in (1.0, -1.0):
            s = _largest_amplitude(snap, wave, inside, bound, sign)
            if not s > 0:
                continue
            signed = wave.scaled(sign)
            gain, initial_gain = _gain(sub, signed, s)
            if initial_gain < 0 or gain <= 0:
                continue
            if best is None or gain > best.gain:
                best = _Candidate(index, signed, s, gain, initial_gain)
    if best is None:
        logger.info("step %d rejected: no admissible direction within budget", step)
        return sub, StepRecord(**record, cause="no admissible direction within search budget")

    amplitude = best.amplitude
    cause = ""
    for attempt in range(GATE_RETRIES + 1):
        wave = best.wave.scaled(amplitude)
        trial = sub.with_perturbation(wave.dm, wave.dm_dot, wave.dU)
        gate = _gate(trial, wave, sub.domain.mask(grid), tolerances)
        if not gate["cause"]:
            break
        cause = gate["cause"]
        logger.warning("step %d gate failed (%s); halving amplitude", step, cause)
        amplitude *= 0.5
    else:
        record.update(
            max_hull_violation=gate["max_hull_violation"], momentum_residual=gate["momentum_residual"],
            divergence_residual=gate["divergence_residual"], support_excess=gate["support_excess"],
        )
        return sub, StepRecord(**record, cause=f"gate: {cause}")

    energy1 = space_time_energy(trial)
    deficits1 = deficit_samples(trial)
    if not energy1 > energy0 or deficits1[0] > deficits0[0]:
        logger.info("step %d rejected: halved amplitude lost the energy gain", step)
        return sub, StepRecord(**record, cause="no energy gain after amplitude halving")
    record.update(
        accepted=True,
        energy_after=energy1,
        initial_energy_after=initial_energy(trial),
        deficit_after=float(deficits1[0]),
        gain=energy1 - energy0,
        amplitude=amplitude,
        candidate=best.index,
        localization_error=best.wave.localization_error,
        max_hull_violation=gate["max_hull_violation"],
        momentum_residual=gate["momentum_residual"],
        divergence_residual=gate["divergence_residual"],
        support_excess=gate["support_excess"],
    )
    logger.info(
        "step %d accepted: amplitude %.3e, gain %.3e, deficit(t₀) %.4e → %.4e",
        step, amplitude, energy1 - energy0, deficits0[0], deficits1[0],
    )
    return trial, StepRecord(**record)


def _gate(trial: Subsolution, wave: LocalizedWave, outer: np.ndarray, tolerances: Tolerances) -> dict:
    """Post hoc acceptance: strict hull interior, exact linear system, support in Ω′."""
    grid, n = trial.grid, trial.dim
    snap = _Snapshot.of(trial)
    violation = float(np.max(-snap.gap))
    div = relative_max(divergence_array(wave.dm, grid), wave.dm)
    momentum = relative_max(
        wave.dm_dot + divergence_array(_unpack_batch(wave.dU, n), grid), wave.dm_dot
    )
    excess = max(_support_excess(wave.dm, outer), _support_excess(wave.dU, outer))
    cause = ""
    if not violation < 0:
        cause = f"hull violation {violation:.3e}"
    elif div > tolerances.spectral:
        cause = f"divergence residual {div:.3e}"
    elif momentum > tolerances.spectral:
        cause = f"momentum residual {momentum:.3e}"
    elif excess > tolerances.quadrature:
        cause = f"support excess {excess:.3e}"
    return {
        "cause": cause,
        "max_hull_violation": violation,
        "divergence_residual": div,
        "momentum_residual": momentum,
        "support_excess": excess,
    }


# ── Iteration ──────────────────────────────────────────────────────────────

def fit_gain_ratio(records: list[StepRecord]) -> float | None:
    """β̂ from least squares through the origin of gain against (deficit on cutoff)²."""
    pairs = [(r.gain, r.deficit_on_cutoff**2) for r in records if r.accepted and r.deficit_on_cutoff > 0]
    if not pairs:
        return None
    gains, squares = np.array(pairs).T
    return float(np.dot(gains, squares) / np.dot(squares, squares))


def iterate(
    sub: Subsolution,
    steps: int,
    params: PerturbationParams,
    *,
    tolerances: Tolerances | None = None,
) -> tuple[Subsolution, IterationTrace]:
    """Run ``steps`` perturbation trials from one seeded generator.

    Stops early after ``params.stagnation_limit`` consecutive rejections.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    rng = np.random.default_rng(params.seed)
    trace = IterationTrace(seed=params.seed)
    rejected_run = 0
    for k in range(steps):
        sub, record = perturb_step(sub, params, step=k, rng=rng, tolerances=tolerances)
        trace.records.append(record)
        rejected_run = 0 if record.accepted else rejected_run + 1
        if rejected_run >= params.stagnation_limit:
            logger.warning("stopping after %d consecutive rejected steps", rejected_run)
            trace.stopped_early = True
            break
    trace.beta_hat = fit_gain_ratio(trace.records)
    accepted = len(trace.accepted)
    logger.info("iteration finished: %d/%d steps accepted, β̂ = %s", accepted, len(trace.records), trace.beta_hat)
    return sub, trace


# ── Initial data ───────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class InitialData:
    """m⁰ = m(·, t₀) with its pointwise energy defect and divergence residual."""

    m0: VectorField
    time: float
    defect: float
    divergence_residual: float

    def as_dict(self) -> dict[str, float]:
        return {
            "time": self.time,
            "defect": self.defect,
            "divergence_residual": self.divergence_residual,
            "max_abs": self.m0.max_abs(),
        }


def initial_data_extract(sub: Subsolution) -> InitialData:
    if sub.times[0] != 0.0:
        logger.warning("first time sample is %.6g, not 0; extracting m there", sub.times[0])
    m0 = sub.m_at(0)
    mask = sub.domain.mask(sub.grid)
    target = sub.rho0.values * float(sub.chi_values()[0])
    defect = float(np.max(np.abs(target - np.sum(m0.values**2, axis=0))[mask]))
    div = relative_max(divergence_array(m0.values, sub.grid), m0.values)
    return InitialData(m0=m0, time=float(sub.times[0]), defect=defect, divergence_residual=div)
