"""Periodic grids, sampled fields and spectral calculus.

Every function on Rⁿ is represented on a torus (the computational box) that
strictly contains the region where the fields live.  Derivatives are exact
derivatives of the trigonometric interpolant; the Nyquist mode of every
derivative is discarded, which makes div∘grad, tr∘hessian and the Laplacian
the same operator and div div V = 0 exact for skew V.

Fields are frozen: values are copied on construction and marked read-only.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Union

import numpy as np
from scipy import fft as sfft
from scipy import special

from config.settings import MIN_GRID_POINTS, TRACE_TOL
from src.errors import ResolutionError

logger = logging.getLogger(__name__)


# ── Smooth profiles ────────────────────────────────────────────────────────

def _psi(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def _dpsi(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos]) / u[pos] ** 2
    return out


def smooth_step(t: np.ndarray | float) -> np.ndarray:
    """C^∞ step: 1 for t ≤ 0, 0 for t ≥ 1, strictly monotone in between."""
    t = np.asarray(t, dtype=np.float64)
    a = _psi(1.0 - t)
    b = _psi(t)
    return a / (a + b)


def smooth_step_derivative(t: np.ndarray | float) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    a = _psi(1.0 - t)
    b = _psi(t)
    return (-_dpsi(1.0 - t) * b - a * _dpsi(t)) / (a + b) ** 2


def smooth_plateau(s: np.ndarray | float) -> np.ndarray:
    """Radial profile equal to 1 on s ≤ 1/2 and 0 on s ≥ 1."""
    return smooth_step(2.0 * np.asarray(s, dtype=np.float64) - 1.0)


def smooth_plateau_derivative(s: np.ndarray | float) -> np.ndarray:
    return 2.0 * smooth_step_derivative(2.0 * np.asarray(s, dtype=np.float64) - 1.0)


def bessel_window(s: np.ndarray | float, sharpness: float) -> np.ndarray:
    """Radial Kaiser–Bessel profile: 1 at s = 0, exactly 0 for s ≥ 1.

    For a window of radius R the transform is concentrated on |k| ≤ sharpness/R
    and stays below roughly sharpness^{3/2}·e^{−sharpness} of its peak beyond
    that, so a grid with π/h > sharpness/R resolves it to near roundoff.
    """
    s = np.asarray(s, dtype=np.float64)
    arg = sharpness * np.sqrt(np.clip(1.0 - s**2, 0.0, None))
    values = (special.i0(arg) - 1.0) / (special.i0(sharpness) - 1.0)
    return np.where(s < 1.0, values, 0.0)


# ── Box & Grid ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Box:
    """Axis-aligned periodic box; ``lower``/``upper`` are per-axis bounds."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self) -> None:
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != len(upper):
            raise ValueError(f"lower/upper length mismatch: {len(lower)} vs {len(upper)}")
        if len(lower) not in (2, 3):
            raise ValueError(f"box dimension must be 2 or 3, got {len(lower)}")
        for axis, (lo, hi) in enumerate(zip(lower, upper)):
            if not hi > lo:
                raise ValueError(f"axis {axis}: upper {hi} must exceed lower {lo}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def cube(cls, half_width: float, dim: int = 2) -> Box:
        return cls(lower=(-half_width,) * dim, upper=(half_width,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(hi - lo for lo, hi in zip(self.lower, self.upper))

    @property
    def half_width(self) -> float:
        """Smallest half side length."""
        return 0.5 * min(self.lengths)


@dataclass(frozen=True, eq=False)
class Grid:
    box: Box
    dims: tuple[int, ...]
    spacing: tuple[float, ...] = field(init=False)

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != self.box.dim:
            raise ValueError(f"dims {dims} do not match box dimension {self.box.dim}")
        if min(dims) < MIN_GRID_POINTS:
            raise ResolutionError(
                f"grid dims {dims} below {MIN_GRID_POINTS} points per axis; "
                "too coarse for support checks"
            )
        object.__setattr__(self, "dims", dims)
        object.__setattr__(
            self, "spacing", tuple(length / d for length, d in zip(self.box.lengths, dims))
        )

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Grid) and self.box == other.box and self.dims == other.dims

    def __hash__(self) -> int:
        return hash((self.box, self.dims))

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def max_spacing(self) -> float:
        return max(self.spacing)

    @cached_property
    def origin_index(self) -> tuple[int, ...] | None:
        """Grid index of x = 0, or None when the origin is not a node."""
        idx = []
        for lo, h in zip(self.box.lower, self.spacing):
            j0 = int(round(-lo / h))
            if abs(lo + j0 * h) > 1e-9 * h:
                return None
            idx.append(j0)
        return tuple(idx)

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        """1-D node coordinates; measured from the origin node when it exists."""
        j0 = self.origin_index
        out = []
        for axis, (lo, h, n) in enumerate(zip(self.box.lower, self.spacing, self.dims)):
            j = np.arange(n, dtype=np.float64)
            out.append((j - j0[axis]) * h if j0 is not None else lo + j * h)
        return tuple(out)

    @cached_property
    def coordinates(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Integer frequencies scaled by 2π/period, one array per axis."""
        return tuple(
            2.0 * np.pi * sfft.fftfreq(n, d=h) for n, h in zip(self.dims, self.spacing)
        )

    @cached_property
    def derivative_wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Per-axis wavenumbers with the Nyquist entry zeroed, shaped for broadcasting."""
        out = []
        for axis, (k, n) in enumerate(zip(self.wavenumbers, self.dims)):
            k = k.copy()
            if n % 2 == 0:
                k[n // 2] = 0.0
            shape = [1] * self.dim
            shape[axis] = n
            out.append(k.reshape(shape))
        return tuple(out)

    @cached_property
    def k_squared(self) -> np.ndarray:
        """|k|² built from the derivative wavenumbers."""
        return sum(k**2 for k in self.derivative_wavenumbers)

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on every mode lying on a Nyquist plane."""
        mask = np.zeros(self.dims, dtype=bool)
        for axis, n in enumerate(self.dims):
            if n % 2 == 0:
                index = [slice(None)] * self.dim
                index[axis] = n // 2
                mask[tuple(index)] = True
        return mask

    def radius(self, center: tuple[float, ...] | None = None) -> np.ndarray:
        if center is None:
            return np.sqrt(sum(x**2 for x in self.coordinates))
        return np.sqrt(sum((x - c) ** 2 for x, c in zip(self.coordinates, center)))

    def sample(self, fn: Callable[..., np.ndarray]) -> ScalarField:
        return ScalarField(self, np.broadcast_to(fn(*self.coordinates), self.dims))


def make_grid(box: Box, dims: int | tuple[int, ...]) -> Grid:
    """Build a Grid; ``dims`` may be a single count used on every axis."""
    if isinstance(dims, int):
        dims = (dims,) * box.dim
    grid = Grid(box, tuple(dims))
    if any(d & (d - 1) for d in grid.dims):
        logger.debug("grid dims %s are not powers of two; transforms will be slower", grid.dims)
    return grid


@dataclass(frozen=True)
class BallRegion:
    """Closed ball; ``mask`` marks the grid nodes inside it."""

    radius: float
    center: tuple[float, ...] | None = None

    def mask(self, grid: Grid) -> np.ndarray:
        return grid.radius(self.center) <= self.radius

    def grown(self, margin: float) -> BallRegion:
        return BallRegion(self.radius + margin, self.center)


Region = Union[BallRegion, np.ndarray, Callable[[Grid], np.ndarray]]


def region_mask(region: Region, grid: Grid) -> np.ndarray:
    if isinstance(region, BallRegion):
        return region.mask(grid)
    if callable(region):
        return np.asarray(region(grid), dtype=bool)
    mask = np.asarray(region, dtype=bool)
    if mask.shape != grid.dims:
        raise ValueError(f"region mask shape {mask.shape} does not match grid {grid.dims}")
    return mask


# ── Fields ─────────────────────────────────────────────────────────────────

def _readonly(values: np.ndarray, shape: tuple[int, ...], kind: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.shape != shape:
        raise ValueError(f"{kind} values have shape {arr.shape}, expected {shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class _SampledField:
    grid: Grid
    values: np.ndarray

    component_shape: tuple[int, ...] = field(init=False, repr=False, default=())

    def __post_init__(self) -> None:
        shape = self._components() + self.grid.dims
        object.__setattr__(self, "component_shape", self._components())
        object.__setattr__(self, "values", _readonly(self.values, shape, type(self).__name__))

    def _components(self) -> tuple[int, ...]:
        return ()

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def _with(self, values: np.ndarray):
        return dataclasses.replace(self, values=values)

    def _check_grid(self, other: _SampledField) -> None:
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other):
        self._check_grid(other)
        return self._with(self.values + other.values)

    def __sub__(self, other):
        self._check_grid(other)
        return self._with(self.values - other.values)

    def __mul__(self, alpha: float):
        return self._with(float(alpha) * self.values)

    __rmul__ = __mul__

    def __neg__(self):
        return self._with(-self.values)


@dataclass(frozen=True, eq=False)
class ScalarField(_SampledField):
    def mean(self) -> float:
        return float(np.mean(self.values))

    def integral(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)

    @classmethod
    def zeros(cls, grid: Grid) -> ScalarField:
        return cls(grid, np.zeros(grid.dims))


@dataclass(frozen=True, eq=False)
class VectorField(_SampledField):
    def _components(self) -> tuple[int, ...]:
        return (self.grid.dim,)

    def pointwise(self) -> np.ndarray:
        """Values with the component axis last: shape (*dims, n)."""
        return np.moveaxis(self.values, 0, -1)

    def norm(self) -> ScalarField:
        return ScalarField(self.grid, np.sqrt(np.sum(self.values**2, axis=0)))

    @classmethod
    def zeros(cls, grid: Grid) -> VectorField:
        return cls(grid, np.zeros((grid.dim,) + grid.dims))


def sym_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n)


def pack_symmetric(full: np.ndarray, n: int) -> np.ndarray:
    """(n, n, ...) → (n(n+1)/2, ...) using the upper triangle."""
    rows, cols = sym_indices(n)
    return np.stack([full[i, j] for i, j in zip(rows, cols)])


def unpack_symmetric(packed: np.ndarray, n: int) -> np.ndarray:
    rows, cols = sym_indices(n)
    full = np.empty((n, n) + packed.shape[1:], dtype=packed.dtype)
    for c, (i, j) in enumerate(zip(rows, cols)):
        full[i, j] = packed[c]
        full[j, i] = packed[c]
    return full


@dataclass(frozen=True, eq=False)
class SymTensorField(_SampledField):
    """Symmetric tensor field stored as its upper triangle (row-major)."""

    traceless: bool = False

    def _components(self) -> tuple[int, ...]:
        n = self.grid.dim
        return (n * (n + 1) // 2,)

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.traceless:
            scale = self.max_abs()
            worst = float(np.max(np.abs(self.trace().values)))
            if worst > TRACE_TOL * scale:
                raise ValueError(
                    f"traceless tensor has |tr| = {worst:.3e} > {TRACE_TOL:g}·max|entries|"
                )

    def full(self) -> np.ndarray:
        return unpack_symmetric(self.values, self.grid.dim)

    def pointwise(self) -> np.ndarray:
        """Full matrices with component axes last: shape (*dims, n, n)."""
        return np.moveaxis(self.full(), (0, 1), (-2, -1))

    def trace(self) -> ScalarField:
        n = self.grid.dim
        full = self.full()
        return ScalarField(self.grid, sum(full[i, i] for i in range(n)))

    @classmethod
    def from_full(
        cls, grid: Grid, full: np.ndarray, *, traceless: bool = False, project: bool = False
    ) -> SymTensorField:
        """Pack a symmetric (n, n, *dims) array; ``project`` removes the trace first."""
        n = grid.dim
        full = 0.5 * (np.asarray(full) + np.swapaxes(np.asarray(full), 0, 1))
        if project:
            tr = sum(full[i, i] for i in range(n)) / n
            full = full.copy()
            for i in range(n):
                full[i, i] = full[i, i] - tr
        return cls(grid, pack_symmetric(full, n), traceless=traceless)

    @classmethod
    def zeros(cls, grid: Grid, traceless: bool = True) -> SymTensorField:
        n = grid.dim
        return cls(grid, np.zeros((n * (n + 1) // 2,) + grid.dims), traceless=traceless)


@dataclass(frozen=True, eq=False)
class MatrixField(_SampledField):
    """Full n×n matrix field, values shape (n, n, *dims)."""

    def _components(self) -> tuple[int, ...]:
        return (self.grid.dim, self.grid.dim)

    def transpose(self) -> MatrixField:
        return MatrixField(self.grid, np.swapaxes(self.values, 0, 1))

    def sym(self, traceless: bool = False) -> SymTensorField:
        return SymTensorField.from_full(self.grid, self.values, traceless=traceless)

    def skew(self) -> MatrixField:
        return MatrixField(self.grid, 0.5 * (self.values - np.swapaxes(self.values, 0, 1)))

    def trace(self) -> ScalarField:
        return ScalarField(self.grid, np.trace(self.values, axis1=0, axis2=1))


AnyField = Union[ScalarField, VectorField, SymTensorField, MatrixField]


# ── Spectral calculus on raw arrays ────────────────────────────────────────
# Arrays carry any leading batch/component axes followed by the grid axes.

def _spatial_axes(grid: Grid) -> tuple[int, ...]:
    return tuple(range(-grid.dim, 0))


def to_spectral(values: np.ndarray, grid: Grid) -> np.ndarray:
    return sfft.fftn(values, axes=_spatial_axes(grid))


def from_spectral(values_hat: np.ndarray, grid: Grid) -> np.ndarray:
    return sfft.ifftn(values_hat, axes=_spatial_axes(grid)).real


def gradient_array(values: np.ndarray, grid: Grid) -> np.ndarray:
    """∇ of (..., *dims) → (..., n, *dims)."""
    hat = to_spectral(values, grid)
    parts = [from_spectral(1j * k * hat, grid) for k in grid.derivative_wavenumbers]
    return np.stack(parts, axis=values.ndim - grid.dim)


def divergence_array(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Contract the last component axis: (..., n, *dims) → (..., *dims)."""
    n = grid.dim
    hat = to_spectral(values, grid)
    axis = values.ndim - n - 1
    total = sum(
        1j * k * np.take(hat, j, axis=axis) for j, k in enumerate(grid.derivative_wavenumbers)
    )
    return from_spectral(total, grid)


def laplacian_array(values: np.ndarray, grid: Grid) -> np.ndarray:
    return from_spectral(-grid.k_squared * to_spectral(values, grid), grid)


def hessian_array(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Full second derivatives: (..., *dims) → (..., n, n, *dims)."""
    n = grid.dim
    hat = to_spectral(values, grid)
    ks = grid.derivative_wavenumbers
    lead = values.ndim - n
    out = np.empty(values.shape[:lead] + (n, n) + grid.dims)
    for i in range(n):
        for j in range(i, n):
            part = from_spectral(-ks[i] * ks[j] * hat, grid)
            out[(Ellipsis, i, j) + (slice(None),) * n] = part
            out[(Ellipsis, j, i) + (slice(None),) * n] = part
    return out


def band_limit_array(values: np.ndarray, grid: Grid) -> np.ndarray:
    hat = to_spectral(values, grid)
    hat = np.where(grid.nyquist_mask, 0.0, hat)
    return from_spectral(hat, grid)


def refine_array(values: np.ndarray, grid: Grid, factor: int) -> np.ndarray:
    """Band-limited interpolant of a scalar array on a grid ``factor`` times finer per axis.

    Node j of ``grid`` is node j·factor of the result.
    """
    if factor < 1:
        raise ValueError(f"refinement factor must be at least 1, got {factor}")
    if factor == 1:
        return band_limit_array(values, grid)
    hat = sfft.fftshift(np.where(grid.nyquist_mask, 0.0, sfft.fftn(values)))
    fine = tuple(d * factor for d in grid.dims)
    padded = np.zeros(fine, dtype=np.complex128)
    padded[tuple(slice(D // 2 - d // 2, D // 2 - d // 2 + d) for d, D in zip(grid.dims, fine))] = hat
    return sfft.ifftn(sfft.ifftshift(padded)).real * factor**grid.dim


# ── Field-level operations ─────────────────────────────────────────────────

def spectral_gradient(f: ScalarField) -> VectorField:
    return VectorField(f.grid, gradient_array(f.values, f.grid))


def spectral_divergence(v: VectorField | SymTensorField | MatrixField):
    """Divergence; tensors are differentiated row-wise, (div T)_i = Σ_j ∂_j T_ij."""
    grid = v.grid
    if isinstance(v, VectorField):
        return ScalarField(grid, divergence_array(v.values, grid))
    full = v.full() if isinstance(v, SymTensorField) else v.values
    return VectorField(grid, divergence_array(full, grid))


def spectral_hessian(f: ScalarField) -> SymTensorField:
    return SymTensorField.from_full(f.grid, hessian_array(f.values, f.grid))


def spectral_laplacian(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, laplacian_array(f.values, f.grid))


def band_limit(f: AnyField) -> AnyField:
    """Drop every mode on a Nyquist plane."""
    return f._with(band_limit_array(f.values, f.grid))


# ── Kernels & convolution ──────────────────────────────────────────────────

def _require_origin(grid: Grid) -> tuple[int, ...]:
    j0 = grid.origin_index
    if j0 is None:
        raise ValueError("kernel operations need the origin to be a grid node")
    return j0


def kernel_to_corner(kernel: ScalarField) -> np.ndarray:
    """Roll an origin-centred kernel so its centre sits at index 0."""
    j0 = _require_origin(kernel.grid)
    return np.roll(kernel.values, shift=tuple(-j for j in j0), axis=tuple(range(kernel.grid.dim)))


def kernel_transform(kernel: ScalarField) -> np.ndarray:
    """Discrete Fourier transform of a kernel scaled so that mass ↦ value at k = 0."""
    return sfft.fftn(kernel_to_corner(kernel)) * kernel.grid.cell_volume


def support_radius(
    f: AnyField, center: tuple[float, ...] | None = None, *, floor: float = 0.0
) -> float:
    """Largest node radius where |f| exceeds ``floor``·max|f|."""
    magnitude = np.abs(f.values).reshape((-1,) + f.grid.dims).max(axis=0)
    peak = float(magnitude.max())
    if peak == 0.0:
        return 0.0
    return float(f.grid.radius(center)[magnitude > floor * peak].max())


def _support_extent(f: ScalarField) -> list[float]:
    mag = np.abs(f.values)
    nonzero = mag > 1e-14 * mag.max() if mag.max() > 0 else np.zeros_like(mag, dtype=bool)
    extents = []
    for axis, x in enumerate(f.grid.coordinates):
        extents.append(float(x[nonzero].max() - x[nonzero].min()) if nonzero.any() else 0.0)
    return extents


def convolve(f: ScalarField, kernel: ScalarField) -> ScalarField:
    """Torus convolution of f with an origin-centred kernel."""
    if f.grid != kernel.grid:
        raise ValueError("convolve: fields live on different grids")
    grid = f.grid
    reach = support_radius(kernel)
    for axis, (extent, length) in enumerate(zip(_support_extent(f), grid.box.lengths)):
        if extent + 2.0 * reach >= length:
            logger.warning(
                "convolution supports wrap around axis %d (extent %.3g + 2·%.3g ≥ %.3g)",
                axis, extent, reach, length,
            )
    out = sfft.ifftn(sfft.fftn(f.values) * kernel_transform(kernel)).real
    return ScalarField(grid, out)


def mollifier(epsilon: float, grid: Grid) -> ScalarField:
    """Radial unit-mass bump, constant on |x| ≤ ε/2 and zero on |x| ≥ ε."""
    if not epsilon > 2.0 * grid.max_spacing:
        raise ResolutionError(
            f"mollifier radius ε = {epsilon:g} is under-resolved "
            f"(needs ε > 2·h = {2.0 * grid.max_spacing:g})"
        )
    if 2.0 * epsilon >= min(grid.box.lengths):
        raise ValueError(f"mollifier radius ε = {epsilon:g} does not fit in the box")
    _require_origin(grid)
    profile = smooth_plateau(grid.radius() / epsilon)
    mass = profile.sum() * grid.cell_volume
    return ScalarField(grid, profile / mass)


def reflect_through_origin(f: ScalarField) -> ScalarField:
    """Sample x ↦ f(−x) exactly (index reflection about the origin node)."""
    j0 = _require_origin(f.grid)
    idx = [(2 * j - np.arange(n)) % n for j, n in zip(j0, f.grid.dims)]
    return ScalarField(f.grid, f.values[np.ix_(*idx)])


# ── Support & norms ────────────────────────────────────────────────────────

def support_excess(f: AnyField, region: Region, tol: float | None = None) -> float:
    """sup|f| outside ``region`` divided by sup|f|; 0 for the zero field."""
    grid = f.grid
    magnitude = np.abs(f.values).reshape((-1,) + grid.dims).max(axis=0)
    peak = float(magnitude.max())
    if peak == 0.0:
        return 0.0
    outside = ~region_mask(region, grid)
    excess = float(magnitude[outside].max()) / peak if outside.any() else 0.0
    if tol is not None and excess > tol:
        logger.debug("support excess %.3e exceeds tolerance %.1e", excess, tol)
    return excess


def relative_max(diff: np.ndarray, reference: np.ndarray) -> float:
    """max|diff| / max|reference| with the 0/0 case mapped to 0."""
    scale = float(np.max(np.abs(reference))) if np.size(reference) else 0.0
    worst = float(np.max(np.abs(diff))) if np.size(diff) else 0.0
    if scale == 0.0:
        return 0.0 if worst == 0.0 else float("inf")
    return worst / scale
