"""Divergence equation with compact support and the antisymmetric lift.

``bogovskii_solve`` evaluates the Bogovskii integral for a ball Ω′ that is
star-shaped with respect to the concentric ball of half its radius, written
along rays so that no singular kernel has to be integrated:

    φ(x) = ∫_S e Σ_j C(n−1, j) k_{n−1−j}(x, e) P_j(x, e) dσ(e)
    P_j(x, e) = ∫_0^∞ p(x − ρe) ρ^j dρ,    k_i(x, e) = ∫_0^∞ w(x + re) r^i dr

with w a smooth unit-mass weight on the star ball.  The lift turns φ into a
traceless symmetric U₂, a skew V and a divergence-free momentum slope.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy import integrate, ndimage
from scipy.sparse.linalg import LinearOperator, lsqr

from config.settings import (
    BOGOVSKII_ANGLES,
    BOGOVSKII_CHUNK,
    BOGOVSKII_RAY_NODES,
    BOGOVSKII_REFINEMENTS,
    BOGOVSKII_UPSAMPLE,
    COMPATIBILITY_TOL,
    QUADRATURE_TOL,
)
from src.errors import CompatibilityError
from src.field_core import (
    BallRegion,
    Grid,
    MatrixField,
    ScalarField,
    SymTensorField,
    VectorField,
    band_limit,
    divergence_array,
    from_spectral,
    gradient_array,
    refine_array,
    relative_max,
    smooth_plateau,
    smooth_step,
    spectral_divergence,
    support_excess,
    support_radius,
    to_spectral,
)
from src.models import VerificationCheck

logger = logging.getLogger(__name__)

SPLINE_ORDER = 5


@dataclass(frozen=True)
class StarDomain:
    """Ball Ω′ of radius ``outer_radius``, star-shaped w.r.t. the ball of ``star_radius``."""

    outer_radius: float
    star_radius: float | None = None

    def __post_init__(self) -> None:
        if not self.outer_radius > 0:
            raise ValueError("outer_radius must be positive")
        if self.star_radius is None:
            object.__setattr__(self, "star_radius", 0.5 * self.outer_radius)
        if not 0 < self.star_radius <= self.outer_radius:
            raise ValueError("star_radius must lie in (0, outer_radius]")

    @property
    def region(self) -> BallRegion:
        return BallRegion(self.outer_radius)

    def mask(self, grid: Grid) -> np.ndarray:
        return self.region.mask(grid)


# ── Weight on the star ball ────────────────────────────────────────────────

def _sphere_area(n: int) -> float:
    return 2.0 * np.pi if n == 2 else 4.0 * np.pi


def _weight_normalization(radius: float, n: int) -> float:
    mass, _ = integrate.quad(
        lambda r: float(smooth_plateau(r / radius)) * r ** (n - 1), 0.0, radius,
        epsabs=1e-14, epsrel=1e-12, limit=200,
    )
    return _sphere_area(n) * mass


# ── Angular and radial quadrature ──────────────────────────────────────────

def _directions(n: int, angles: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit directions (m, n) and their quadrature weights on the sphere."""
    if n == 2:
        theta = 2.0 * np.pi * np.arange(angles) / angles
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        return dirs, np.full(angles, 2.0 * np.pi / angles)
    n_polar = max(8, angles // 4)
    n_azim = max(16, angles // 2)
    z, wz = np.polynomial.legendre.leggauss(n_polar)
    phi = 2.0 * np.pi * np.arange(n_azim) / n_azim
    zz, pp = np.meshgrid(z, phi, indexing="ij")
    s = np.sqrt(1.0 - zz**2)
    dirs = np.stack([s * np.cos(pp), s * np.sin(pp), zz], axis=-1).reshape(-1, 3)
    weights = np.outer(wz, np.full(n_azim, 2.0 * np.pi / n_azim)).ravel()
    return dirs, weights


def _effective_radius(p: ScalarField, limit: float) -> float:
    """Radius beyond which |p| is below roundoff, capped at ``limit``."""
    reach = support_radius(p, floor=1e-12) + 2.0 * p.grid.max_spacing
    return min(reach, limit)


def _ray_nodes(length: float, count: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(count)
    return 0.5 * length * (x + 1.0), 0.5 * length * w


@dataclass(frozen=True, eq=False)
class DivergenceSolution:
    phi: VectorField
    p: ScalarField
    domain: StarDomain
    residual_linf: float
    support_excess: float
    removed_mass: float = 0.0
    relative_mass: float = 0.0

    def checks(self, quadrature_tol: float = QUADRATURE_TOL, support_tol: float = 1e-8) -> list[VerificationCheck]:
        return [
            VerificationCheck.at_most("bogovskii_residual", self.residual_linf, quadrature_tol),
            VerificationCheck.at_most("phi_support_excess", self.support_excess, support_tol),
            VerificationCheck.at_most(
                "compatibility_mass", self.relative_mass, COMPATIBILITY_TOL,
                detail=f"∫_Ω′ p = {self.removed_mass:.3e} projected out",
            ),
        ]


# ── Compatibility ──────────────────────────────────────────────────────────

def compatibility_mass(p: ScalarField, inside: np.ndarray) -> tuple[float, float]:
    """(∫ p, |∫ p| / ∫ |p|) over the nodes in ``inside``, by the cell-volume rule."""
    values = p.values[inside]
    mass = float(np.sum(values) * p.grid.cell_volume)
    scale = float(np.sum(np.abs(values)) * p.grid.cell_volume)
    return mass, abs(mass) / scale if scale > 0 else 0.0


def _star_weight(grid: Grid, star_radius: float) -> np.ndarray:
    """Plateau on the star ball with unit discrete mass."""
    w = smooth_plateau(grid.radius() / star_radius)
    return w / (w.sum() * grid.cell_volume)


def project_compatible(
    p: ScalarField, domain: StarDomain, tolerance: float = COMPATIBILITY_TOL, *, strict: bool = True
) -> tuple[ScalarField, float, float]:
    """Remove the residual mass of p over Ω′ with a multiple of the star weight.

    Returns (corrected p, removed mass, relative mass).  With ``strict`` a
    relative mass above ``tolerance`` is an incompatible source and raises.
    """
    grid = p.grid
    mass, relative = compatibility_mass(p, domain.mask(grid))
    if strict and relative > tolerance:
        raise CompatibilityError(
            f"compatibility violated: ∫_Ω′ p = {mass:.3e} is {relative:.3e} of ∫_Ω′ |p| "
            f"(> {tolerance:g})"
        )
    if mass == 0.0:
        return p, 0.0, relative
    corrected = p.values - mass * _star_weight(grid, domain.star_radius)
    logger.debug("projected out Ω′ mass %.3e (relative %.3e)", mass, relative)
    return ScalarField(grid, corrected), mass, relative


# ── Ray quadrature ─────────────────────────────────────────────────────────

def _ray_quadrature(
    p: ScalarField, domain: StarDomain, inside: np.ndarray, *,
    angles: int, ray_nodes: int, chunk: int, upsample: int,
) -> np.ndarray:
    """φ at the nodes of Ω′ for a compatible p; zero elsewhere."""
    grid = p.grid
    n = grid.dim
    phi = np.zeros((n,) + grid.dims)
    r_out, r_star = domain.outer_radius, domain.star_radius
    norm = _weight_normalization(r_star, n)
    # Source samples come from the spectrally refined copy of p.
    fine = refine_array(p.values, grid, upsample)
    coeffs = ndimage.spline_filter(fine, order=SPLINE_ORDER, mode="grid-wrap")
    origin = np.array([ax[0] for ax in grid.axes])
    spacing = np.array(grid.spacing) / upsample

    dirs, dir_w = _directions(n, angles)
    # p vanishes beyond r_cut; samples past it are masked so the periodic
    # spline never wraps support back onto a ray.
    r_cut = _effective_radius(p, r_out)
    rho, rho_w = _ray_nodes(r_out + r_cut, ray_nodes)
    chunk = max(1, chunk * 256 // max(256, dirs.shape[0]))
    s, s_w = _ray_nodes(r_out + r_star, ray_nodes)
    binom = [comb(n - 1, j) for j in range(n)]

    targets = np.stack([x[inside] for x in grid.coordinates], axis=1)
    values = np.empty((targets.shape[0], n))
    for start in range(0, targets.shape[0], chunk):
        x = targets[start:start + chunk]                        # (c, n)
        # Source samples x − ρe, shape (c, d, r, n).
        src = x[:, None, None, :] - rho[None, None, :, None] * dirs[None, :, None, :]
        idx = ((src - origin) / spacing).reshape(-1, n).T
        p_ray = ndimage.map_coordinates(
            coeffs, idx, order=SPLINE_ORDER, mode="grid-wrap", prefilter=False
        ).reshape(src.shape[:-1])
        p_ray = np.where(np.linalg.norm(src, axis=-1) <= r_cut, p_ray, 0.0)
        # Weight samples x + re.
        pts = x[:, None, None, :] + s[None, None, :, None] * dirs[None, :, None, :]
        w_ray = smooth_plateau(np.linalg.norm(pts, axis=-1) / r_star) / norm

        total = np.zeros(p_ray.shape[:2])
        for j in range(n):
            P_j = np.einsum("cdr,r->cd", p_ray, rho_w * rho**j)
            k_i = np.einsum("cdr,r->cd", w_ray, s_w * s ** (n - 1 - j))
            total += binom[j] * k_i * P_j
        values[start:start + chunk] = np.einsum("cd,d,dk->ck", total, dir_w, dirs)

    for k in range(n):
        phi[k][inside] = values[:, k]
    return phi


def _taper(grid: Grid, reach: float, outer_radius: float) -> np.ndarray:
    """1 on B(reach), decaying smoothly to 0 one cell inside ∂Ω′."""
    edge = outer_radius - grid.max_spacing
    if edge - reach < 4.0 * grid.max_spacing:
        return np.ones(grid.dims)
    return smooth_step((grid.radius() - reach) / (edge - reach))


def bogovskii_solve(
    p: ScalarField,
    domain: StarDomain,
    *,
    angles: int = BOGOVSKII_ANGLES,
    ray_nodes: int = BOGOVSKII_RAY_NODES,
    chunk: int = BOGOVSKII_CHUNK,
    upsample: int = BOGOVSKII_UPSAMPLE,
    refinements: int = BOGOVSKII_REFINEMENTS,
    compatibility_tol: float = COMPATIBILITY_TOL,
) -> DivergenceSolution:
    """Solve div φ = p with φ supported in Ω′.

    Each refinement pass feeds the divergence defect p − div φ back through
    the quadrature.  φ is supported in the hull of supp p and the star ball;
    beyond that hull it is tapered to zero before ∂Ω′.
    """
    grid = p.grid
    n = grid.dim
    inside = domain.mask(grid)
    source, removed, relative = project_compatible(p, domain, compatibility_tol)

    if source.max_abs() == 0.0:
        return DivergenceSolution(VectorField(grid, np.zeros((n,) + grid.dims)), p, domain, 0.0, 0.0)

    kwargs = dict(angles=angles, ray_nodes=ray_nodes, chunk=chunk, upsample=upsample)
    logger.info(
        "Bogovskii quadrature: %d targets × %d directions × %d ray nodes, %d refinement(s)",
        int(inside.sum()), _directions(n, angles)[0].shape[0], ray_nodes, refinements,
    )
    phi = _ray_quadrature(source, domain, inside, **kwargs)
    for sweep in range(refinements):
        defect = np.where(inside, source.values - divergence_array(phi, grid), 0.0)
        if relative_max(defect, source.values) < 1e-14:
            break
        correction, _, _ = project_compatible(ScalarField(grid, defect), domain, strict=False)
        phi += _ray_quadrature(correction, domain, inside, **kwargs)
        logger.debug("Bogovskii refinement %d: defect %.2e", sweep + 1, relative_max(defect, source.values))

    reach = max(_effective_radius(source, domain.outer_radius), domain.star_radius)
    phi *= _taper(grid, reach, domain.outer_radius)

    solution = VectorField(grid, phi)
    residual = relative_max(spectral_divergence(solution).values - p.values, p.values)
    excess = support_excess(solution, domain.region)
    logger.info(
        "Bogovskii solve: divergence residual %.2e, support excess %.1e, removed mass %.1e",
        residual, excess, removed,
    )
    return DivergenceSolution(solution, p, domain, residual, excess, removed, relative)


# ── Antisymmetric lift ─────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class AntisymmetricLift:
    A: MatrixField
    U2: SymTensorField
    V: MatrixField
    m_slope: VectorField
    p_src: ScalarField
    bogovskii_residual: float = field(default=0.0)

    def m_tilde(self, t: float) -> VectorField:
        return self.m_slope * t

    def checks(self, spectral_tol: float, quadrature_tol: float = QUADRATURE_TOL) -> list[VerificationCheck]:
        grid = self.A.grid
        div_a = divergence_array(self.A.values, grid)
        grad_p = gradient_array(self.p_src.values, grid)
        div_m = divergence_array(self.m_slope.values, grid)
        return [
            VerificationCheck.at_most(
                "lift_trace", relative_max(self.A.trace().values, self.A.values), 1e-10
            ),
            VerificationCheck.at_most(
                "lift_divergence", relative_max(div_a + grad_p, grad_p), spectral_tol
            ),
            VerificationCheck.at_most(
                "m_slope_divergence", relative_max(div_m, self.m_slope.values), spectral_tol
            ),
            VerificationCheck.at_most("lift_source_mismatch", self.bogovskii_residual, quadrature_tol),
        ]


def antisymmetric_lift(
    p: ScalarField, phi: VectorField, *, tolerance: float = QUADRATURE_TOL
) -> AntisymmetricLift:
    """A = n/(1−n)(∂_iφ_j − δ_ij p_src/n) with p_src the discrete divergence of φ.

    Using the discrete divergence keeps tr A and div A + ∇p_src at roundoff;
    the distance between p_src and p is the Bogovskii residual and the input is
    rejected when it exceeds ``tolerance``.
    """
    grid = phi.grid
    n = grid.dim
    # gradient_array gives [j, i] = ∂_i φ_j.
    dphi = np.swapaxes(gradient_array(phi.values, grid), 0, 1)
    p_src = sum(dphi[i, i] for i in range(n))
    residual = relative_max(p_src - p.values, p.values)
    if residual > tolerance:
        raise ValueError(
            f"phi does not solve div φ = p: relative residual {residual:.3e} > {tolerance:.1e}"
        )
    a = dphi.copy()
    for i in range(n):
        a[i, i] = a[i, i] - p_src / n
    a *= n / (1.0 - n)

    A = MatrixField(grid, a)
    V = A.skew()
    U2 = A.sym(traceless=True)
    m_slope = VectorField(grid, divergence_array(V.values, grid))
    return AntisymmetricLift(
        A=A, U2=U2, V=V, m_slope=m_slope, p_src=ScalarField(grid, p_src),
        bogovskii_residual=residual,
    )


# ── Obstruction for nonzero mean ───────────────────────────────────────────

@dataclass(frozen=True)
class ObstructionReport:
    obstructed: bool
    message: str
    mass: float
    residual: float = 0.0
    relative_residual: float = 0.0
    iterations: int = 0


def obstruction_witness(
    p: ScalarField, radius: float | None = None, *, iter_lim: int = 4000
) -> ObstructionReport:
    """Best compactly supported least-squares solution of

        ∂₁U₁ + ∂₂U₂ = ∂₁p,   ∂₁U₂ − ∂₂U₁ = ∂₂p

    with U supported in the disc of ``radius`` (default: support of p plus a
    quarter of the box).  A residual bounded away from zero shows that no
    compactly supported (U₁, U₂) exists when p has nonzero mass.
    """
    grid = p.grid
    if grid.dim != 2:
        raise ValueError("obstruction_witness is defined for n = 2")
    mass, share = compatibility_mass(p, np.ones(grid.dims, dtype=bool))
    if share <= COMPATIBILITY_TOL:
        return ObstructionReport(False, "no obstruction", mass)

    if radius is None:
        radius = _effective_radius(p, grid.box.half_width) + 0.25 * grid.box.half_width
    mask = BallRegion(radius).mask(grid)
    count = int(mask.sum())
    k1, k2 = grid.derivative_wavenumbers

    def d(values: np.ndarray, k: np.ndarray) -> np.ndarray:
        return from_spectral(1j * k * to_spectral(values, grid), grid)

    def embed(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u1 = np.zeros(grid.dims)
        u2 = np.zeros(grid.dims)
        u1[mask] = x[:count]
        u2[mask] = x[count:]
        return u1, u2

    def matvec(x: np.ndarray) -> np.ndarray:
        u1, u2 = embed(np.asarray(x).ravel())
        r1 = d(u1, k1) + d(u2, k2)
        r2 = d(u2, k1) - d(u1, k2)
        return np.concatenate([r1.ravel(), r2.ravel()])

    def rmatvec(y: np.ndarray) -> np.ndarray:
        y = np.asarray(y).ravel()
        r1 = y[: r1_size].reshape(grid.dims)
        r2 = y[r1_size:].reshape(grid.dims)
        g1 = -d(r1, k1) + d(r2, k2)
        g2 = -d(r1, k2) - d(r2, k1)
        return np.concatenate([g1[mask], g2[mask]])

    r1_size = int(np.prod(grid.dims))
    operator = LinearOperator(
        (2 * r1_size, 2 * count), matvec=matvec, rmatvec=rmatvec, dtype=np.float64
    )
    pb = band_limit(p).values
    rhs = np.concatenate([d(pb, k1).ravel(), d(pb, k2).ravel()])
    result = lsqr(operator, rhs, atol=1e-12, btol=1e-12, iter_lim=iter_lim)
    x, iterations = result[0], int(result[2])
    residual = float(np.linalg.norm(matvec(x) - rhs) * np.sqrt(grid.cell_volume))
    scale = float(np.linalg.norm(rhs) * np.sqrt(grid.cell_volume))
    relative = residual / scale if scale > 0 else 0.0
    logger.info(
        "obstruction witness: mass %.3e, least-squares residual %.3e (relative %.3e) after %d iterations",
        mass, residual, relative, iterations,
    )
    return ObstructionReport(
        obstructed=True,
        message=f"compactly supported candidates leave relative residual {relative:.3e}",
        mass=mass, residual=residual, relative_residual=relative, iterations=iterations,
    )
