"""Tests for the compactly supported divergence solve and the antisymmetric lift."""
from __future__ import annotations

import numpy as np
import pytest

from src.bogovskii import (
    StarDomain,
    antisymmetric_lift,
    bogovskii_solve,
    compatibility_mass,
    obstruction_witness,
    project_compatible,
)
from src.errors import CompatibilityError
from src.field_core import (
    Box,
    ScalarField,
    VectorField,
    convolve,
    make_grid,
    mollifier,
    smooth_plateau,
    spectral_divergence,
)
from src.subsolution_builder import zero_mean_bump

ANGLES = 128
RAY_NODES = 48


@pytest.fixture(scope="module")
def source(grid64):
    return convolve(zero_mean_bump(grid64, 0.4, 1.0), mollifier(0.2, grid64))


@pytest.fixture(scope="module")
def solution(source):
    return bogovskii_solve(source, StarDomain(0.8), angles=ANGLES, ray_nodes=RAY_NODES)


class TestStarDomain:
    def test_default_star_radius(self):
        assert StarDomain(0.8).star_radius == pytest.approx(0.4)

    def test_star_radius_must_fit(self):
        with pytest.raises(ValueError, match="star_radius"):
            StarDomain(0.8, 1.0)


class TestBogovskiiSolve:
    def test_divergence_matches_source(self, solution):
        assert solution.residual_linf <= 5e-2

    def test_support_stays_in_outer_ball(self, solution):
        assert solution.support_excess == 0.0
        assert all(check.passed for check in solution.checks(quadrature_tol=5e-2))

    def test_zero_source(self, grid64):
        result = bogovskii_solve(ScalarField.zeros(grid64), StarDomain(0.8))
        assert result.phi.max_abs() == 0.0
        assert result.residual_linf == 0.0

    def test_nonzero_mean_is_rejected(self, grid64):
        p = ScalarField(grid64, smooth_plateau(grid64.radius() / 0.4))
        with pytest.raises(CompatibilityError, match="compatibility violated"):
            bogovskii_solve(p, StarDomain(0.8))

    def test_small_residual_mass_is_projected_out(self, source, grid64):
        domain = StarDomain(0.8)
        inside = domain.mask(grid64)
        p = ScalarField(grid64, source.values + 1e-8 * smooth_plateau(grid64.radius() / 0.2))
        mass, relative = compatibility_mass(p, inside)
        assert 0.0 < relative <= 1e-6
        corrected, removed, reported = project_compatible(p, domain)
        assert removed == pytest.approx(mass, rel=1e-12)
        assert reported == relative
        assert abs(compatibility_mass(corrected, inside)[0]) <= 1e-14

        result = bogovskii_solve(p, domain, angles=ANGLES, ray_nodes=RAY_NODES)
        assert result.removed_mass == pytest.approx(mass, rel=1e-12)
        assert all(check.passed for check in result.checks(quadrature_tol=5e-2))

    def test_linear_in_the_source(self, source):
        domain = StarDomain(0.8)
        once = bogovskii_solve(source, domain, angles=32, ray_nodes=16)
        twice = bogovskii_solve(source * 2.0, domain, angles=32, ray_nodes=16)
        np.testing.assert_allclose(twice.phi.values, 2.0 * once.phi.values, rtol=1e-12, atol=1e-15)


class TestAntisymmetricLift:
    def test_identities_hold_to_roundoff(self, source, solution):
        lift = antisymmetric_lift(source, solution.phi, tolerance=5e-2)
        assert all(check.passed for check in lift.checks(1e-8, quadrature_tol=5e-2))
        div = spectral_divergence(lift.m_slope)
        assert np.abs(div.values).max() <= 1e-10 * lift.m_slope.max_abs()

    def test_m_tilde_is_linear_in_time(self, source, solution):
        lift = antisymmetric_lift(source, solution.phi, tolerance=5e-2)
        np.testing.assert_allclose(lift.m_tilde(0.5).values, 0.5 * lift.m_slope.values)

    def test_rejects_wrong_phi(self, source):
        with pytest.raises(ValueError, match="does not solve"):
            antisymmetric_lift(source, VectorField.zeros(source.grid))


class TestObstruction:
    @pytest.fixture
    def grid32(self):
        return make_grid(Box.cube(1.25), 32)

    def test_zero_mean_is_not_obstructed(self, grid32):
        report = obstruction_witness(zero_mean_bump(grid32, 0.6, 1.0))
        assert not report.obstructed

    def test_positive_mass_is_obstructed(self, grid32):
        p = ScalarField(grid32, smooth_plateau(grid32.radius() / 0.5))
        report = obstruction_witness(p, iter_lim=300)
        assert report.obstructed
        assert report.mass > 0
        assert report.relative_residual > 1e-4
        assert "relative residual" in report.message

    def test_three_dimensions_unsupported(self):
        grid = make_grid(Box.cube(1.25, dim=3), 16)
        with pytest.raises(ValueError, match="n = 2"):
            obstruction_witness(ScalarField.zeros(grid))
