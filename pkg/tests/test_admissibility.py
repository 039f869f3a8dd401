"""Tests for the internal energy, the χ ODE, T̄ and the admissibility report."""
from __future__ import annotations

import numpy as np
import pytest

from src.admissibility import (
    AdmissibilityConstants,
    admissibility_constants,
    chi_ode_solve,
    energy_flux_terms,
    internal_energy,
    maximal_time,
    pointwise_admissibility,
    satisfies_chi_inequality,
    validate_admissibility,
    weak_residual,
)
from src.errors import ChiTooSmallError, DomainError
from src.bogovskii import StarDomain
from src.field_core import Box, SymTensorField, VectorField, make_grid
from src.pressure_law import PressureLaw
from src.subsolution_builder import (
    ChiProfile,
    Subsolution,
    density_from_bump,
    lambda_profile,
    random_zero_mean_bump,
    zero_mean_bump,
)
from src.weak_forms import TestFunctionFamily


class TestInternalEnergy:
    def test_quadratic_law(self):
        energy = internal_energy(PressureLaw.gamma_law(1.0, 2.0), 1.0)
        rho = np.array([0.5, 1.0, 2.5])
        np.testing.assert_allclose(energy.value(rho), rho - 1.0, atol=1e-15)

    def test_quadrature_matches_closed_form(self):
        law = PressureLaw.gamma_law(0.8, 1.4)
        rho = np.array([0.6, 1.3, 2.0])
        closed = internal_energy(law, 1.0).value(rho)
        quad = internal_energy(law, 1.0, method="quadrature").value(rho)
        np.testing.assert_allclose(quad, closed, rtol=1e-10)

    def test_isothermal_law_is_logarithmic(self):
        energy = internal_energy(PressureLaw.identity(), 1.0)
        assert float(energy.value(np.e)) == pytest.approx(1.0)

    def test_derivative_recovers_the_pressure(self):
        law = PressureLaw.gamma_law(1.0, 1.4)
        rho = np.array([0.7, 1.9])
        np.testing.assert_allclose(rho**2 * internal_energy(law, 1.0).derivative(rho), law.p(rho))

    def test_tabulated_law(self):
        rho = np.linspace(0.5, 2.0, 31)
        law = PressureLaw.tabulated(rho.tolist(), (rho**2).tolist())
        energy = internal_energy(law, 1.0)
        sample = np.array([0.8, 1.5])
        np.testing.assert_allclose(energy.value(sample), sample - 1.0, atol=1e-3)

    def test_reference_outside_the_table(self):
        rho = np.linspace(0.5, 2.0, 31)
        law = PressureLaw.tabulated(rho.tolist(), (rho**2).tolist())
        with pytest.raises(DomainError, match="reference density"):
            internal_energy(law, 3.0)

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="unknown internal-energy method"):
            internal_energy(PressureLaw.identity(), 1.0, method="spline")


class TestConstants:
    def test_constant_density(self, trivial_sub):
        constants = admissibility_constants(trivial_sub)
        assert constants.C0 == pytest.approx(1.01)
        assert constants.c1 == 0.0 and constants.c2 == 0.0
        assert constants.C1 == 0.0 and constants.C2 == 0.0

    def test_bare_density_needs_a_law(self, grid64):
        law = PressureLaw.gamma_law(1.0, 2.0)
        rho0 = density_from_bump(law, 1.0, zero_mean_bump(grid64, 0.4, 0.1))
        with pytest.raises(ValueError, match="needs its pressure law"):
            admissibility_constants(rho0)
        constants = admissibility_constants(rho0, law)
        assert constants.C0 == pytest.approx(1.01 * np.sqrt(rho0.values.max()))
        assert constants.c1 > 0 and constants.c2 > 0

    def test_derived_coefficients(self):
        constants = AdmissibilityConstants(C0=2.0, c1=0.5, c2=0.25)
        assert constants.C1 == 2.0
        assert constants.C2 == 0.5
        assert set(constants.as_dict()) == {"C0", "c1", "c2", "C1", "C2"}


class TestChiOde:
    def test_closed_form_and_cross_check(self):
        chi = chi_ode_solve(1.0, (2.0, 2.0), 0.5)
        assert chi.value(0.25) == pytest.approx(0.35188, abs=1e-4)
        assert chi.value(0.25) == pytest.approx(np.tan(np.pi / 4 - 0.25) ** 2, rel=1e-12)
        assert chi.cross_check < 1e-8

    def test_cross_check_stops_before_the_horizon(self):
        chi = chi_ode_solve(1.0, (2.0, 2.0), 5.0)
        assert chi.horizon == pytest.approx(np.pi / 4)
        assert chi.cross_check < 1e-8

    def test_accepts_constants_object(self):
        constants = AdmissibilityConstants(C0=1.0, c1=1.0, c2=2.0)
        chi = chi_ode_solve(1.0, constants, 0.5)
        assert (chi.c1, chi.c2) == (2.0, 2.0)

    def test_closed_form_matches_rk45_on_random_triples(self):
        rng = np.random.default_rng(2024)
        for chi0, c1, c2 in zip(rng.uniform(0.1, 5.0, 100), rng.uniform(0.0, 3.0, 100), rng.uniform(0.0, 3.0, 100)):
            chi = chi_ode_solve(float(chi0), (float(c1), float(c2)), 1.0)
            assert chi.cross_check is not None
            assert chi.cross_check <= 1e-8, (chi0, c1, c2)


class TestMaximalTime:
    times = np.linspace(0.0, 2.0, 21)

    def test_crossing_with_callable_lambda(self):
        t_bar = maximal_time(ChiProfile.constant(4.5), lambda t: t**2 + 1.0, self.times, 2)
        assert t_bar == pytest.approx(np.sqrt(1.25), rel=1e-10)

    def test_crossing_with_samples(self):
        lam = self.times + 1.0
        t_bar = maximal_time(ChiProfile.constant(4.5), lam, self.times, 2)
        assert t_bar == pytest.approx(1.25)

    def test_chi_too_small(self):
        with pytest.raises(ChiTooSmallError, match="chi0 too small") as info:
            maximal_time(ChiProfile.constant(1.0), np.ones(21), self.times, 2)
        assert info.value.chi0 == 1.0
        assert info.value.needed == 2.0

    def test_zero_lambda_gives_the_horizon(self):
        chi = ChiProfile.ode(1.0, 2.0, 2.0)
        assert maximal_time(chi, np.zeros(21), self.times, 2) == pytest.approx(np.pi / 4)

    def test_censored_at_the_window_end(self):
        lam = np.full(21, 0.1)
        assert maximal_time(ChiProfile.constant(1.0), lam, self.times, 2) == 2.0


class TestPointwise:
    def test_trivial_subsolution_is_zero(self, trivial_sub):
        field = pointwise_admissibility(trivial_sub)
        assert field.max_worst == 0.0
        assert field.max_actual == 0.0
        assert field.bound is None

    def test_ode_chi_saturates_the_bound(self, trivial_sub):
        sub = trivial_sub.with_chi(ChiProfile.ode(1.0, 2.0, 2.0))
        field = pointwise_admissibility(sub, AdmissibilityConstants(C0=1.0, c1=1.0, c2=2.0))
        np.testing.assert_allclose(field.bound, 0.0, atol=1e-12)
        assert field.max_worst <= 0.0

    @pytest.mark.parametrize("seed", range(10))
    def test_seeded_densities_with_ode_chi_are_admissible(self, grid64, seed):
        law = PressureLaw.gamma_law(1.0, 2.0)
        bump = random_zero_mean_bump(grid64, 0.4, 0.1, np.random.default_rng(seed))
        sub = Subsolution(
            rho0=density_from_bump(law, 1.0, bump), law=law, times=np.linspace(0.0, 0.25, 17),
            m_slope=VectorField.zeros(grid64), U_tilde=SymTensorField.zeros(grid64),
            domain=StarDomain(0.8), rho_bar=1.0,
        )
        constants = admissibility_constants(sub)
        assert constants.C1 > 0 and constants.C2 > 0
        sub = sub.with_chi(chi_ode_solve(25.0, constants, 0.25))
        assert satisfies_chi_inequality(sub.chi, constants)
        assert pointwise_admissibility(sub, constants).max_worst <= 1e-10
        assert maximal_time(sub.chi, lambda_profile(sub).values, sub.times, 2) > 0

    def test_chi_inequality(self):
        constants = AdmissibilityConstants(C0=1.0, c1=1.0, c2=2.0)
        assert satisfies_chi_inequality(ChiProfile.ode(1.0, 2.0, 2.0), constants)
        assert not satisfies_chi_inequality(ChiProfile.ode(1.0, 1.0, 2.0), constants)
        assert not satisfies_chi_inequality(ChiProfile.constant(1.0), constants)
        assert satisfies_chi_inequality(ChiProfile.constant(1.0), AdmissibilityConstants(1.0, 0.0, 0.0))
        sampled = ChiProfile.sampled(np.array([0.0, 1.0]), np.array([1.0, 0.5]))
        assert not satisfies_chi_inequality(sampled, constants)


class TestWeakResiduals:
    def test_mass_and_momentum_vanish_for_rest_state(self, trivial_sub):
        assert weak_residual("mass", trivial_sub).relative <= 1e-12
        assert weak_residual("momentum", trivial_sub).relative <= 1e-12
        assert weak_residual("momentum", trivial_sub, relaxed=False).relative <= 1e-12

    def test_energy_needs_nonnegative_tests(self, trivial_sub):
        family = TestFunctionFamily.for_times(trivial_sub.grid, trivial_sub.times)
        with pytest.raises(ValueError, match="nonnegative test family"):
            weak_residual("energy", trivial_sub, family=family)

    def test_family_must_share_the_grid(self, trivial_sub):
        other = make_grid(Box.cube(1.25), 32)
        family = TestFunctionFamily.for_times(other, trivial_sub.times)
        with pytest.raises(ValueError, match="different grid"):
            weak_residual("mass", trivial_sub, family=family)

    def test_surrogate_energy_density(self, trivial_sub):
        E, F = energy_flux_terms(trivial_sub, surrogate=True)
        inside = trivial_sub.domain.mask(trivial_sub.grid)
        np.testing.assert_allclose(E[:, inside], 0.5)
        np.testing.assert_allclose(E[:, ~inside], 0.0, atol=1e-15)
        assert np.all(F == 0.0)

    def test_decreasing_chi_is_dissipative(self, trivial_sub):
        sub = trivial_sub.with_times(np.linspace(0.0, 0.5, 33)).with_chi(ChiProfile.ode(1.0, 2.0, 2.0))
        assert weak_residual("energy", sub, surrogate=True).signed >= -1e-12


class TestValidateAdmissibility:
    def test_rest_state_passes(self, trivial_sub):
        report = validate_admissibility(trivial_sub)
        assert report.passed
        assert report.metrics["chi_inequality_enforced"] is True
        names = {c.name for c in report.checks}
        assert {"chi_inequality", "pointwise_worst", "energy_inequality", "t_bar_covers_window"} <= names

    def test_ode_chi_passes(self, trivial_sub):
        sub = trivial_sub.with_times(np.linspace(0.0, 0.5, 33)).with_chi(ChiProfile.ode(1.0, 2.0, 2.0))
        assert validate_admissibility(sub).passed

    def test_unenforced_chi_inequality_fails(self, trivial_sub):
        report = validate_admissibility(trivial_sub, AdmissibilityConstants(1.0, 1.0, 1.0))
        assert report.metrics["chi_inequality_enforced"] is False
        assert not report.check("chi_inequality").passed
        assert "pointwise_worst" in {c.name for c in report.checks}
        assert not report.passed

    def test_short_t_bar_fails(self, trivial_sub):
        sub = trivial_sub.with_chi(ChiProfile.constant(1.0).with_validity(0.5, 1.0))
        report = validate_admissibility(sub)
        assert not report.check("t_bar_covers_window").passed
        assert not report.passed
