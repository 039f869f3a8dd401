"""Tests for barotropic pressure laws."""
from __future__ import annotations

import numpy as np
import pytest

from src.errors import DomainError
from src.pressure_law import PressureKind, PressureLaw


def _table_law() -> PressureLaw:
    rho = np.linspace(0.5, 2.0, 31)
    return PressureLaw.tabulated(rho.tolist(), (rho**2).tolist())


class TestGammaLaw:
    def test_values_and_derivative(self):
        law = PressureLaw.gamma_law(2.0, 1.4)
        rho = np.array([0.5, 1.0, 3.0])
        np.testing.assert_allclose(law.p(rho), 2.0 * rho**1.4)
        np.testing.assert_allclose(law.dp(rho), 2.8 * rho**0.4)

    def test_inverse(self):
        law = PressureLaw.gamma_law(1.0, 2.0)
        rho = np.array([0.25, 1.0, 4.0])
        np.testing.assert_allclose(law.inverse(law.p(rho)), rho, rtol=1e-14)

    def test_identity(self):
        law = PressureLaw.identity()
        assert law.kind == PressureKind.GAMMA
        assert float(law.p(3.5)) == 3.5

    def test_rejects_nonpositive_parameters(self):
        with pytest.raises(ValueError, match="κ > 0"):
            PressureLaw.gamma_law(0.0, 2.0)

    def test_nonpositive_density_raises(self):
        with pytest.raises(DomainError, match="density must be positive"):
            PressureLaw.gamma_law(1.0, 2.0).p(np.array([1.0, 0.0]))

    def test_nonpositive_pressure_has_no_inverse(self):
        with pytest.raises(DomainError, match="invertible range"):
            PressureLaw.gamma_law(1.0, 2.0).inverse(np.array([0.0]))


class TestTabulatedLaw:
    def test_interpolates_the_table(self):
        law = _table_law()
        rho = np.array([0.6, 1.0, 1.73])
        np.testing.assert_allclose(law.p(rho), rho**2, rtol=1e-3)

    def test_newton_polished_inverse(self):
        law = _table_law()
        rho = np.array([0.7, 1.1, 1.9])
        np.testing.assert_allclose(law.p(law.inverse(law.p(rho))), law.p(rho), rtol=1e-12)

    def test_outside_working_range_raises(self):
        with pytest.raises(DomainError, match="working range"):
            _table_law().p(np.array([2.5]))

    def test_requires_increasing_pressure(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            PressureLaw.tabulated([1.0, 2.0, 3.0], [1.0, 1.0, 2.0])

    def test_requires_three_points(self):
        with pytest.raises(ValueError, match="at least three"):
            PressureLaw.tabulated([1.0, 2.0], [1.0, 2.0])


def test_description_round_trip():
    for law in (PressureLaw.gamma_law(1.5, 3.0), _table_law()):
        back = PressureLaw.from_description(law.describe())
        rho = np.array([0.8, 1.2])
        np.testing.assert_allclose(back.p(rho), law.p(rho))
