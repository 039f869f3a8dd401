"""Tests for separable test functions and weak-form pairings."""
from __future__ import annotations

import numpy as np
import pytest

from src.field_core import smooth_step
from src.weak_forms import (
    SpatialBump,
    TestFunctionFamily,
    TimeWeight,
    balance_residual,
    divergence_residual,
    refine_times,
    resample,
    signed_balance,
)


def _gaussian(grid, times, velocity, width=0.1):
    x, y = grid.coordinates
    t = times.reshape(-1, 1, 1)
    return np.exp(-((x - velocity[0] * t) ** 2 + (y - velocity[1] * t) ** 2) / width)


def test_family_size_and_window(grid64):
    family = TestFunctionFamily.for_times(grid64, np.linspace(0.5, 2.5, 5))
    assert len(family) == 81
    assert family.t0 == 0.5
    assert family.horizon == 2.0
    assert len(list(family)) == 81


def test_family_needs_positive_window(grid64):
    with pytest.raises(ValueError, match="positive time window"):
        TestFunctionFamily(grid64, 0.0, 0.0)


@pytest.mark.parametrize("mode", ["one", "sin", "cos"])
def test_time_weight_derivative(mode):
    weight = TimeWeight(0.0, 1.0, mode)
    t = np.linspace(0.2, 0.8, 13)
    h = 1e-6
    fd = (weight.values(t + h) - weight.values(t - h)) / (2 * h)
    np.testing.assert_allclose(weight.derivative(t), fd, rtol=1e-6, atol=1e-6)


def test_nonnegative_weights_are_nonnegative():
    t = np.linspace(0.0, 1.0, 101)
    for mode in ("one", "sin", "cos"):
        assert np.all(TimeWeight(0.0, 1.0, mode, nonnegative=True).values(t) >= 0)


def test_unknown_modulation_raises():
    with pytest.raises(ValueError, match="unknown time modulation"):
        TimeWeight(0.0, 1.0, "tan").values(np.zeros(2))


def test_family_has_early_middle_and_late_windows(grid64):
    family = TestFunctionFamily.for_times(grid64, np.linspace(0.0, 2.0, 33))
    assert sorted({w.centre for w in family.temporal}) == [0.125, 0.5, 0.875]
    ends = np.array([0.0, 2.0])
    for weight in family.temporal:
        assert np.abs(weight.values(ends)).max() <= 1e-13


def test_refined_pairing_is_exact_for_cubics():
    times = np.linspace(0.0, 1.0, 9)
    series = 1.0 - 2.0 * times + times**3
    fine = refine_times(times)
    np.testing.assert_allclose(resample(series, times, fine), 1.0 - 2.0 * fine + fine**3, atol=1e-13)


def test_analytic_gradient_matches_spectral(grid128):
    bump = SpatialBump((0.1, -0.05), 0.0625)
    analytic = bump.gradient(grid128)
    spectral = bump.gradient(grid128, spectral=True)
    assert np.abs(analytic - spectral).max() <= 1e-6 * np.abs(analytic).max()


class TestBalance:
    def test_transport_solution_has_small_residual(self, grid64):
        times = np.linspace(0.0, 1.0, 161)
        velocity = (0.3, -0.1)
        density = _gaussian(grid64, times, velocity)
        flux = np.stack([velocity[0] * density, velocity[1] * density], axis=1)
        family = TestFunctionFamily.for_times(grid64, times)
        residual = balance_residual(times, density, flux, family, spectral=False)
        assert residual.relative <= 1e-8

    def test_missing_flux_is_detected(self, grid64):
        times = np.linspace(0.0, 1.0, 81)
        density = _gaussian(grid64, times, (0.3, -0.1))
        flux = np.zeros((times.size, 2) + grid64.dims)
        family = TestFunctionFamily.for_times(grid64, times)
        residual = balance_residual(times, density, flux, family, spectral=False)
        assert residual.relative > 1e-2
        assert residual.test

    def test_flux_missing_near_the_start_is_caught_by_the_early_window(self, grid64):
        times = np.linspace(0.0, 1.0, 161)
        velocity = (0.3, -0.1)
        density = _gaussian(grid64, times, velocity)
        switch = (1.0 - smooth_step((times - 0.1) / 0.1)).reshape(-1, 1, 1)
        flux = np.stack([velocity[0] * switch * density, velocity[1] * switch * density], axis=1)
        family = TestFunctionFamily.for_times(grid64, times)
        residual = balance_residual(times, density, flux, family, spectral=False)
        assert residual.relative > 1e-2
        assert "t=0.125T" in residual.test

        family.temporal = [w for w in family.temporal if w.centre != 0.125]
        assert balance_residual(times, density, flux, family, spectral=False).relative <= 1e-5

    def test_spectrally_divergence_free_field(self, grid64):
        times = np.linspace(0.0, 1.0, 41)
        k = 2 * np.pi / 2.5
        x, y = grid64.coordinates
        # v = ∇⊥(sin kx · sin 2ky)
        v = np.stack([2 * k * np.sin(k * x) * np.cos(2 * k * y), -k * np.cos(k * x) * np.sin(2 * k * y)])
        vector = np.broadcast_to(v, (times.size,) + v.shape)
        family = TestFunctionFamily.for_times(grid64, times)
        assert divergence_residual(times, vector, family).relative <= 1e-10


class TestSignedBalance:
    def _run(self, grid, growth):
        times = np.linspace(0.0, 1.0, 81)
        profile = _gaussian(grid, np.zeros(1), (0.0, 0.0))[0]
        density = (1.0 + growth * times).reshape(-1, 1, 1) * profile
        flux = np.zeros((times.size, 2) + grid.dims)
        family = TestFunctionFamily.for_times(grid, times, nonnegative=True)
        return signed_balance(times, density, flux, family, spectral=False)

    def test_decreasing_density_is_dissipative(self, grid64):
        assert self._run(grid64, -0.5).signed > 0

    def test_increasing_density_violates(self, grid64):
        assert self._run(grid64, 0.5).signed < 0
