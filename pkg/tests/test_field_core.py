"""Tests for grids, sampled fields and the spectral calculus."""
from __future__ import annotations

import numpy as np
import pytest

from src.errors import ResolutionError
from src.field_core import (
    BallRegion,
    Box,
    MatrixField,
    ScalarField,
    SymTensorField,
    VectorField,
    band_limit,
    bessel_window,
    convolve,
    divergence_array,
    gradient_array,
    hessian_array,
    laplacian_array,
    make_grid,
    mollifier,
    refine_array,
    reflect_through_origin,
    relative_max,
    smooth_plateau,
    smooth_step,
    smooth_step_derivative,
    spectral_divergence,
    spectral_gradient,
    support_excess,
    support_radius,
)


# ── Smooth profiles ────────────────────────────────────────────────────────

def test_smooth_step_limits_and_midpoint():
    t = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
    np.testing.assert_allclose(smooth_step(t), [1.0, 1.0, 0.5, 0.0, 0.0])


def test_smooth_step_is_monotone():
    values = smooth_step(np.linspace(0.0, 1.0, 201))
    assert np.all(np.diff(values) <= 0)


def test_smooth_step_derivative_matches_finite_difference():
    t = np.linspace(0.05, 0.95, 19)
    h = 1e-6
    fd = (smooth_step(t + h) - smooth_step(t - h)) / (2 * h)
    np.testing.assert_allclose(smooth_step_derivative(t), fd, rtol=1e-5, atol=1e-8)


def test_smooth_plateau_regions():
    values = smooth_plateau(np.array([0.25, 0.5, 0.75, 1.0, 1.5]))
    np.testing.assert_allclose(values[[0, 1, 3, 4]], [1.0, 1.0, 0.0, 0.0])
    assert 0.0 < values[2] < 1.0


def test_bessel_window_is_one_at_the_centre_and_zero_outside():
    values = bessel_window(np.array([0.0, 0.5, 0.999, 1.0, 1.5]), 16.0)
    assert values[0] == pytest.approx(1.0)
    assert 0.0 < values[2] < values[1] < 1.0
    assert np.all(values[3:] == 0.0)


def test_bessel_window_spectrum_is_resolved(grid128):
    window = bessel_window(grid128.radius() / 0.3, 16.0)
    spectrum = np.abs(np.fft.fft2(window))
    assert spectrum[grid128.nyquist_mask].max() <= 1e-5 * spectrum[0, 0]


# ── Box & Grid ─────────────────────────────────────────────────────────────

class TestGrid:
    def test_box_rejects_inverted_bounds(self):
        with pytest.raises(ValueError, match="must exceed"):
            Box(lower=(0.0, 1.0), upper=(1.0, 0.5))

    def test_box_rejects_unsupported_dimension(self):
        with pytest.raises(ValueError, match="2 or 3"):
            Box.cube(1.0, dim=4)

    def test_coarse_grid_raises(self):
        with pytest.raises(ResolutionError, match="too coarse"):
            make_grid(Box.cube(1.0), 8)

    def test_origin_is_a_node(self, grid64):
        assert grid64.origin_index == (32, 32)
        assert grid64.axes[0][32] == 0.0
        assert grid64.spacing[0] == pytest.approx(2.5 / 64)

    def test_equal_grids_hash_alike(self):
        a = make_grid(Box.cube(1.25), 32)
        b = make_grid(Box.cube(1.25), 32)
        assert a == b
        assert hash(a) == hash(b)

    def test_derivative_wavenumbers_drop_nyquist(self, grid64):
        kx = grid64.derivative_wavenumbers[0].ravel()
        assert kx[32] == 0.0
        assert kx[1] == pytest.approx(2 * np.pi / 2.5)


# ── Fields ─────────────────────────────────────────────────────────────────

class TestFields:
    def test_values_are_read_only(self, grid64):
        f = ScalarField.zeros(grid64)
        with pytest.raises(ValueError):
            f.values[0, 0] = 1.0

    def test_shape_is_checked(self, grid64):
        with pytest.raises(ValueError, match="expected"):
            VectorField(grid64, np.zeros(grid64.dims))

    def test_arithmetic_needs_matching_grids(self, grid64):
        other = make_grid(Box.cube(1.25), 32)
        with pytest.raises(ValueError, match="different grids"):
            ScalarField.zeros(grid64) + ScalarField.zeros(other)

    def test_traceless_tensor_rejects_trace(self, grid64):
        packed = np.zeros((3,) + grid64.dims)
        packed[0] = 1.0
        with pytest.raises(ValueError, match="traceless"):
            SymTensorField(grid64, packed, traceless=True)

    def test_projection_removes_trace(self, grid64):
        rng = np.random.default_rng(1)
        full = rng.standard_normal((2, 2) + grid64.dims)
        U = SymTensorField.from_full(grid64, full, traceless=True, project=True)
        assert np.max(np.abs(U.trace().values)) <= 1e-12 * U.max_abs()
        np.testing.assert_allclose(U.full(), np.swapaxes(U.full(), 0, 1))

    def test_matrix_split_into_sym_and_skew(self, grid64):
        rng = np.random.default_rng(2)
        A = MatrixField(grid64, rng.standard_normal((2, 2) + grid64.dims))
        np.testing.assert_allclose(A.sym().full() + A.skew().values, A.values, atol=1e-14)
        np.testing.assert_allclose(A.transpose().transpose().values, A.values)


# ── Spectral calculus ──────────────────────────────────────────────────────

class TestSpectral:
    def test_gradient_of_trigonometric_function(self, grid64):
        k = 2 * np.pi / 2.5
        f = grid64.sample(lambda x, y: np.sin(k * x) * np.cos(2 * k * y))
        grad = spectral_gradient(f)
        x, y = grid64.coordinates
        np.testing.assert_allclose(grad.values[0], k * np.cos(k * x) * np.cos(2 * k * y), atol=1e-10)
        np.testing.assert_allclose(grad.values[1], -2 * k * np.sin(k * x) * np.sin(2 * k * y), atol=1e-10)

    def test_gradient_component_axis_position(self, grid64):
        batch = np.zeros((5,) + grid64.dims)
        assert gradient_array(batch, grid64).shape == (5, 2) + grid64.dims

    def test_laplacian_is_trace_of_hessian(self, grid64):
        rng = np.random.default_rng(3)
        values = rng.standard_normal(grid64.dims)
        hess = hessian_array(values, grid64)
        lap = laplacian_array(values, grid64)
        np.testing.assert_allclose(hess[0, 0] + hess[1, 1], lap, atol=1e-9 * np.abs(lap).max())

    def test_div_div_of_skew_field_vanishes(self, grid64):
        rng = np.random.default_rng(4)
        a = rng.standard_normal(grid64.dims)
        skew = np.zeros((2, 2) + grid64.dims)
        skew[0, 1] = a
        skew[1, 0] = -a
        row_div = divergence_array(skew, grid64)
        scale = np.abs(row_div).max()
        assert np.abs(divergence_array(row_div, grid64)).max() <= 1e-8 * scale

    def test_div_of_gradient_is_laplacian(self, grid64):
        rng = np.random.default_rng(5)
        f = band_limit(ScalarField(grid64, rng.standard_normal(grid64.dims)))
        div = spectral_divergence(spectral_gradient(f))
        lap = laplacian_array(f.values, grid64)
        assert relative_max(div.values - lap, lap) <= 1e-10

    def test_refinement_keeps_coarse_nodes_and_fills_midpoints(self, grid64):
        x, y = grid64.coordinates
        length = grid64.box.lengths[0]
        values = np.sin(2 * np.pi * x / length) * np.cos(6 * np.pi * y / length)
        fine = refine_array(values, grid64, 2)
        assert fine.shape == (128, 128)
        np.testing.assert_allclose(fine[::2, ::2], values, atol=1e-13)
        midpoint = np.sin(2 * np.pi * (x + 0.5 * grid64.spacing[0]) / length) * np.cos(6 * np.pi * y / length)
        np.testing.assert_allclose(fine[1::2, ::2], midpoint, atol=1e-13)

    def test_refinement_factor_one_band_limits(self, grid64):
        values = np.random.default_rng(3).standard_normal(grid64.dims)
        np.testing.assert_allclose(refine_array(values, grid64, 1), band_limit(ScalarField(grid64, values)).values)


# ── Kernels ────────────────────────────────────────────────────────────────

class TestKernels:
    def test_mollifier_has_unit_mass_and_compact_support(self, grid64):
        omega = mollifier(0.2, grid64)
        assert omega.integral() == pytest.approx(1.0, abs=1e-12)
        assert support_radius(omega) < 0.2

    def test_underresolved_mollifier_raises(self, grid64):
        with pytest.raises(ResolutionError, match="under-resolved"):
            mollifier(0.05, grid64)

    def test_convolution_preserves_mass(self, grid64):
        bump = ScalarField(grid64, smooth_plateau(grid64.radius() / 0.4))
        smoothed = convolve(bump, mollifier(0.2, grid64))
        assert smoothed.integral() == pytest.approx(bump.integral(), rel=1e-12)
        assert support_excess(smoothed, BallRegion(0.6 + grid64.max_spacing)) <= 1e-12

    def test_reflection_is_an_involution(self, grid64):
        f = grid64.sample(lambda x, y: x + 2 * y**2)
        np.testing.assert_array_equal(reflect_through_origin(reflect_through_origin(f)).values, f.values)
        x, y = grid64.coordinates
        inner = (np.abs(x) < 1.0) & (np.abs(y) < 1.0)
        np.testing.assert_allclose(reflect_through_origin(f).values[inner], (-x + 2 * y**2)[inner])


# ── Support & norms ────────────────────────────────────────────────────────

def test_support_excess_of_zero_field(grid64):
    assert support_excess(ScalarField.zeros(grid64), BallRegion(0.1)) == 0.0


def test_support_excess_measures_leak(grid64):
    values = np.zeros(grid64.dims)
    values[32, 32] = 1.0
    values[0, 0] = 0.25
    assert support_excess(ScalarField(grid64, values), BallRegion(0.5)) == pytest.approx(0.25)


def test_relative_max_edge_cases():
    assert relative_max(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_max(np.ones(3), np.zeros(3)) == float("inf")
    assert relative_max(np.array([0.5]), np.array([-2.0])) == pytest.approx(0.25)
