"""Tests for the pointwise geometry of the relaxed Euler system."""
from __future__ import annotations

import numpy as np
import pytest

from src.errors import DomainError
from src.euler_geometry import (
    HullParams,
    State,
    e_field,
    e_value,
    equality_case_deviation,
    equality_case_U,
    flux_from_state,
    hull_margin,
    in_K,
    in_wave_cone,
    kernel_residual,
    lambda_max,
    operator_norm_bound_holds,
    pair_direction,
    plane_wave_check,
    sample_pair_directions,
    segment_amplitude,
    wave_cone_kernel,
    wave_cone_residual,
)
from src.pressure_law import PressureLaw


def _random_traceless(rng, n):
    a = rng.standard_normal((n, n))
    a = 0.5 * (a + a.T)
    return a - np.trace(a) / n * np.eye(n)


@pytest.mark.parametrize("n", [2, 3])
def test_lambda_max_matches_eigvalsh(n):
    rng = np.random.default_rng(n)
    mats = rng.standard_normal((50, n, n))
    mats = 0.5 * (mats + np.swapaxes(mats, 1, 2))
    closed = lambda_max(np.moveaxis(mats, 0, -1))
    np.testing.assert_allclose(closed, np.linalg.eigvalsh(mats)[:, -1], atol=1e-9)


def test_lambda_max_of_multiple_of_identity():
    S = np.eye(3).reshape(3, 3, 1) * 2.5
    assert lambda_max(S)[0] == pytest.approx(2.5)


class TestEnergyFunction:
    @pytest.mark.parametrize("n", [2, 3])
    def test_lower_bound(self, n):
        rng = np.random.default_rng(10 + n)
        for _ in range(20):
            rho = rng.uniform(0.5, 2.0)
            m = rng.standard_normal(n)
            U = _random_traceless(rng, n)
            assert e_value(rho, m, U) >= (m @ m) / (n * rho) - 1e-12

    @pytest.mark.parametrize("n", [2, 3])
    def test_equality_case(self, n):
        rng = np.random.default_rng(20 + n)
        rho, m = 1.3, rng.standard_normal(n)
        assert e_value(rho, m, equality_case_U(rho, m)) == pytest.approx((m @ m) / (n * rho))

    def test_convex_in_m_and_U(self):
        rng = np.random.default_rng(30)
        rho = 0.8
        for _ in range(20):
            m1, m2 = rng.standard_normal((2, 3))
            U1, U2 = _random_traceless(rng, 3), _random_traceless(rng, 3)
            lam = rng.uniform()
            mixed = e_value(rho, lam * m1 + (1 - lam) * m2, lam * U1 + (1 - lam) * U2)
            assert mixed <= lam * e_value(rho, m1, U1) + (1 - lam) * e_value(rho, m2, U2) + 1e-12

    @pytest.mark.parametrize("n", [2, 3])
    def test_operator_norm_bound(self, n):
        rng = np.random.default_rng(40 + n)
        for _ in range(20):
            assert operator_norm_bound_holds(rng.uniform(0.5, 2.0), rng.standard_normal(n), _random_traceless(rng, n))

    def test_nonpositive_density_raises(self):
        with pytest.raises(DomainError, match="density must be positive"):
            e_value(0.0, np.zeros(2), np.zeros((2, 2)))


class TestStates:
    def test_rejects_trace(self):
        with pytest.raises(ValueError, match="traceless"):
            State(np.zeros(2), np.eye(2))

    def test_rejects_asymmetry(self):
        with pytest.raises(ValueError, match="symmetric"):
            State(np.zeros(2), np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_euler_state_lies_in_K(self):
        law = PressureLaw.gamma_law(1.0, 2.0)
        rho, m = 1.2, np.array([0.3, -0.4, 0.5])
        U, q = flux_from_state(rho, m, law)
        hp = HullParams(rho, float(m @ m) / rho, law)
        assert in_K(State(m, U, q), hp)

    def test_off_equality_case_U_is_not_in_K(self):
        law = PressureLaw.gamma_law(1.0, 2.0)
        rho, m = 1.2, np.array([0.3, -0.4, 0.5])
        U, q = flux_from_state(rho, m, law)
        hp = HullParams(rho, float(m @ m) / rho, law)
        assert equality_case_deviation(State(m, U, q), hp) <= 1e-15
        shifted = State(m, U + 1e-6 * np.diag([-1.0, -1.0, 2.0]), q)
        assert equality_case_deviation(shifted, hp) == pytest.approx(2e-6, rel=1e-6)
        assert not in_K(shifted, hp)

    def test_interior_state_has_positive_margin(self):
        hp = HullParams(1.0, 1.0)
        margin, _ = hull_margin(State(np.zeros(2), np.zeros((2, 2))), hp)
        assert margin == pytest.approx(0.5)
        assert not in_K(State(np.zeros(2), np.zeros((2, 2)), 0.5), hp)

    def test_hull_params_need_positive_chi(self):
        with pytest.raises(DomainError, match="χ must be positive"):
            HullParams(1.0, 0.0)


class TestWaveCone:
    def test_pair_direction_is_in_the_cone(self):
        rho = 1.1
        m_plus = np.array([0.6, 0.8])
        m_minus = np.array([0.8, -0.6])
        pair = pair_direction(m_plus, m_minus, rho)
        assert pair.a @ pair.b == pytest.approx(0.0, abs=1e-14)
        assert in_wave_cone(pair.zbar)
        assert kernel_residual(pair.zbar, pair.xi) <= 1e-14
        assert pair.time_frequency == pytest.approx(-np.linalg.norm(pair.a) / rho)
        np.testing.assert_allclose(pair.skew_generator @ pair.unit_normal, pair.b, atol=1e-14)

    def test_svd_kernel_is_a_null_vector(self):
        pair = pair_direction(np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), 1.0)
        xi, ratio = wave_cone_kernel(pair.zbar)
        assert ratio <= 1e-12
        assert kernel_residual(pair.zbar, xi) <= 1e-12

    def test_unequal_norms_rejected(self):
        with pytest.raises(ValueError, match="needs"):
            pair_direction(np.array([1.0, 0.0]), np.array([0.0, 2.0]), 1.0)

    def test_antipodal_pair_rejected(self):
        with pytest.raises(ValueError, match="degenerate pair"):
            pair_direction(np.array([1.0, 0.0]), np.array([-1.0, 0.0]), 1.0)

    def test_sampled_pairs_lie_on_the_sphere(self):
        rng = np.random.default_rng(5)
        pairs = sample_pair_directions(1.5, 2.0, 3, 8, rng)
        assert len(pairs) == 8
        for pair in pairs:
            m_plus = pair.a + pair.b
            assert m_plus @ m_plus == pytest.approx(3.0)


class TestSegments:
    def test_amplitude_keeps_both_endpoints_inside(self):
        hp = HullParams(1.0, 1.0)
        pair = pair_direction(np.array([0.6, 0.8]), np.array([0.8, -0.6]), 1.0)
        z = State(np.zeros(2), np.zeros((2, 2)))
        s = segment_amplitude(z, pair.zbar, hp, margin=0.05)
        assert 0 < s < np.inf
        for sign in (1.0, -1.0):
            end = z + sign * s * pair.zbar
            assert e_value(1.0, end.m, end.U) <= 0.5 - 0.05 + 1e-12

    def test_amplitude_zero_when_start_violates(self):
        hp = HullParams(1.0, 0.1)
        pair = pair_direction(np.array([0.6, 0.8]), np.array([0.8, -0.6]), 1.0)
        z = State(np.array([1.0, 0.0]), np.zeros((2, 2)))
        assert segment_amplitude(z, pair.zbar, hp) == 0.0


def test_plane_wave_solves_relaxed_system(grid64):
    pair = pair_direction(np.array([3.0, 4.0]), np.array([4.0, -3.0]), 1.0)
    times = np.linspace(0.0, 1.0, 41)
    residual = plane_wave_check(pair.zbar, pair.xi, np.sin, grid64, times)
    assert residual.relative <= 1e-6


def test_plane_wave_rejects_non_kernel_direction(grid64):
    pair = pair_direction(np.array([3.0, 4.0]), np.array([4.0, -3.0]), 1.0)
    with pytest.raises(ValueError, match="kernel"):
        plane_wave_check(pair.zbar, np.array([1.0, 0.0, 0.0]), np.sin, grid64, np.linspace(0.0, 1.0, 5))


class TestRandomSweep:
    COUNT = 10_000

    @pytest.fixture(scope="class")
    def states(self):
        rng = np.random.default_rng(7)
        n = 3
        rho = rng.uniform(0.2, 5.0, self.COUNT)
        m = rng.standard_normal((n, self.COUNT))
        U = rng.standard_normal((n, n, self.COUNT))
        U = 0.5 * (U + np.swapaxes(U, 0, 1))
        U -= np.trace(U)[None, None] / n * np.eye(n)[:, :, None]
        return rho, m, U

    def test_lower_bound(self, states):
        rho, m, U = states
        e = e_field(rho, m, U)
        floor = np.sum(m**2, axis=0) / (3 * rho)
        assert np.all(e >= floor - 1e-10 * np.maximum(1.0, floor))

    def test_operator_norm_bound(self, states):
        rho, m, U = states
        e = e_field(rho, m, U)
        norm = np.max(np.abs(np.linalg.eigvalsh(np.moveaxis(U, -1, 0))), axis=-1)
        assert np.all(norm <= 2 * e + 1e-10 * np.maximum(1.0, norm))

    def test_convexity(self, states):
        rho, m, U = states
        rng = np.random.default_rng(8)
        perm = rng.permutation(self.COUNT)
        lam = rng.uniform(size=self.COUNT)
        e1, e2 = e_field(rho, m, U), e_field(rho, m[:, perm], U[:, :, perm])
        mixed = e_field(rho, lam * m + (1 - lam) * m[:, perm], lam * U + (1 - lam) * U[:, :, perm])
        bound = lam * e1 + (1 - lam) * e2
        assert np.all(mixed <= bound + 1e-10 * np.maximum(1.0, bound))

    def test_euler_graph_is_K_and_the_interior_is_not(self, states):
        rho, m, _ = states
        law = PressureLaw.gamma_law(1.0, 2.0)
        for i in range(self.COUNT):
            r, mi = float(rho[i]), m[:, i]
            chi = float(mi @ mi) / r
            U, q = flux_from_state(r, mi, law)
            hp = HullParams(r, chi, law)
            margin, q_defect = hull_margin(State(mi, U, q), hp)
            assert abs(margin) <= 1e-10 * max(1.0, chi)
            assert abs(q_defect) <= 1e-10 * max(1.0, q)
            assert in_K(State(mi, U, q), hp)
            assert not in_K(State(0.5 * mi, 0.25 * U, q), hp)


@pytest.mark.parametrize("alpha", [0.5, 2.0, 3.0])
def test_wave_cone_determinant_is_homogeneous(alpha):
    rng = np.random.default_rng(11)
    for n in (2, 3):
        for _ in range(50):
            s = State(rng.standard_normal(n), _random_traceless(rng, n), float(rng.standard_normal()))
            det = wave_cone_residual(s)
            assert wave_cone_residual(alpha * s) == pytest.approx(alpha ** (n + 1) * det, rel=1e-12)
    pair = pair_direction(np.array([0.6, 0.8]), np.array([0.8, -0.6]), 1.0)
    assert in_wave_cone(alpha * pair.zbar)


@pytest.mark.parametrize("frequency", [1, 2, 4])
def test_plane_wave_harmonics_solve_relaxed_system(grid64, frequency):
    pair = pair_direction(np.array([0.6, 0.8]), np.array([0.8, -0.6]), 1.0)
    times = np.linspace(0.0, 1.0, 161)
    residual = plane_wave_check(pair.zbar, frequency * pair.xi, np.sin, grid64, times)
    assert residual.relative <= 1e-8
