"""Tests for the infimal-convolution envelope and its oracle."""

import numpy as np
import pytest

from services.exceptions import FamilyMismatchError, ValidationError
from services.hamiltonian import eval_DpH, eval_H
from services.infconv import (
    K,
    EnvelopeSpec,
    check_envelope_bounds,
    check_envelope_monotonicity,
    default_box_radius,
    envelope,
    envelope_certificate,
    envelope_oracle,
    oracle_resolution,
    prox_K,
)
from services.rng import make_rng


@pytest.fixture(name="unit_envelope")
def unit_envelope_spec(power_spec) -> EnvelopeSpec:
    return EnvelopeSpec(power_spec, 1.0)


class TestPenalty:
    def test_values(self):
        """K(0) = 0, K(1) = 2, K(0.75) = 1.3125 for alpha = 2."""
        values = K(np.array([[0.0, 1.0, 0.75]]), 2.0)
        np.testing.assert_allclose(values, [0.0, 2.0, 1.3125])

    def test_alpha_must_exceed_one(self):
        with pytest.raises(ValidationError):
            K(np.array([1.0]), 1.0)

    def test_prox_zero_inside_unit_ball(self):
        """prox of lam K vanishes for |v| <= lam."""
        assert np.all(prox_K(np.array([[0.3]]), 0.5, 2.0) == 0.0)

    def test_prox_closed_form(self):
        """Radius (|v| - lam) / (1 + 2 lam) when alpha = 2."""
        np.testing.assert_allclose(prox_K(np.array([[2.0]]), 0.5, 2.0), [[0.75]])

    def test_prox_general_alpha_solves_its_equation(self):
        """rho + lam alpha rho^(alpha-1) = |v| - lam."""
        rho = float(prox_K(np.array([[3.0]]), 0.5, 3.0)[0, 0])
        assert rho + 0.5 * 3.0 * rho**2 == pytest.approx(2.5, rel=1e-12)


class TestEnvelope:
    def test_epsilon_range(self, power_spec):
        """epsilon must lie in (0, 1]."""
        for eps in (0.0, 1.5):
            with pytest.raises(ValidationError):
                EnvelopeSpec(power_spec, eps)

    def test_zero_minimizer_region(self, unit_envelope):
        """|D_pH| = 0.2 <= 1/eps gives q = 0 and H^eps = H."""
        env = envelope(unit_envelope, 0, np.array([0.1]), 1.0)
        assert float(env.q_star[0]) == 0.0
        assert float(env.value) == pytest.approx(-0.99)

    def test_hand_computed_minimizer(self, unit_envelope):
        """p = 2, m = 1, eps = 1: q = 0.75 and H^eps = 1.875."""
        env = envelope(unit_envelope, 0, np.array([2.0]), 1.0)
        assert float(env.q_star[0]) == pytest.approx(0.75, abs=1e-9)
        assert float(env.value) == pytest.approx(1.875, abs=1e-9)

    def test_optimality_condition(self, power_spec):
        """Outside the zero region |D_pH(p - q)| = (1 + alpha |q|^(alpha-1))/eps."""
        spec = EnvelopeSpec(power_spec, 0.1)
        p = np.array([[8.0, -12.0, 20.0]])
        env = envelope(spec, np.zeros(3, dtype=int), p, np.ones(3))
        q = np.abs(env.q_star[0])
        assert np.all(q > 0)
        slope = np.abs(env.grad_p[0])
        np.testing.assert_allclose(slope, (1.0 + 2.0 * q) / 0.1, rtol=1e-9)

    def test_prox_agrees_with_bisection(self, power_spec):
        """Both minimizers of the quadratic base coincide."""
        spec = EnvelopeSpec(power_spec, 0.5)
        p = np.array([[0.2, 1.5, -3.0, 6.0]])
        x, m = np.zeros(4, dtype=int), np.full(4, 0.5)
        by_bisection = envelope(spec, x, p, m, method="bisection")
        by_prox = envelope(spec, x, p, m, method="prox")
        np.testing.assert_allclose(by_prox.q_star, by_bisection.q_star, atol=1e-8)
        np.testing.assert_allclose(by_prox.value, by_bisection.value, atol=1e-8)

    def test_unknown_method(self, unit_envelope):
        with pytest.raises(ValidationError):
            envelope(unit_envelope, 0, np.array([1.0]), 1.0, method="newton")

    def test_congestion_needs_positive_density(self, grid_1d, make_spec):
        """The congestion envelope is only defined for m > 0."""
        spec = EnvelopeSpec(make_spec(grid_1d, family="congestion", tau=0.5), 0.5)
        with pytest.raises(ValidationError):
            envelope(spec, 0, np.array([1.0]), 0.0)

    def test_envelope_below_base_and_ordered_in_epsilon(self, power_spec):
        """H^eps <= H, and a larger penalty (smaller eps) raises H^eps."""
        p, m = np.array([[0.5, 2.0, 8.0]]), np.array([0.3, 1.0, 4.0])
        x = np.zeros(3, dtype=int)
        base = eval_H(power_spec, x, p, m)
        values = [
            envelope(EnvelopeSpec(power_spec, eps), x, p, m).value
            for eps in (1.0, 0.1, 0.01)
        ]
        assert np.all(values[0] <= base + 1e-12)
        assert np.all(values[0] <= values[1] + 1e-12)
        assert np.all(values[1] <= values[2] + 1e-12)
        assert np.all(values[2] <= base + 1e-12)

    @pytest.mark.parametrize("p", [0.3, 2.0, 6.0])
    def test_gradient_matches_finite_difference(self, unit_envelope, p):
        """D_pH^eps is the derivative of the C^1 envelope."""
        step = 1e-6

        def value(s: float) -> float:
            return float(envelope(unit_envelope, 0, np.array([s]), 1.0).value)

        derivative = float(envelope(unit_envelope, 0, np.array([p]), 1.0).grad_p[0])
        central = (value(p + step) - value(p - step)) / (2 * step)
        assert derivative == pytest.approx(central, rel=1e-6, abs=1e-8)

    def test_gradient_is_base_gradient_at_shift(self, unit_envelope, power_spec):
        """grad_p equals D_pH(p - q) at the minimizer."""
        env = envelope(unit_envelope, 0, np.array([3.0]), 2.0)
        shifted = np.array([3.0]) - env.q_star
        np.testing.assert_allclose(env.grad_p, eval_DpH(power_spec, 0, shifted, 2.0))


class TestOracle:
    def test_hand_case_within_resolution(self, unit_envelope):
        """The grid oracle never undercuts the envelope and stays within resolution."""
        p = np.array([2.0])
        radius = default_box_radius(unit_envelope, 0, p, 1.0)
        oracle = envelope_oracle(unit_envelope, 0, p, 1.0, radius, grid_n=2001)
        resolution = oracle_resolution(unit_envelope, 0, p, 1.0, radius, 2001)
        gap = oracle - 1.875
        assert -1e-12 <= gap <= resolution

    def test_random_points_within_resolution(self, power_spec):
        """Seeded sweep over (p, m, eps) agrees with the oracle."""
        rng = make_rng(0, "oracle-test")
        for _ in range(100):
            eps = float(rng.choice([1.0, 0.1, 0.01]))
            spec = EnvelopeSpec(power_spec, eps)
            p = rng.uniform(-5.0, 5.0, size=1)
            m = float(rng.uniform(0.1, 3.0))
            radius = default_box_radius(spec, 0, p, m)
            oracle = envelope_oracle(spec, 0, p, m, radius)
            resolution = oracle_resolution(spec, 0, p, m, radius, 201)
            value = float(envelope(spec, 0, p, m).value)
            assert -1e-9 * max(1.0, abs(value)) <= oracle - value <= resolution + 1e-9

    def test_even_grid_is_made_odd(self, unit_envelope):
        """q = 0 stays on the oracle grid, so the zero region is exact."""
        oracle = envelope_oracle(unit_envelope, 0, np.array([0.1]), 1.0, 1.0, 10)
        assert oracle == pytest.approx(-0.99)

    def test_grid_too_small(self, unit_envelope):
        with pytest.raises(ValidationError):
            envelope_oracle(unit_envelope, 0, np.array([0.1]), 1.0, 1.0, 2)


class TestEnvelopeCertificates:
    @pytest.mark.parametrize("eps", [1.0, 0.1, 0.01])
    def test_bounds_hold_for_power(self, power_spec, eps):
        """Every sampled envelope bound is non-negative with the derived C."""
        spec = EnvelopeSpec(power_spec, eps)
        report = check_envelope_bounds(
            spec, envelope_certificate(power_spec), 2000, rng_seed=0, m_floor=1e-3
        )
        assert report.passed, report.witness
        assert set(report.bounds) == {
            "upper",
            "gradient",
            "lower",
            "lagrangian",
            "below_base",
            "identity",
        }

    @pytest.mark.parametrize("eps", [1.0, 0.1])
    def test_bounds_hold_for_weak(self, grid_1d, make_spec, eps):
        """The kernel bump at |p - q| = 1 enters the constant."""
        base = make_spec(grid_1d, family="weak", g=0.5, h_kernel="cosh")
        report = check_envelope_bounds(
            EnvelopeSpec(base, eps),
            envelope_certificate(base),
            2000,
            rng_seed=0,
            m_floor=1e-3,
        )
        assert report.passed, report.witness

    def test_bounds_reject_congestion(self, grid_1d, make_spec):
        spec = EnvelopeSpec(make_spec(grid_1d, family="congestion", tau=0.5), 0.5)
        cert = envelope_certificate(spec.base)
        with pytest.raises(FamilyMismatchError):
            check_envelope_bounds(spec, cert, 10)

    @pytest.mark.parametrize(
        "kwargs",
        [{"family": "power"}, {"family": "weak", "g": 0.5, "h_kernel": "cosh"}],
    )
    def test_envelope_stays_monotone(self, grid_1d, make_spec, kwargs):
        """The envelope pair (H^eps, m D_pH^eps) passes the monotonicity sampler."""
        spec = EnvelopeSpec(make_spec(grid_1d, **kwargs), 0.1)
        assert check_envelope_monotonicity(spec, 2000, rng_seed=0).passed
