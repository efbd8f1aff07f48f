"""Tests for the regularized MFG operator, its residuals and certificates."""

from itertools import pairwise

import numpy as np
import pytest

from services.exceptions import ValidationError
from services.grid import ScalarField, TorusGrid
from services.mfg_operator import (
    MFGState,
    ProblemData,
    apply,
    check_operator_monotonicity,
    coercivity_profile,
    constant_solution,
    hj_residual,
    monotonicity_pairing,
    random_state,
    regularization_energy,
    regularization_gradient,
    standard_test_battery,
    transport_residual,
    weak_solution_certificate,
)
from services.rng import make_rng


class TestApply:
    def test_exact_solution_is_a_zero(self, power_spec, make_problem):
        """(m, u) = (1, 1) solves the unregularized problem with V = 0."""
        data = make_problem(power_spec)
        out = apply(data, MFGState.constant(power_spec.grid, 1.0, 1.0))
        assert np.all(out.eta_slot.values == 0.0)
        assert np.all(out.nu_slot.values == 0.0)

    def test_residual_away_from_solution(self, power_spec, make_problem):
        """At (1, 0) the HJ slot is 1 and the transport slot vanishes."""
        data = make_problem(power_spec)
        out = apply(data, MFGState.constant(power_spec.grid, 1.0, 0.0))
        np.testing.assert_allclose(out.eta_slot.values, 1.0)
        np.testing.assert_allclose(out.nu_slot.values, 0.0)

    def test_negative_density_rejected(self, power_spec, make_problem):
        data = make_problem(power_spec)
        with pytest.raises(ValidationError):
            apply(data, MFGState.constant(power_spec.grid, -0.5, 0.0))

    def test_grid_mismatch_rejected(self, power_spec, make_problem):
        data = make_problem(power_spec)
        with pytest.raises(ValidationError):
            apply(data, MFGState.constant(TorusGrid(1, 4), 1.0, 0.0))

    def test_pairing_with_itself_is_zero(self, power_spec, make_problem):
        data = make_problem(power_spec, epsilon=0.1)
        z = MFGState.constant(power_spec.grid, 2.0, 0.5)
        assert monotonicity_pairing(data, z, z) == 0.0

    def test_broken_hamiltonian_gives_negative_pairing(
        self, grid_1d, make_spec, make_problem
    ):
        """With b = -1 the states m = 2 and m = 1 pair to -1."""
        data = make_problem(make_spec(grid_1d, b=-1.0, strict=False))
        z1 = MFGState.constant(grid_1d, 2.0, 0.0)
        z2 = MFGState.constant(grid_1d, 1.0, 0.0)
        assert monotonicity_pairing(data, z1, z2) == pytest.approx(-1.0)


class TestProblemData:
    def test_congestion_needs_floor(self, grid_1d, make_spec, make_problem):
        spec = make_spec(grid_1d, family="congestion", tau=0.5)
        with pytest.raises(ValidationError, match="m_floor"):
            make_problem(spec)

    def test_envelope_needs_positive_epsilon(self, power_spec, make_problem):
        with pytest.raises(ValidationError, match="envelope"):
            make_problem(power_spec, epsilon=0.0, use_envelope=True)

    def test_with_stage_keeps_the_rest(self, power_spec, make_problem):
        data = make_problem(power_spec, epsilon=0.1, V=0.5)
        staged = data.with_stage(0.01, 0.0)
        assert staged.epsilon == 0.01
        assert staged.V is data.V
        assert staged.gamma_bar == 4.0


class TestResiduals:
    def test_hj_residual_on_support(self, power_spec, make_problem):
        """u = 2, m = 1: residual u + H - V = 1 everywhere."""
        data = make_problem(power_spec)
        hj = hj_residual(data, MFGState.constant(power_spec.grid, 1.0, 2.0))
        np.testing.assert_allclose(hj.field.values, 1.0)
        assert hj.max_pos == pytest.approx(1.0)
        assert hj.max_on_support == pytest.approx(1.0)
        assert hj.support_size == power_spec.grid.node_count

    def test_hj_residual_at_vacuum(self, power_spec, make_problem):
        """m = 0, u = -5: negative residual, empty support."""
        data = make_problem(power_spec)
        hj = hj_residual(data, MFGState.constant(power_spec.grid, 0.0, -5.0))
        np.testing.assert_allclose(hj.field.values, -5.0)
        assert hj.max_pos == 0.0
        assert hj.max_on_support == 0.0
        assert hj.support_size == 0

    def test_transport_residual_mass_identity(self, power_spec, make_problem):
        """m = 2, u = 0 at eps = 0: unit residual and unit mass defect."""
        data = make_problem(power_spec)
        tr = transport_residual(data, MFGState.constant(power_spec.grid, 2.0, 0.0))
        np.testing.assert_allclose(tr.field.values, 1.0)
        assert tr.l1 == pytest.approx(1.0)
        assert tr.mass_gap == pytest.approx(1.0)
        assert tr.penalty_mass == 0.0

    def test_mass_identity_splits_into_defect_and_penalty(
        self, power_spec, make_problem
    ):
        """The integral of the transport row is the mass defect plus the penalty."""
        data = make_problem(power_spec, epsilon=0.1)
        rng = make_rng(1, "mass-identity")
        grid = power_spec.grid
        z = MFGState.from_arrays(
            grid,
            1.0 + 0.3 * rng.random(grid.shape),
            0.3 * rng.standard_normal(grid.shape),
        )
        tr = transport_residual(data, z)
        integral_of_row = float(np.sum(tr.field.values) * grid.cell_volume)
        assert tr.mass_gap == pytest.approx(integral_of_row, abs=1e-9)
        assert tr.mass_gap == pytest.approx(tr.mass_defect + tr.penalty_mass)


class TestConstantSolution:
    def test_regularized_root(self, power_spec, make_problem):
        """c + 0.1 c^3 = 1 at eps = 0.1, so c is about 0.9217."""
        data = make_problem(power_spec, epsilon=0.1)
        z = constant_solution(data)
        c = z.m.max()
        assert c == pytest.approx(0.9217, abs=1e-4)
        assert c + 0.1 * c**3 == pytest.approx(1.0, abs=1e-12)
        assert z.u.max() == pytest.approx(c)

    def test_is_a_zero_of_the_operator(self, power_spec, make_problem):
        data = make_problem(power_spec, epsilon=0.1)
        out = apply(data, constant_solution(data))
        assert np.max(np.abs(out.eta_slot.values)) <= 1e-12
        assert np.max(np.abs(out.nu_slot.values)) <= 1e-12

    def test_unregularized_is_one(self, power_spec, make_problem):
        z = constant_solution(make_problem(power_spec))
        assert z.m.max() == pytest.approx(1.0)
        assert z.u.max() == pytest.approx(1.0)

    def test_needs_constant_potential(self, power_spec):
        grid = power_spec.grid
        V = ScalarField(grid, np.sin(2 * np.pi * grid.coordinates[0]))
        with pytest.raises(ValidationError):
            constant_solution(ProblemData(V=V, spec=power_spec))


class TestOperatorMonotonicity:
    @pytest.mark.parametrize("epsilon", [0.0, 0.1])
    @pytest.mark.parametrize(
        ("kwargs", "m_floor"),
        [
            ({"family": "power"}, 0.0),
            ({"family": "congestion", "tau": 0.5}, 0.1),
            ({"family": "weak", "g": 0.5, "h_kernel": "cosh"}, 0.0),
            ({"family": "weak", "g": 0.5, "h_kernel": "exp"}, 0.0),
        ],
    )
    def test_sampled_pairings_are_non_negative(
        self, grid_1d, make_spec, make_problem, kwargs, m_floor, epsilon
    ):
        """<A(z1) - A(z2), z1 - z2>_h >= 0 on random admissible pairs."""
        data = make_problem(make_spec(grid_1d, **kwargs), epsilon, m_floor=m_floor)
        report = check_operator_monotonicity(data, 100, rng_seed=0)
        assert report.passed, report.witness
        assert report.sample_count == 100

    @pytest.mark.parametrize(
        "kwargs",
        [{"family": "power"}, {"family": "weak", "g": 0.5, "h_kernel": "cosh"}],
    )
    def test_envelope_operator_is_monotone(
        self, grid_1d, make_spec, make_problem, kwargs
    ):
        """Replacing H by its envelope keeps the pairings non-negative."""
        data = make_problem(make_spec(grid_1d, **kwargs), 0.1, use_envelope=True)
        report = check_operator_monotonicity(data, 100, rng_seed=1)
        assert report.passed, report.witness

    def test_random_states_are_smooth_and_admissible(self, grid_1d):
        """u carries only the first three Fourier modes; m sits above the floor."""
        z = random_state(grid_1d, make_rng(5, "states"), m_floor=0.2)
        again = random_state(grid_1d, make_rng(5, "states"), m_floor=0.2)

        assert np.all(z.m.values > 0.2)
        assert z.admissible(0.2)
        spectrum = np.abs(np.fft.fft(z.u.values))
        np.testing.assert_allclose(spectrum[4:13], 0.0, atol=1e-12)
        np.testing.assert_array_equal(z.u.values, again.u.values)

    def test_two_dimensional_grid(self, grid_2d, make_spec, make_problem):
        data = make_problem(make_spec(grid_2d), 0.1)
        assert check_operator_monotonicity(data, 50, rng_seed=4).passed

    def test_pair_count_must_be_positive(self, power_spec, make_problem):
        with pytest.raises(ValidationError):
            check_operator_monotonicity(make_problem(power_spec), 0)


class TestRegularization:
    def test_gradient_matches_energy(self, power_spec, make_problem):
        """regularization_gradient is the derivative of regularization_energy."""
        data = make_problem(power_spec, epsilon=0.1)
        grid = power_spec.grid
        x = grid.coordinates[0]
        u = ScalarField(grid, 0.5 + np.sin(2 * np.pi * x))
        v = ScalarField(grid, np.sin(2 * np.pi * x))
        step = 1e-5

        plus = regularization_energy(
            data, ScalarField(grid, u.values + step * v.values)
        )
        minus = regularization_energy(
            data, ScalarField(grid, u.values - step * v.values)
        )
        directional = float(
            np.sum(regularization_gradient(data, u).values * v.values)
            * grid.cell_volume
        )
        assert directional == pytest.approx((plus - minus) / (2 * step), rel=1e-6)

    def test_coercivity_ratio_grows(self, power_spec, make_problem):
        """Pairing over distance increases along a ray in the u direction."""
        data = make_problem(power_spec, epsilon=0.1)
        grid = power_spec.grid
        z_ref = MFGState.constant(grid, 1.0, 1.0)
        w = MFGState.from_arrays(
            grid, np.zeros(grid.shape), np.cos(2 * np.pi * grid.coordinates[0])
        )
        ratios = coercivity_profile(data, z_ref, w)
        assert all(b > a for a, b in pairwise(ratios))


class TestWeakCertificate:
    def test_zero_at_the_solution(self, power_spec, make_problem):
        """Testing (1, 1) with w = (1, 0) gives exactly 0."""
        data = make_problem(power_spec)
        grid = power_spec.grid
        cert = weak_solution_certificate(
            data, MFGState.constant(grid, 1.0, 1.0), [MFGState.constant(grid, 1.0, 0.0)]
        )
        assert cert.min_value == 0.0
        assert cert.witness == 0
        assert cert.passed(1e-12)

    def test_exact_solution_passes_battery(self, power_spec, make_problem):
        """The exact solution satisfies the certificate on the standard battery."""
        data = make_problem(power_spec)
        grid = power_spec.grid
        battery = standard_test_battery(grid)
        assert len(battery) == 16
        assert all(w.m.min() > 0 for w in battery)
        cert = weak_solution_certificate(
            data, MFGState.constant(grid, 1.0, 1.0), battery
        )
        assert cert.passed(1e-10)

    def test_rejects_vacuum_test_pair(self, power_spec, make_problem):
        data = make_problem(power_spec)
        grid = power_spec.grid
        with pytest.raises(ValidationError):
            weak_solution_certificate(
                data,
                MFGState.constant(grid, 1.0, 1.0),
                [MFGState.constant(grid, 0.0, 0.0)],
            )

    def test_needs_test_pairs(self, power_spec, make_problem):
        z = MFGState.constant(power_spec.grid, 1.0, 1.0)
        with pytest.raises(ValidationError):
            weak_solution_certificate(make_problem(power_spec), z, [])
