"""Tests for the epsilon continuation driver and its verdicts."""

from pathlib import Path

import numpy as np
import pytest

from services.continuation import (
    AprioriTrack,
    ContinuationSchedule,
    TargetTolerances,
    Verdict,
    apriori_monitor,
    meets_targets,
    record_stage,
    run_continuation,
    stage_data,
)
from services.exceptions import SolverFailure, ValidationError
from services.grid import ScalarField, TorusGrid
from services.hamiltonian import Family, HamiltonianSpec
from services.mfg_operator import MFGState, ProblemData
from services.run_log import RunLogger, read_run_log
from services.runs import (
    build_grid,
    build_problem,
    build_schedule,
    build_solver_config,
    build_spec,
)
from services.validation import load_config
from services.vi_solver import SolverConfig

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class TestSchedule:
    def test_geometric_epsilons(self):
        schedule = ContinuationSchedule(eps0=0.1, ratio=0.1, stages=4)
        np.testing.assert_allclose(schedule.epsilons(), [1e-1, 1e-2, 1e-3, 1e-4])

    def test_congestion_floor_follows_epsilon(self):
        """delta(eps) = max(floor_min, eps) for congestion, 0 otherwise."""
        schedule = ContinuationSchedule(eps0=1e-4, ratio=0.01, stages=3)
        assert schedule.floors(Family.CONGESTION) == pytest.approx([1e-4, 1e-6, 1e-6])
        assert schedule.floors(Family.POWER) == [0.0, 0.0, 0.0]

    def test_increasing_floor_rule_rejected(self):
        schedule = ContinuationSchedule(floor_rule=lambda eps: 1.0 / eps)
        with pytest.raises(ValidationError, match="non-increasing"):
            schedule.floors(Family.POWER)

    @pytest.mark.parametrize(
        "kwargs",
        [{"eps0": 0.0}, {"eps0": 2.0}, {"ratio": 1.0}, {"stages": 0}],
    )
    def test_invalid_schedules(self, kwargs):
        with pytest.raises(ValidationError):
            ContinuationSchedule(**kwargs)

    def test_targets_must_be_positive(self):
        with pytest.raises(ValidationError):
            TargetTolerances(hj_pos=0.0)


class TestAprioriMonitor:
    def test_single_stage_ratio_is_one(self):
        monitor = apriori_monitor([3.0])
        assert monitor.max_over_min_ratio == 1.0
        assert not monitor.alarm

    def test_bounded_sequence(self):
        assert not apriori_monitor([1.0, 2.0, 1.5]).alarm

    def test_blow_up_raises_alarm(self):
        monitor = apriori_monitor([1.0, 20.0])
        assert monitor.max_over_min_ratio == 20.0
        assert monitor.alarm

    def test_non_finite_value_raises_alarm(self):
        assert apriori_monitor([1.0, float("inf")]).alarm

    def test_empty_track_rejected(self):
        with pytest.raises(ValidationError):
            apriori_monitor(AprioriTrack())


class TestStages:
    def test_weak_family_runs_on_envelope(self, grid_1d, make_spec, make_problem):
        spec = make_spec(grid_1d, family="weak", g=0.5, h_kernel="exp")
        data = stage_data(make_problem(spec), 0.01, 0.0)
        assert data.use_envelope
        assert data.epsilon == 0.01

    def test_record_of_exact_solution_meets_targets(self, power_spec, make_problem):
        data = make_problem(power_spec)
        z = MFGState.constant(power_spec.grid, 1.0, 1.0)
        record = record_stage(0, data, z, 0, 0.0, None, TargetTolerances())
        assert record.converged
        assert meets_targets(record, TargetTolerances())
        assert record.drift is None
        assert record.mean_m == pytest.approx(1.0)
        # ||1||_2^2 + ||1||_{W^{1,4}}^4
        assert record.apriori == pytest.approx(2.0)

    def test_record_flags_hj_defect(self, power_spec, make_problem):
        data = make_problem(power_spec)
        z = MFGState.constant(power_spec.grid, 1.0, 0.0)
        record = record_stage(1, data, z, 5, 1.0, z, TargetTolerances())
        assert not record.converged
        assert record.hj_max_on_support == pytest.approx(1.0)
        assert record.drift == 0.0


class TestRunContinuation:
    def test_constant_problem_gives_strong_verdict(
        self, power_spec, make_problem, tmp_path
    ):
        """Constant data: every stage lands on the constant solution."""
        schedule = ContinuationSchedule(eps0=0.1, ratio=0.1, stages=2)
        run_logger = RunLogger(str(tmp_path))
        result = run_continuation(
            make_problem(power_spec), schedule, SolverConfig(), run_logger=run_logger
        )
        run_logger.close()
        assert result.verdict is Verdict.STRONG
        assert len(result.track) == 2
        for record in result.track.records:
            c = record.mean_m
            assert c + record.epsilon * c**3 == pytest.approx(1.0, abs=1e-7)
        assert result.track.records[1].drift is not None

        entries = read_run_log(str(tmp_path / "run.log"))
        assert [entry["action"] for entry in entries] == ["stage", "stage"]

        summary = result.to_dict()
        assert summary["verdict"] == "strong-candidate"
        assert summary["schedule"]["epsilons"] == pytest.approx([0.1, 0.01])
        assert not summary["apriori"]["alarm"]

    def test_cold_start_reaches_the_same_answer(self, power_spec, make_problem):
        schedule = ContinuationSchedule(eps0=0.1, ratio=0.5, stages=2)
        warm = run_continuation(make_problem(power_spec), schedule, SolverConfig())
        cold = run_continuation(
            make_problem(power_spec), schedule, SolverConfig(), warm_start=False
        )
        np.testing.assert_allclose(warm.final.m.values, cold.final.m.values, atol=1e-6)

    def test_stage_failure_carries_track(self, power_spec, make_problem):
        schedule = ContinuationSchedule(stages=2)
        with pytest.raises(SolverFailure) as excinfo:
            run_continuation(
                make_problem(power_spec), schedule, SolverConfig(max_iter=2)
            )
        assert isinstance(excinfo.value.track, AprioriTrack)
        assert len(excinfo.value.track) == 0


@pytest.mark.slow
class TestBenchmarks:
    def test_exact_solution_reproduced(self):
        """V = 0, H = |p|^2 - m on n = 64: the iterate approaches (1, 1)."""
        grid = TorusGrid(1, 64)
        spec_data = _power_problem(grid, ScalarField.zeros(grid))
        schedule = ContinuationSchedule(eps0=0.1, ratio=0.1, stages=4)
        result = run_continuation(spec_data, schedule, SolverConfig())

        assert result.verdict is Verdict.STRONG
        assert np.max(np.abs(result.final.m.values - 1.0)) <= 1e-3
        assert np.max(np.abs(result.final.u.values - 1.0)) <= 1e-2
        assert apriori_monitor(result.track).max_over_min_ratio <= 10.0

    def test_smooth_potential_certified(self):
        """V = 0.5 + 0.2 sin(2 pi x) on n = 128 meets every residual target."""
        grid = TorusGrid(1, 128)
        x = grid.coordinates[0]
        V = ScalarField(grid, 0.5 + 0.2 * np.sin(2 * np.pi * x))
        schedule = ContinuationSchedule(eps0=0.1, ratio=0.1, stages=4)
        result = run_continuation(_power_problem(grid, V), schedule, SolverConfig())

        final = result.track.records[-1]
        assert result.verdict is Verdict.STRONG
        assert final.hj_max_pos <= 1e-4
        assert final.hj_max_on_support <= 1e-4
        assert final.transport_l1 <= 1e-4
        assert abs(final.mass_gap) <= 1e-5
        for record in result.track.records:
            # int (m - 1) = -eps int |u|^(gb - 2) u
            assert abs(record.mass_defect + record.penalty_mass) <= 1e-8
        assert not apriori_monitor(result.track).alarm

    def test_congestion_config(self):
        """Every stage keeps m >= delta(eps_k) = max(floor_min, eps_k)."""
        cfg = load_config(str(CONFIG_DIR / "congestion.yaml"))
        schedule = build_schedule(cfg)
        template = build_problem(cfg, build_spec(cfg, build_grid(cfg)))
        result = run_continuation(template, schedule, build_solver_config(cfg))

        assert result.verdict is Verdict.STRONG
        records = result.track.records
        assert len(records) == 4
        for record, eps in zip(records, schedule.epsilons(), strict=True):
            assert record.delta == pytest.approx(max(1e-6, eps))
            assert record.min_m >= record.delta
        monitor = apriori_monitor(result.track)
        assert monitor.max_over_min_ratio <= 10.0
        assert not monitor.alarm

    def test_weak_config(self):
        """The envelope run on a 2-D grid passes the weak-solution battery."""
        cfg = load_config(str(CONFIG_DIR / "weak.yaml"))
        template = build_problem(cfg, build_spec(cfg, build_grid(cfg)))
        assert template.use_envelope
        result = run_continuation(
            template, build_schedule(cfg), build_solver_config(cfg)
        )

        assert result.verdict is Verdict.STRONG
        assert result.weak_certificate.min_value >= -1e-5
        assert apriori_monitor(result.track).max_over_min_ratio <= 10.0


def _power_problem(grid: TorusGrid, V: ScalarField) -> ProblemData:
    spec = HamiltonianSpec(
        family=Family.POWER,
        alpha=2.0,
        beta=1.0,
        a=ScalarField.constant(grid, 1.0),
        b=ScalarField.constant(grid, 1.0),
    )
    return ProblemData(V=V, spec=spec)
