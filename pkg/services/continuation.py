"""Epsilon continuation with warm starts and a priori monitoring.

Each stage solves the problem with regularization eps_k = eps0 * ratio^k and
density floor delta(eps_k), starting from the previous stage's solution. The
final iterate is classified as a strong-solution candidate (all residual
targets met), a weak-solution candidate (the weak certificate holds on the
standard test battery), or unconverged.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field, replace
from enum import StrEnum
from itertools import pairwise

import numpy as np

from services.exceptions import SolverFailure, ValidationError
from services.grid import integral, lp_norm_pow, sobolev_norm_pow
from services.hamiltonian import Family
from services.mfg_operator import (
    MFGState,
    ProblemData,
    WeakCertificate,
    hj_residual,
    regularization_gradient,
    standard_test_battery,
    transport_residual,
    weak_solution_certificate,
)
from services.run_log import RunLogger
from services.vi_solver import (
    SolverConfig,
    TraceRow,
    extragradient_solve,
    state_distance,
)

logger = logging.getLogger(__name__)

DEFAULT_FLOOR_MIN = 1e-6
DEFAULT_ALARM_RATIO = 10.0


class Verdict(StrEnum):
    STRONG = "strong-candidate"
    WEAK = "weak-candidate"
    UNCONVERGED = "unconverged"


@dataclass(frozen=True)
class TargetTolerances:
    hj_pos: float = 1e-4
    hj_support: float = 1e-4
    transport_l1: float = 1e-4
    mass_gap: float = 1e-5

    def __post_init__(self) -> None:
        bad = [name for name, value in asdict(self).items() if not value > 0]
        if bad:
            raise ValidationError(
                [f"target tolerance {name} must be > 0" for name in bad]
            )


@dataclass(frozen=True)
class ContinuationSchedule:
    """Geometric epsilon schedule and the floor rule delta(eps).

    Without a custom `floor_rule` the congestion family uses
    delta(eps) = max(floor_min, eps) and the other families delta = 0.
    """

    eps0: float = 0.1
    ratio: float = 0.1
    stages: int = 4
    targets: TargetTolerances = field(default_factory=TargetTolerances)
    floor_min: float = DEFAULT_FLOOR_MIN
    weak_tol: float = 1e-5
    floor_rule: Callable[[float], float] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        errors = []
        if not 0 < self.eps0 <= 1:
            errors.append(f"eps0 must lie in (0, 1], got {self.eps0}")
        if not 0 < self.ratio < 1:
            errors.append(f"ratio must lie in (0, 1), got {self.ratio}")
        if self.stages < 1:
            errors.append(f"stages must be >= 1, got {self.stages}")
        if not self.floor_min > 0:
            errors.append(f"floor_min must be > 0, got {self.floor_min}")
        if not self.weak_tol > 0:
            errors.append(f"weak_tol must be > 0, got {self.weak_tol}")
        if errors:
            raise ValidationError(errors)

    def epsilons(self) -> list[float]:
        return [self.eps0 * self.ratio**k for k in range(self.stages)]

    def floor(self, family: Family, epsilon: float) -> float:
        if self.floor_rule is not None:
            return float(self.floor_rule(epsilon))
        if family is Family.CONGESTION:
            return max(self.floor_min, epsilon)
        return 0.0

    def floors(self, family: Family) -> list[float]:
        """delta(eps_k) per stage; raises if the rule ever increases."""
        values = [self.floor(family, eps) for eps in self.epsilons()]
        if any(later > earlier for earlier, later in pairwise(values)):
            raise ValidationError("floor rule must be non-increasing in epsilon")
        if any(value < 0 for value in values):
            raise ValidationError("floor rule must be non-negative")
        return values


@dataclass(frozen=True)
class StageRecord:
    """Residuals, a priori norm and floor statistics of one stage."""

    stage: int
    epsilon: float
    delta: float
    iterations: int
    natural_residual: float
    hj_max_pos: float
    hj_max_on_support: float
    transport_l1: float
    mass_gap: float
    mass_defect: float
    penalty_mass: float
    regularization_l1: float
    apriori: float
    min_m: float
    floor_fraction: float
    mean_m: float
    drift: float | None
    converged: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AprioriTrack:
    records: list[StageRecord] = field(default_factory=list)

    @property
    def apriori_values(self) -> list[float]:
        return [record.apriori for record in self.records]

    @property
    def total_iterations(self) -> int:
        return sum(record.iterations for record in self.records)

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class AprioriAlarm:
    max_over_min_ratio: float
    alarm: bool


def apriori_monitor(
    track: AprioriTrack | Sequence[float], threshold: float = DEFAULT_ALARM_RATIO
) -> AprioriAlarm:
    """Ratio of the largest to the smallest a priori norm across stages.

    A single stage is padded with itself, giving ratio 1.
    """
    if isinstance(track, AprioriTrack):
        values = track.apriori_values
    else:
        values = [float(value) for value in track]
    if not values:
        raise ValidationError("a priori monitor needs at least one stage")
    if len(values) == 1:
        values = values * 2
    if not all(np.isfinite(values)):
        return AprioriAlarm(float("inf"), True)

    low, high = min(values), max(values)
    ratio = high / low if low > 0 else float("inf")
    return AprioriAlarm(ratio, ratio > threshold)


@dataclass
class ContinuationResult:
    final: MFGState
    track: AprioriTrack
    verdict: Verdict
    weak_certificate: WeakCertificate
    final_data: ProblemData
    schedule: ContinuationSchedule
    trace: list[tuple[int, TraceRow]] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        monitor = apriori_monitor(self.track)
        return {
            "verdict": str(self.verdict),
            "schedule": {
                "eps0": self.schedule.eps0,
                "ratio": self.schedule.ratio,
                "stages": self.schedule.stages,
                "epsilons": self.schedule.epsilons(),
                "targets": asdict(self.schedule.targets),
            },
            "stages": [record.to_dict() for record in self.track.records],
            "certificates": {
                "weak_min": self.weak_certificate.min_value,
                "weak_witness": self.weak_certificate.witness,
                "weak_tol": self.schedule.weak_tol,
            },
            "apriori": {
                "max_over_min_ratio": monitor.max_over_min_ratio,
                "alarm": monitor.alarm,
            },
            "total_iterations": self.track.total_iterations,
        }


def stage_data(template: ProblemData, epsilon: float, delta: float) -> ProblemData:
    """Problem data of one stage; the weak family always runs on the envelope."""
    data = template.with_stage(epsilon, delta)
    if template.spec.family is Family.WEAK:
        data = replace(data, use_envelope=True)
    return data


def meets_targets(record: StageRecord, targets: TargetTolerances) -> bool:
    return (
        record.hj_max_pos <= targets.hj_pos
        and record.hj_max_on_support <= targets.hj_support
        and record.transport_l1 <= targets.transport_l1
        and abs(record.mass_gap) <= targets.mass_gap
    )


def record_stage(
    stage: int,
    data: ProblemData,
    z: MFGState,
    iterations: int,
    residual: float,
    previous: MFGState | None,
    targets: TargetTolerances,
) -> StageRecord:
    hj = hj_residual(data, z)
    transport = transport_residual(data, z)
    penalty = regularization_gradient(data, z.u)
    exponents = data.exponents
    assert exponents is not None

    m = z.m.values
    record = StageRecord(
        stage=stage,
        epsilon=data.epsilon,
        delta=data.m_floor,
        iterations=iterations,
        natural_residual=residual,
        hj_max_pos=hj.max_pos,
        hj_max_on_support=hj.max_on_support,
        transport_l1=transport.l1,
        mass_gap=transport.mass_gap,
        mass_defect=transport.mass_defect,
        penalty_mass=transport.penalty_mass,
        regularization_l1=lp_norm_pow(penalty, 1.0),
        apriori=lp_norm_pow(z.m, exponents.beta_bar)
        + sobolev_norm_pow(z.u, exponents.gamma_bar),
        min_m=float(m.min()),
        floor_fraction=float(np.mean(m <= data.m_floor)) if data.m_floor > 0 else 0.0,
        mean_m=integral(z.m),
        drift=state_distance(z, previous) if previous is not None else None,
        converged=False,
    )
    return replace(record, converged=meets_targets(record, targets))


def run_continuation(
    template: ProblemData,
    schedule: ContinuationSchedule,
    solver_cfg: SolverConfig,
    z0: MFGState | None = None,
    warm_start: bool = True,
    run_logger: RunLogger | None = None,
) -> ContinuationResult:
    """Solve a decreasing sequence of regularized problems.

    Args:
        template: Problem data; its epsilon and floor are overridden per stage.
        schedule: Epsilon schedule, floor rule and verdict targets.
        solver_cfg: Extragradient settings shared by all stages.
        z0: First start (default m = 1, u = 0).
        warm_start: Start each stage from the previous solution; when False
            every stage restarts from z0.
        run_logger: Optional JSON-line run log.

    Returns:
        ContinuationResult with the final iterate, per-stage track and verdict.

    Raises:
        SolverFailure: If a stage does not converge; `track` on the exception
            holds the stages finished before it.
    """
    grid = template.grid
    family = template.spec.family
    start = z0 if z0 is not None else MFGState.constant(grid, 1.0, 0.0)
    floors = schedule.floors(family)

    track = AprioriTrack()
    trace: list[tuple[int, TraceRow]] = []
    previous: MFGState | None = None
    data = template

    stages = zip(schedule.epsilons(), floors, strict=True)
    for stage, (epsilon, delta) in enumerate(stages):
        data = stage_data(template, epsilon, delta)
        initial = previous if warm_start and previous is not None else start

        try:
            result = extragradient_solve(data, initial, solver_cfg)
        except SolverFailure as exc:
            exc.track = track
            trace.extend((stage, row) for row in exc.trace)
            logger.error(f"stage {stage} (eps={epsilon:g}) failed: {exc}")
            if run_logger:
                run_logger.log_action(
                    "stage",
                    details={"stage": stage, "epsilon": epsilon, "delta": delta},
                    success=False,
                    error_message=str(exc),
                )
            raise

        record = record_stage(
            stage,
            data,
            result.z,
            result.stats.iterations,
            result.stats.final_residual,
            previous,
            schedule.targets,
        )
        track.records.append(record)
        trace.extend((stage, row) for row in result.trace)
        previous = result.z

        logger.info(
            f"stage {stage}: eps={epsilon:g} delta={delta:g} "
            f"iterations={record.iterations} residual={record.natural_residual:.2e} "
            f"apriori={record.apriori:.4g}"
        )
        if run_logger:
            run_logger.log_action("stage", details=record.to_dict())

    assert previous is not None
    certificate = weak_solution_certificate(data, previous, standard_test_battery(grid))
    if meets_targets(track.records[-1], schedule.targets):
        verdict = Verdict.STRONG
    elif certificate.passed(schedule.weak_tol):
        verdict = Verdict.WEAK
    else:
        verdict = Verdict.UNCONVERGED

    logger.info(f"continuation verdict: {verdict}")
    return ContinuationResult(
        final=previous,
        track=track,
        verdict=verdict,
        weak_certificate=certificate,
        final_data=data,
        schedule=schedule,
        trace=trace,
    )
