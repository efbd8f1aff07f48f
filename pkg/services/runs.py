"""Run orchestration behind the CLI subcommands.

Each `run_*` function takes a validated `RunConfig` and an output directory,
does the work, writes its artifacts and a run log there, and returns the
in-memory result. Failures are written out before they propagate, so a
partial report exists for every run that got past validation.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Any

import numpy as np

from services.continuation import (
    ContinuationResult,
    ContinuationSchedule,
    TargetTolerances,
    Verdict,
    apriori_monitor,
    meets_targets,
    record_stage,
    run_continuation,
)
from services.exceptions import CertificateViolation, SolverFailure, ValidationError
from services.grid import TorusGrid
from services.hamiltonian import (
    Family,
    GrowthCertificate,
    HamiltonianSpec,
    Kernel,
    SampleReport,
    applicable_inequalities,
    certified_constant,
    check_growth,
    check_hierarchy,
    check_monotonicity,
    check_structure,
    eval_H,
)
from services.infconv import (
    EnvelopeSpec,
    check_envelope_bounds,
    check_envelope_monotonicity,
    default_box_radius,
    envelope,
    envelope_certificate,
    envelope_oracle,
    oracle_resolution,
)
from services.io import (
    read_field_csv,
    write_field_csv,
    write_json,
    write_table_csv,
    write_trace_csv,
)
from services.mfg_operator import (
    MFGState,
    ProblemData,
    check_operator_monotonicity,
    hj_residual,
    standard_test_battery,
    transport_residual,
    weak_solution_certificate,
)
from services.profiles import build_profile
from services.run_log import RunLogger
from services.validation import RunConfig, config_to_dict
from services.vi_solver import SolverConfig, natural_residual

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
FIELD_M_FILE = "fields_m.csv"
FIELD_U_FILE = "fields_u.csv"
TRACE_FILE = "residual_trace.csv"
CHECK_REPORT_FILE = "check_report.json"
INFCONV_TABLE_FILE = "infconv_table.csv"
SWEEP_FILE = "sweep.csv"
DIAGNOSE_REPORT_FILE = "diagnose_report.json"

OPERATOR_EPSILONS = (0.0, 0.1)

INFCONV_COLUMNS = ("p", "m", "epsilon", "q_star", "H_eps", "H", "oracle_gap")
SWEEP_COLUMNS = (
    "n",
    "epsilon",
    "status",
    "verdict",
    "iterations",
    "natural_residual",
    "hj_max_pos",
    "hj_max_on_support",
    "transport_l1",
    "mass_gap",
    "apriori",
    "error",
)


# === Builders ===
def build_grid(cfg: RunConfig, n: int | None = None) -> TorusGrid:
    return TorusGrid(cfg.grid.dim, n if n is not None else cfg.grid.n)


def build_spec(cfg: RunConfig, grid: TorusGrid, strict: bool = True) -> HamiltonianSpec:
    """Hamiltonian from the config's family, exponents and profiles."""
    section = cfg.hamiltonian
    return HamiltonianSpec(
        family=Family(section.family),
        alpha=section.alpha,
        beta=section.beta,
        a=build_profile(grid, section.a),
        b=build_profile(grid, section.b),
        tau=section.tau,
        g=build_profile(grid, section.g) if section.g is not None else None,
        h_kernel=Kernel(section.h_kernel) if section.h_kernel else None,
        strict=strict,
    )


def build_schedule(cfg: RunConfig) -> ContinuationSchedule:
    section = cfg.schedule
    return ContinuationSchedule(
        eps0=section.eps0,
        ratio=section.ratio,
        stages=section.stages,
        targets=TargetTolerances(**asdict(section.targets)),
        floor_min=section.floor_min,
        weak_tol=section.weak_tol,
    )


def build_problem(
    cfg: RunConfig, spec: HamiltonianSpec, epsilon: float | None = None
) -> ProblemData:
    """Problem data at `epsilon` (default: the first stage) with its floor."""
    schedule = build_schedule(cfg)
    eps = schedule.eps0 if epsilon is None else epsilon
    return ProblemData(
        V=build_profile(spec.grid, cfg.potential),
        spec=spec,
        epsilon=eps,
        use_envelope=spec.family is Family.WEAK and eps > 0,
        m_floor=schedule.floor(spec.family, eps),
    )


def build_solver_config(cfg: RunConfig) -> SolverConfig:
    return SolverConfig(**asdict(cfg.solver), rng_seed=cfg.seed)


def _report_header(cfg: RunConfig, command: str) -> dict[str, Any]:
    return {"command": command, "seed": cfg.seed, "config": config_to_dict(cfg)}


# === Solve ===
def _final_summary(result: ContinuationResult) -> dict[str, Any]:
    z, data = result.final, result.final_data
    transport = transport_residual(data, z)
    return {
        "m_min": z.m.min(),
        "m_max": z.m.max(),
        "u_min": z.u.min(),
        "u_max": z.u.max(),
        "mass_defect": transport.mass_defect,
        "penalty_mass": transport.penalty_mass,
        "mass_identity_gap": transport.mass_defect + transport.penalty_mass,
    }


def run_solve(
    cfg: RunConfig, out_dir: str, resource: str | None = None
) -> ContinuationResult:
    """Full continuation run writing report, fields, trace and run log.

    Raises:
        SolverFailure: If a stage fails; a partial report with the finished
            stages and the best iterate of the failed stage is written first.
    """
    os.makedirs(out_dir, exist_ok=True)
    run_logger = RunLogger(out_dir, resource)
    grid = build_grid(cfg)
    spec = build_spec(cfg, grid)
    schedule = build_schedule(cfg)
    template = build_problem(cfg, spec)
    report = _report_header(cfg, "solve")

    try:
        result = run_continuation(
            template, schedule, build_solver_config(cfg), run_logger=run_logger
        )
    except SolverFailure as exc:
        track = exc.track
        report.update(
            {
                "verdict": "failed",
                "error": str(exc),
                "best_residual": exc.residual,
                "stages": [r.to_dict() for r in track.records] if track else [],
            }
        )
        if isinstance(exc.best_state, MFGState):
            write_field_csv(os.path.join(out_dir, FIELD_M_FILE), exc.best_state.m)
            write_field_csv(os.path.join(out_dir, FIELD_U_FILE), exc.best_state.u)
        stage = len(track) if track is not None else 0
        write_trace_csv(
            os.path.join(out_dir, TRACE_FILE), ((stage, row) for row in exc.trace)
        )
        write_json(os.path.join(out_dir, REPORT_FILE), report)
        run_logger.log_action("solve", success=False, error_message=str(exc))
        run_logger.close()
        raise

    report.update(result.to_dict())
    report["final"] = _final_summary(result)
    write_field_csv(os.path.join(out_dir, FIELD_M_FILE), result.final.m)
    write_field_csv(os.path.join(out_dir, FIELD_U_FILE), result.final.u)
    write_trace_csv(os.path.join(out_dir, TRACE_FILE), result.trace)
    write_json(os.path.join(out_dir, REPORT_FILE), report)

    run_logger.log_action(
        "solve",
        details={
            "verdict": str(result.verdict),
            "iterations": result.track.total_iterations,
        },
        success=result.verdict is not Verdict.UNCONVERGED,
    )
    run_logger.close()
    logger.info(f"solve finished: {result.verdict}, outputs in {out_dir}")
    return result


# === Check ===
def _signs_ok(spec: HamiltonianSpec) -> bool:
    g_ok = spec.g is None or spec.g.min() >= 0
    return spec.a.min() > 0 and spec.b.min() > 0 and g_ok


def _failed(reports: list[SampleReport]) -> SampleReport | None:
    return next((report for report in reports if not report.passed), None)


def run_check(
    cfg: RunConfig, out_dir: str, resource: str | None = None
) -> dict[str, Any]:
    """Hamiltonian certificate battery; writes check_report.json.

    Sign conditions on the coefficients are not enforced here so that a
    broken Hamiltonian is caught by the samplers rather than by validation.

    Raises:
        CertificateViolation: If any sampled inequality fails; carries the
            first failing witness and the full report.
    """
    os.makedirs(out_dir, exist_ok=True)
    run_logger = RunLogger(out_dir, resource)
    check, seed = cfg.check, cfg.seed
    grid = build_grid(cfg)
    spec = build_spec(cfg, grid, strict=False)
    family = spec.family
    m_floor = check.m_floor
    if family is Family.CONGESTION:
        m_floor = max(m_floor, cfg.schedule.floor_min)

    sampled: list[SampleReport] = []
    hmon = check_monotonicity(spec, check.samples, m_floor, seed)
    sampled.append(hmon)

    growth = []
    for ineq in applicable_inequalities(spec):
        C = check.constants.get(str(ineq), certified_constant(spec, ineq))
        growth_report = check_growth(
            spec, GrowthCertificate(C, ineq), check.samples, seed, m_floor
        )
        growth.append({"C": C, **growth_report.to_dict()})
        sampled.append(growth_report)

    hierarchy = check_hierarchy(spec, check.samples, seed)
    structure = check_structure(spec, check.samples, m_floor, seed)
    sampled += [hierarchy, structure.density_monotone, structure.momentum_convex]

    envelope_reports: list[dict[str, Any]] = []
    if family in (Family.POWER, Family.WEAK) and _signs_ok(spec):
        cert = envelope_certificate(spec)
        for eps in check.envelope_epsilons:
            env_spec = EnvelopeSpec(spec, eps)
            bounds = check_envelope_bounds(env_spec, cert, check.samples, seed, m_floor)
            env_hmon = check_envelope_monotonicity(
                env_spec, check.samples, m_floor, seed
            )
            envelope_reports.append(
                {
                    "epsilon": eps,
                    "C": cert.C,
                    "bounds": bounds.to_dict(),
                    "monotonicity": env_hmon.to_dict(),
                }
            )
            sampled += [*bounds.bounds.values(), env_hmon]
    elif family in (Family.POWER, Family.WEAK):
        logger.warning("coefficient signs are broken, skipping envelope checks")

    pairings = []
    V = build_profile(grid, cfg.potential)
    for eps in OPERATOR_EPSILONS:
        data = ProblemData(
            V=V,
            spec=spec,
            epsilon=eps,
            m_floor=m_floor if family is Family.CONGESTION else 0.0,
        )
        pairing = check_operator_monotonicity(data, check.operator_pairs, seed)
        pairings.append(pairing.to_dict())
        sampled.append(pairing)

    failed = _failed(sampled)
    structure_ok = structure.vacuum_flux_continuous
    report = _report_header(cfg, "check")
    report.update(
        {
            "family": str(family),
            "hmon": hmon.to_dict(),
            "growth": growth,
            "hierarchy": hierarchy.to_dict(),
            "structure": structure.to_dict(),
            "envelope": envelope_reports,
            "operator_pairing": pairings,
            "passed": failed is None and structure_ok,
        }
    )
    write_json(os.path.join(out_dir, CHECK_REPORT_FILE), report)

    if failed is not None or not structure_ok:
        name = failed.name if failed is not None else "vacuum_flux_continuity"
        witness = failed.witness if failed is not None else {}
        run_logger.log_action(
            "check", details={"failed": name}, success=False, error_message=name
        )
        run_logger.close()
        raise CertificateViolation(
            f"certificate '{name}' violated", witness=witness, report=report
        )

    run_logger.log_action("check", details={"samples": check.samples})
    run_logger.close()
    return report


# === Infimal-convolution table ===
def run_infconv_table(cfg: RunConfig, out_dir: str) -> list[tuple]:
    """Envelope value, minimizer and oracle gap over the configured (p, m, eps).

    Momentum points lie on the first axis at node 0.
    """
    os.makedirs(out_dir, exist_ok=True)
    table = cfg.infconv_table
    grid = build_grid(cfg)
    spec = build_spec(cfg, grid)

    rows = []
    for eps in table.epsilons:
        env_spec = EnvelopeSpec(spec, eps)
        for m in table.m_values:
            for p_val in table.p_values:
                p = np.zeros(grid.dim)
                p[0] = p_val
                env = envelope(env_spec, 0, p, m)
                radius = default_box_radius(env_spec, 0, p, m)
                oracle = envelope_oracle(env_spec, 0, p, m, radius, table.oracle_grid_n)
                resolution = oracle_resolution(
                    env_spec, 0, p, m, radius, table.oracle_grid_n
                )
                gap = oracle - float(env.value)
                if gap > resolution or gap < -1e-9 * max(1.0, abs(oracle)):
                    logger.warning(
                        f"oracle gap {gap:.3e} outside [0, {resolution:.3e}] "
                        f"at p={p_val:g}, m={m:g}, eps={eps:g}"
                    )
                rows.append(
                    (
                        float(p_val),
                        float(m),
                        float(eps),
                        float(env.q_star[0]),
                        float(env.value),
                        float(eval_H(spec, 0, p, m)),
                        gap,
                    )
                )

    write_table_csv(os.path.join(out_dir, INFCONV_TABLE_FILE), INFCONV_COLUMNS, rows)
    return rows


# === Sweep ===
@dataclass(frozen=True)
class SweepCase:
    n: int
    epsilon: float


def _sweep_case(cfg: RunConfig, case: SweepCase) -> tuple:
    """One single-stage solve at (n, epsilon); failures become a table row."""
    try:
        grid = build_grid(cfg, case.n)
        spec = build_spec(cfg, grid)
        schedule = replace(build_schedule(cfg), eps0=case.epsilon, stages=1)
        template = build_problem(cfg, spec, case.epsilon)
        result = run_continuation(template, schedule, build_solver_config(cfg))
    except (SolverFailure, ValidationError) as exc:
        logger.warning(f"sweep case n={case.n} eps={case.epsilon:g} failed: {exc}")
        blanks = ("",) * (len(SWEEP_COLUMNS) - 4)
        return (case.n, case.epsilon, "failed", *blanks, str(exc))

    record = result.track.records[-1]
    return (
        case.n,
        case.epsilon,
        "ok",
        str(result.verdict),
        record.iterations,
        record.natural_residual,
        record.hj_max_pos,
        record.hj_max_on_support,
        record.transport_l1,
        record.mass_gap,
        record.apriori,
        "",
    )


def run_sweep(
    cfg: RunConfig, out_dir: str, threads: int = 1, resource: str | None = None
) -> list[tuple]:
    """Independent (n, epsilon) cases on a thread pool; writes sweep.csv.

    Rows come back in configuration order regardless of completion order.
    """
    if threads < 1:
        raise ValidationError(f"thread count must be >= 1, got {threads}")
    os.makedirs(out_dir, exist_ok=True)
    run_logger = RunLogger(out_dir, resource)
    cases = [
        SweepCase(n, eps) for n in cfg.sweep.grid_sizes for eps in cfg.sweep.epsilons
    ]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        rows = list(pool.map(lambda case: _sweep_case(cfg, case), cases))

    write_table_csv(os.path.join(out_dir, SWEEP_FILE), SWEEP_COLUMNS, rows)
    failures = sum(1 for row in rows if row[2] == "failed")
    run_logger.log_action(
        "sweep",
        details={"cases": len(cases), "failures": failures, "threads": threads},
        success=failures == 0,
    )
    run_logger.close()
    return rows


# === Diagnose ===
def load_state(m_path: str, u_path: str) -> MFGState:
    """Read an (m, u) pair from two grid CSV dumps on the same grid."""
    m, u = read_field_csv(m_path), read_field_csv(u_path)
    if m.grid != u.grid:
        raise ValidationError(
            f"m and u files describe different grids ({m.grid} vs {u.grid})"
        )
    return MFGState(m, u)


def run_diagnose(
    cfg: RunConfig,
    m_path: str,
    u_path: str,
    out_dir: str,
    epsilon: float = 0.0,
    resource: str | None = None,
) -> dict[str, Any]:
    """Residuals and certificates of an externally supplied state.

    The grid comes from the field files; the Hamiltonian, potential and
    targets come from the config.
    """
    os.makedirs(out_dir, exist_ok=True)
    run_logger = RunLogger(out_dir, resource)
    z = load_state(m_path, u_path)
    spec = build_spec(cfg, z.grid)
    data = build_problem(cfg, spec, epsilon)
    if not z.admissible(data.m_floor):
        raise ValidationError(
            f"density drops to {z.m.min():.3e}, below the floor {data.m_floor:g}"
        )

    schedule = build_schedule(cfg)
    record = record_stage(
        0, data, z, 0, natural_residual(data, z), None, schedule.targets
    )
    hj = hj_residual(data, z)
    certificate = weak_solution_certificate(data, z, standard_test_battery(z.grid))
    if meets_targets(record, schedule.targets):
        verdict = Verdict.STRONG
    elif certificate.passed(schedule.weak_tol):
        verdict = Verdict.WEAK
    else:
        verdict = Verdict.UNCONVERGED

    report = _report_header(cfg, "diagnose")
    report.update(
        {
            "inputs": {"m": m_path, "u": u_path},
            "grid": {"dim": z.grid.dim, "n": z.grid.n_per_dim},
            "epsilon": epsilon,
            "verdict": str(verdict),
            "residuals": record.to_dict(),
            "support_size": hj.support_size,
            "certificates": {
                "weak_min": certificate.min_value,
                "weak_witness": certificate.witness,
                "weak_tol": schedule.weak_tol,
            },
            "apriori": asdict(apriori_monitor([record.apriori])),
        }
    )
    write_json(os.path.join(out_dir, DIAGNOSE_REPORT_FILE), report)
    run_logger.log_action("diagnose", details={"verdict": str(verdict)})
    run_logger.close()
    return report