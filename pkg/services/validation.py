"""Run configuration schema, validation and loading.

A run is described by one JSON or YAML file (JSON is read through the YAML
loader, of which it is a subset). Every section is optional; missing keys take
the defaults below. Unknown keys and out-of-range values are collected and
reported together.
"""

import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from typing import Any, get_args, get_origin, get_type_hints

import yaml

from services.exceptions import ValidationError
from services.hamiltonian import Family, Inequality, Kernel
from services.profiles import validate_profile


@dataclass
class GridConfig:
    dim: int = 1
    n: int = 64


@dataclass
class HamiltonianConfig:
    family: str = "power"
    alpha: float = 2.0
    beta: float = 1.0
    tau: float = 0.0
    a: str = "const:1"
    b: str = "const:1"
    g: str | None = None
    h_kernel: str | None = None


@dataclass
class TargetsConfig:
    hj_pos: float = 1e-4
    hj_support: float = 1e-4
    transport_l1: float = 1e-4
    mass_gap: float = 1e-5


@dataclass
class ScheduleConfig:
    eps0: float = 0.1
    ratio: float = 0.1
    stages: int = 4
    floor_min: float = 1e-6
    weak_tol: float = 1e-5
    targets: TargetsConfig = field(default_factory=TargetsConfig)


@dataclass
class SolverSection:
    step0: float = 1.0
    backtrack_ratio: float = 0.5
    max_iter: int = 20000
    tol_natural: float = 1e-8
    residual_step: float = 1.0
    growth_interval: int = 20
    lipschitz_theta: float = 0.9
    precondition: bool = True
    kappa: float = 2.0
    trace_every: int = 1
    probe_every: int = 500


@dataclass
class CheckConfig:
    samples: int = 10000
    m_floor: float = 1e-3
    envelope_epsilons: list[float] = field(default_factory=lambda: [1.0, 0.1, 0.01])
    operator_pairs: int = 200
    constants: dict[str, float] = field(default_factory=dict)


@dataclass
class SweepConfig:
    grid_sizes: list[int] = field(default_factory=lambda: [32, 64])
    epsilons: list[float] = field(default_factory=lambda: [0.1, 0.01])


@dataclass
class InfconvTableConfig:
    p_values: list[float] = field(default_factory=lambda: [0.1, 0.5, 1.0, 2.0, 4.0])
    m_values: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0])
    epsilons: list[float] = field(default_factory=lambda: [1.0, 0.1, 0.01])
    oracle_grid_n: int = 401


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    hamiltonian: HamiltonianConfig = field(default_factory=HamiltonianConfig)
    potential: str = "const:0"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    solver: SolverSection = field(default_factory=SolverSection)
    check: CheckConfig = field(default_factory=CheckConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    infconv_table: InfconvTableConfig = field(default_factory=InfconvTableConfig)
    output_dir: str | None = None
    seed: int = 0


def _is_number(value: Any) -> bool:
    return isinstance(value, int | float) and not isinstance(value, bool)


def _coerce(value: Any, hint: Any, where: str, errors: list[str]) -> Any:
    """Convert one raw value to `hint`, appending a message on mismatch."""
    origin = get_origin(hint)
    args = get_args(hint)

    if is_dataclass(hint):
        return _build(hint, value, where, errors)

    if args and type(None) in args and origin is not list and origin is not dict:
        if value is None:
            return None
        inner = next(arg for arg in args if arg is not type(None))
        return _coerce(value, inner, where, errors)

    if hint is bool:
        if isinstance(value, bool):
            return value
        errors.append(f"{where} must be true or false")
        return None
    if hint is int:
        if _is_number(value) and float(value).is_integer():
            return int(value)
        errors.append(f"{where} must be an integer")
        return None
    if hint is float:
        if _is_number(value) and math.isfinite(value):
            return float(value)
        errors.append(f"{where} must be a finite number")
        return None
    if hint is str:
        if isinstance(value, str):
            return value
        errors.append(f"{where} must be a string")
        return None

    if origin is list:
        if not isinstance(value, list):
            errors.append(f"{where} must be a list")
            return None
        return [
            _coerce(item, args[0], f"{where}[{i}]", errors)
            for i, item in enumerate(value)
        ]

    if origin is dict:
        if not isinstance(value, dict):
            errors.append(f"{where} must be a mapping")
            return None
        return {
            str(key): _coerce(item, args[1], f"{where}.{key}", errors)
            for key, item in value.items()
        }

    errors.append(f"{where} has an unsupported type")
    return None


def _build(cls: Any, raw: Any, where: str, errors: list[str]) -> Any:
    """Instantiate dataclass `cls` from a mapping, rejecting unknown keys."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errors.append(f"{where or 'config'} must be a mapping")
        return cls()

    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            errors.append(f"unknown key '{key}' in {where or 'config'}")

    kwargs = {}
    for f in fields(cls):
        if f.name in raw:
            path = f"{where}.{f.name}" if where else f.name
            value = _coerce(raw[f.name], hints[f.name], path, errors)
            if value is not None or raw[f.name] is None:
                kwargs[f.name] = value
    return cls(**kwargs)


def validate_epsilon(value: float, name: str) -> tuple[bool, str | None]:
    """Regularization levels live in (0, 1].

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not 0 < value <= 1:
        return False, f"{name} must lie in (0, 1], got {value}"
    return True, None


def validate_positive(
    value: float, name: str, strict: bool = True
) -> tuple[bool, str | None]:
    if not math.isfinite(value):
        return False, f"{name} must be finite, got {value}"
    if strict and not value > 0:
        return False, f"{name} must be > 0, got {value}"
    if not strict and not value >= 0:
        return False, f"{name} must be >= 0, got {value}"
    return True, None


def validate_open_unit(value: float, name: str) -> tuple[bool, str | None]:
    if not 0 < value < 1:
        return False, f"{name} must lie in (0, 1), got {value}"
    return True, None


def validate_hamiltonian(section: HamiltonianConfig) -> list[str]:
    """Family, exponents and profiles; coefficient signs are checked at build time."""
    errors = []
    if section.family not in {str(family) for family in Family}:
        errors.append(
            f"hamiltonian.family must be one of power, congestion, weak; "
            f"got '{section.family}'"
        )
    if not section.alpha > 1:
        errors.append(f"hamiltonian.alpha must be > 1, got {section.alpha}")
    if not section.beta > 0:
        errors.append(f"hamiltonian.beta must be > 0, got {section.beta}")
    if not 0 <= section.tau <= 1:
        errors.append(f"hamiltonian.tau must lie in [0, 1], got {section.tau}")
    elif section.tau != 0 and section.family != Family.CONGESTION:
        errors.append("hamiltonian.tau is only allowed for the congestion family")

    for name in ("a", "b"):
        is_valid, error = validate_profile(getattr(section, name))
        if not is_valid:
            errors.append(f"hamiltonian.{name}: {error}")

    if section.family == Family.WEAK:
        if section.g is None:
            errors.append("hamiltonian.g is required for the weak family")
        if section.h_kernel not in {str(kernel) for kernel in Kernel}:
            errors.append("hamiltonian.h_kernel must be 'exp' or 'cosh' for weak")
    if section.g is not None:
        is_valid, error = validate_profile(section.g)
        if not is_valid:
            errors.append(f"hamiltonian.g: {error}")
    return errors


def validate_run_config(cfg: RunConfig) -> list[str]:
    """Range-check every field.

    Returns:
        List of error messages, empty when the config is valid
    """
    errors = []
    if cfg.grid.dim not in (1, 2):
        errors.append(f"grid.dim must be 1 or 2, got {cfg.grid.dim}")
    if cfg.grid.n < 2:
        errors.append(f"grid.n must be >= 2, got {cfg.grid.n}")

    errors += validate_hamiltonian(cfg.hamiltonian)

    is_valid, error = validate_profile(cfg.potential)
    if not is_valid:
        errors.append(f"potential: {error}")

    schedule = cfg.schedule
    checks = [
        validate_epsilon(schedule.eps0, "schedule.eps0"),
        validate_open_unit(schedule.ratio, "schedule.ratio"),
        validate_positive(schedule.stages, "schedule.stages"),
        validate_positive(schedule.floor_min, "schedule.floor_min"),
        validate_positive(schedule.weak_tol, "schedule.weak_tol"),
    ]
    checks += [
        validate_positive(value, f"schedule.targets.{name}")
        for name, value in asdict(schedule.targets).items()
    ]

    solver = cfg.solver
    checks += [
        validate_positive(solver.step0, "solver.step0"),
        validate_open_unit(solver.backtrack_ratio, "solver.backtrack_ratio"),
        validate_positive(solver.max_iter, "solver.max_iter"),
        validate_positive(solver.tol_natural, "solver.tol_natural"),
        validate_positive(solver.residual_step, "solver.residual_step"),
        validate_positive(solver.growth_interval, "solver.growth_interval"),
        validate_open_unit(solver.lipschitz_theta, "solver.lipschitz_theta"),
        validate_positive(solver.kappa, "solver.kappa"),
        validate_positive(solver.trace_every, "solver.trace_every"),
        validate_positive(solver.probe_every, "solver.probe_every"),
    ]

    check = cfg.check
    checks += [
        validate_positive(check.samples, "check.samples"),
        validate_positive(check.m_floor, "check.m_floor", strict=False),
        validate_positive(check.operator_pairs, "check.operator_pairs"),
    ]
    checks += [
        validate_epsilon(eps, f"check.envelope_epsilons[{i}]")
        for i, eps in enumerate(check.envelope_epsilons)
    ]
    for key, value in check.constants.items():
        if key not in {str(ineq) for ineq in Inequality}:
            errors.append(f"check.constants: unknown inequality '{key}'")
        elif not value >= 1:
            errors.append(f"check.constants.{key} must be >= 1, got {value}")

    checks += [
        (n >= 2, f"sweep.grid_sizes[{i}] must be >= 2, got {n}")
        for i, n in enumerate(cfg.sweep.grid_sizes)
    ]
    checks += [
        validate_epsilon(eps, f"sweep.epsilons[{i}]")
        for i, eps in enumerate(cfg.sweep.epsilons)
    ]

    table = cfg.infconv_table
    checks += [
        (math.isfinite(p), f"infconv_table.p_values[{i}] must be finite")
        for i, p in enumerate(table.p_values)
    ]
    checks += [
        validate_positive(m, f"infconv_table.m_values[{i}]")
        for i, m in enumerate(table.m_values)
    ]
    checks += [
        validate_epsilon(eps, f"infconv_table.epsilons[{i}]")
        for i, eps in enumerate(table.epsilons)
    ]
    checks.append(
        (table.oracle_grid_n >= 3, "infconv_table.oracle_grid_n must be >= 3")
    )
    checks.append(validate_positive(cfg.seed, "seed", strict=False))

    errors += [error for is_valid, error in checks if not is_valid and error]
    return errors


def parse_config_file(path: str) -> tuple[bool, str, dict[str, Any] | None]:
    """Read a JSON or YAML config file.

    Args:
        path: Path to the config file

    Returns:
        Tuple of (is_valid, error_message, parsed_data)
    """
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        return False, f"Invalid config format: {e!s}", None
    except FileNotFoundError:
        return False, f"config file not found: {path}", None
    except OSError as e:
        return False, f"Error reading config: {e!s}", None

    if data is None:
        data = {}
    if not isinstance(data, dict):
        return False, "config must contain a mapping at the top level", None
    return True, "", data


def config_from_dict(raw: dict[str, Any]) -> RunConfig:
    """Build and validate a RunConfig from already-parsed data.

    Raises:
        ValidationError: With every schema and range problem found
    """
    errors: list[str] = []
    cfg = _build(RunConfig, raw, "", errors)
    if errors:
        raise ValidationError(errors)

    errors = validate_run_config(cfg)
    if errors:
        raise ValidationError(errors)
    return cfg


def load_config(path: str) -> RunConfig:
    """Load, schema-check and range-check a run config file.

    Raises:
        ValidationError: If the file is unreadable or invalid
    """
    is_valid, error, raw = parse_config_file(path)
    if not is_valid or raw is None:
        raise ValidationError(error)
    return config_from_dict(raw)


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    """Plain-data form of a RunConfig; reloading it gives an equal config."""
    return asdict(cfg)


def with_overrides(
    cfg: RunConfig,
    seed: int | None = None,
    tol_hj: float | None = None,
    tol_transport: float | None = None,
    stages: int | None = None,
    output_dir: str | None = None,
) -> RunConfig:
    """Copy of `cfg` with command-line overrides applied and re-validated.

    `tol_hj` sets both HJ targets (positive part and on-support size).

    Raises:
        ValidationError: If an override is out of range
    """
    targets = cfg.schedule.targets
    if tol_hj is not None:
        targets = replace(targets, hj_pos=tol_hj, hj_support=tol_hj)
    if tol_transport is not None:
        targets = replace(targets, transport_l1=tol_transport)
    schedule = replace(cfg.schedule, targets=targets)
    if stages is not None:
        schedule = replace(schedule, stages=stages)

    updated = replace(
        cfg,
        schedule=schedule,
        seed=cfg.seed if seed is None else seed,
        output_dir=cfg.output_dir if output_dir is None else output_dir,
    )
    errors = validate_run_config(updated)
    if errors:
        raise ValidationError(errors)
    return updated
