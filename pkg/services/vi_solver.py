"""Projected extragradient solver for the monotone variational inequality.

Find z in the cone {m >= m_floor} x {u free} with <A(z), v - z>_h >= 0 for all
v in the cone. Each iteration takes a predictor and a corrector step,

    z_bar  = P(z - sigma M^-1 A(z))
    z_next = P(z - sigma M^-1 A(z_bar))

where M is the metric: the identity, or the identity on the m-slot and
I - kappa Laplacian_h on the u-slot. Both metrics keep the m-slot untouched,
so P is a plain clip of m and the fixed points are the same VI solutions.

The step sigma backtracks until, with g = A(z) - A(z_bar) and d = z - z_bar,

    sigma <g, d>       <= |d|_M^2 / 2
    sigma |g|_{M^-1}   <= theta |d|_M

and is doubled after every `growth_interval` accepted steps. Stopping uses the
natural residual in the plain h-weighted norm.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from services.exceptions import SolverFailure, ValidationError
from services.grid import TorusGrid, div_array, grad_array, integral_array
from services.mfg_operator import MFGState, OperatorOutput, ProblemData, apply
from services.rng import make_rng

logger = logging.getLogger(__name__)

Operator = Callable[[MFGState], OperatorOutput]
Pair = tuple[np.ndarray, np.ndarray]
Observer = Callable[[int, MFGState], None]

# Relative slack for the per-step monotonicity probe
PAIRING_TOL = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    """Extragradient settings.

    `m_floor=None` removes the cone entirely (generic unconstrained operators);
    with `ProblemData` the effective floor is the larger of this value and the
    problem's own floor.
    """

    step0: float = 1.0
    backtrack_ratio: float = 0.5
    max_iter: int = 20000
    tol_natural: float = 1e-8
    m_floor: float | None = 0.0
    rng_seed: int = 0
    residual_step: float = 1.0
    growth_interval: int = 20
    lipschitz_theta: float = 0.9
    precondition: bool = True
    kappa: float = 2.0
    trace_every: int = 1
    probe_every: int = 500

    def __post_init__(self) -> None:
        errors = []
        if not self.step0 > 0:
            errors.append(f"step0 must be > 0, got {self.step0}")
        if not 0 < self.backtrack_ratio < 1:
            errors.append(
                f"backtrack_ratio must lie in (0, 1), got {self.backtrack_ratio}"
            )
        if self.max_iter < 1:
            errors.append(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.tol_natural > 0:
            errors.append(f"tol_natural must be > 0, got {self.tol_natural}")
        if self.m_floor is not None and not self.m_floor >= 0:
            errors.append(f"m_floor must be >= 0, got {self.m_floor}")
        if not self.residual_step > 0:
            errors.append(f"residual_step must be > 0, got {self.residual_step}")
        if self.growth_interval < 1:
            errors.append(f"growth_interval must be >= 1, got {self.growth_interval}")
        if not 0 < self.lipschitz_theta < 1:
            errors.append(
                f"lipschitz_theta must lie in (0, 1), got {self.lipschitz_theta}"
            )
        if not self.kappa > 0:
            errors.append(f"kappa must be > 0, got {self.kappa}")
        if self.trace_every < 1 or self.probe_every < 1:
            errors.append("trace_every and probe_every must be >= 1")
        if errors:
            raise ValidationError(errors)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    sigma: float
    natural_residual: float
    pairing_check: float


@dataclass(frozen=True)
class SolveStats:
    iterations: int
    final_residual: float
    sigma_min: float
    sigma_max: float
    sigma_final: float
    pairing_checks: int
    pairing_failures: int
    operator_evaluations: int

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "step_history": {
                "min": self.sigma_min,
                "max": self.sigma_max,
                "final": self.sigma_final,
            },
            "pairing_checks": self.pairing_checks,
            "pairing_failures": self.pairing_failures,
            "operator_evaluations": self.operator_evaluations,
        }


@dataclass(frozen=True)
class SolveResult:
    z: MFGState
    stats: SolveStats
    trace: list[TraceRow] = field(default_factory=list, repr=False)


class IdentityMetric:
    """Plain h-weighted metric on both slots."""

    def __init__(self, grid: TorusGrid):
        self.grid = grid

    def precondition(self, eta: np.ndarray, nu: np.ndarray) -> Pair:
        return eta, nu

    def norm_sq(self, dm: np.ndarray, du: np.ndarray) -> float:
        return integral_array(self.grid, dm**2 + du**2)

    def dual_norm_sq(self, gm: np.ndarray, gu: np.ndarray) -> float:
        return integral_array(self.grid, gm**2 + gu**2)


class SobolevMetric(IdentityMetric):
    """Identity on the m-slot, I - kappa Laplacian_h on the u-slot.

    The Laplacian is div(grad), diagonal in the discrete Fourier basis with
    symbol -sum_k (4/h^2) sin^2(pi j_k / n), so M^-1 is one FFT pair.
    """

    def __init__(self, grid: TorusGrid, kappa: float):
        super().__init__(grid)
        self.kappa = kappa
        n, h = grid.n_per_dim, grid.h
        full = 4.0 / h**2 * np.sin(np.pi * np.arange(n) / n) ** 2
        axes = [full] * (grid.dim - 1) + [full[: n // 2 + 1]]
        symbol = np.ones([len(axis) for axis in axes])
        for k, axis in enumerate(axes):
            shape = [1] * grid.dim
            shape[k] = len(axis)
            symbol = symbol + kappa * axis.reshape(shape)
        self._symbol = symbol

    def _apply(self, u: np.ndarray) -> np.ndarray:
        return u - self.kappa * div_array(self.grid, grad_array(self.grid, u))

    def _solve(self, u: np.ndarray) -> np.ndarray:
        axes = tuple(range(self.grid.dim))
        spectrum = np.fft.rfftn(u, axes=axes) / self._symbol
        return np.fft.irfftn(spectrum, s=self.grid.shape, axes=axes)

    def precondition(self, eta: np.ndarray, nu: np.ndarray) -> Pair:
        return eta, self._solve(nu)

    def norm_sq(self, dm: np.ndarray, du: np.ndarray) -> float:
        return integral_array(self.grid, dm**2 + du * self._apply(du))

    def dual_norm_sq(self, gm: np.ndarray, gu: np.ndarray) -> float:
        return integral_array(self.grid, gm**2 + gu * self._solve(gu))


def project_cone(z: MFGState, m_floor: float | None) -> MFGState:
    """Clip m to the floor; u is unconstrained. A None floor is the identity."""
    if m_floor is None:
        return z
    return MFGState.from_arrays(z.grid, np.maximum(z.m.values, m_floor), z.u.values)


def _direction(metric: IdentityMetric, out: OperatorOutput) -> Pair:
    return metric.precondition(out.eta_slot.values, out.nu_slot.values)


def _as_operator(data: ProblemData | Operator) -> Operator:
    if isinstance(data, ProblemData):
        return lambda z: apply(data, z)
    return data


def effective_floor(data: ProblemData | Operator, cfg: SolverConfig) -> float | None:
    if isinstance(data, ProblemData):
        return max(cfg.m_floor or 0.0, data.m_floor)
    return cfg.m_floor


def _step(z: MFGState, direction: Pair, sigma: float, floor: float | None) -> MFGState:
    moved = MFGState.from_arrays(
        z.grid, z.m.values - sigma * direction[0], z.u.values - sigma * direction[1]
    )
    return project_cone(moved, floor)


def _natural_residual(
    z: MFGState, out: OperatorOutput, step: float, floor: float | None
) -> float:
    target = _step(z, (out.eta_slot.values, out.nu_slot.values), step, floor)
    dm = z.m.values - target.m.values
    du = z.u.values - target.u.values
    return float(np.sqrt(integral_array(z.grid, dm**2 + du**2))) / step


def natural_residual(
    data: ProblemData | Operator,
    z: MFGState,
    step: float = 1.0,
    m_floor: float | None = None,
) -> float:
    """|z - P(z - step A(z))|_h / step.

    For `ProblemData` the floor defaults to the problem's own floor.
    """
    if not step > 0:
        raise ValidationError(f"residual step must be > 0, got {step}")
    if m_floor is None and isinstance(data, ProblemData):
        m_floor = data.m_floor
    return _natural_residual(z, _as_operator(data)(z), step, m_floor)


def extragradient_step(
    operator: ProblemData | Operator,
    z: MFGState,
    sigma: float,
    m_floor: float | None = None,
    metric: IdentityMetric | None = None,
) -> tuple[MFGState, MFGState]:
    """One predictor/corrector pair (z_bar, z_next) with a fixed step."""
    op = _as_operator(operator)
    metric = metric or IdentityMetric(z.grid)
    out = op(z)
    z_bar = _step(z, _direction(metric, out), sigma, m_floor)
    out_bar = op(z_bar)
    z_next = _step(z, _direction(metric, out_bar), sigma, m_floor)
    return z_bar, z_next


def _difference(a: OperatorOutput, b: OperatorOutput) -> Pair:
    return a.eta_slot.values - b.eta_slot.values, a.nu_slot.values - b.nu_slot.values


def _pairing_probe(
    op: Operator, z: MFGState, out: OperatorOutput, rng: np.random.Generator, floor
) -> tuple[float, float]:
    """Pairing of z with a random nearby admissible state, and its scale."""
    shape = z.grid.shape
    other = _step(
        z,
        (rng.standard_normal(shape) * 0.1, rng.standard_normal(shape) * 0.1),
        1.0,
        floor,
    )
    gm, gu = _difference(out, op(other))
    dm, du = z.m.values - other.m.values, z.u.values - other.u.values
    value = integral_array(z.grid, gm * dm + gu * du)
    scale = integral_array(z.grid, np.abs(gm * dm) + np.abs(gu * du))
    return value, max(1.0, scale)


def extragradient_solve(
    data: ProblemData | Operator,
    z0: MFGState,
    cfg: SolverConfig,
    observer: Observer | None = None,
) -> SolveResult:
    """Run the adaptive projected extragradient method from z0.

    Args:
        data: Problem data, or any monotone operator on `MFGState`.
        z0: Start; projected onto the cone before the first step.
        cfg: Solver settings.
        observer: Called with (iteration, z) for the projected start and
            every accepted iterate.

    Returns:
        SolveResult whose natural residual is at most cfg.tol_natural.

    Raises:
        SolverFailure: After cfg.max_iter iterations, or when the step
            collapses; carries the best iterate and the residual trace.
    """
    op = _as_operator(data)
    floor = effective_floor(data, cfg)
    grid = z0.grid
    metric = (
        SobolevMetric(grid, cfg.kappa) if cfg.precondition else IdentityMetric(grid)
    )
    rng = make_rng(cfg.rng_seed, "solver-probe")

    z = project_cone(z0, floor)
    if observer is not None:
        observer(0, z)
    out = op(z)
    evaluations = 1
    residual = _natural_residual(z, out, cfg.residual_step, floor)
    best_z, best_residual = z, residual

    sigma = cfg.step0
    sigma_min = sigma_max = sigma
    accepted = 0
    checks = failures = 0
    trace = [TraceRow(0, sigma, residual, 0.0)]

    def stats(iterations: int) -> SolveStats:
        return SolveStats(
            iterations=iterations,
            final_residual=residual,
            sigma_min=sigma_min,
            sigma_max=sigma_max,
            sigma_final=sigma,
            pairing_checks=checks,
            pairing_failures=failures,
            operator_evaluations=evaluations,
        )

    for iteration in range(1, cfg.max_iter + 1):
        if residual <= cfg.tol_natural:
            return SolveResult(z, stats(iteration - 1), trace)

        direction = _direction(metric, out)
        while True:
            z_bar = _step(z, direction, sigma, floor)
            out_bar = op(z_bar)
            evaluations += 1
            dm, du = z.m.values - z_bar.m.values, z.u.values - z_bar.u.values
            gm, gu = _difference(out, out_bar)
            d_sq = metric.norm_sq(dm, du)
            pairing = integral_array(grid, gm * dm + gu * du)
            if d_sq == 0.0:
                break
            if (
                sigma * pairing <= 0.5 * d_sq
                and sigma**2 * metric.dual_norm_sq(gm, gu)
                <= cfg.lipschitz_theta**2 * d_sq
            ):
                break
            sigma *= cfg.backtrack_ratio
            sigma_min = min(sigma_min, sigma)
            if sigma < 1e-14 * cfg.step0:
                raise SolverFailure(
                    f"step size collapsed at iteration {iteration}",
                    best_state=best_z,
                    residual=best_residual,
                    trace=trace,
                )

        checks += 1
        scale = integral_array(grid, np.abs(gm * dm) + np.abs(gu * du))
        if pairing < -PAIRING_TOL * max(1.0, scale):
            failures += 1
            logger.warning(
                f"negative pairing {pairing:.3e} at iteration {iteration}"
            )

        if d_sq == 0.0:
            # z is already a fixed point of the projected step
            z_next = z
        else:
            z_next = _step(z, _direction(metric, out_bar), sigma, floor)
        z = z_next
        if observer is not None:
            observer(iteration, z)
        out = op(z)
        evaluations += 1
        residual = _natural_residual(z, out, cfg.residual_step, floor)
        if residual < best_residual:
            best_z, best_residual = z, residual

        if iteration % cfg.probe_every == 0:
            value, probe_scale = _pairing_probe(op, z, out, rng, floor)
            evaluations += 1
            checks += 1
            if value < -PAIRING_TOL * probe_scale:
                failures += 1
                logger.warning(f"random pairing probe failed: {value:.3e}")

        if iteration % cfg.trace_every == 0 or residual <= cfg.tol_natural:
            trace.append(TraceRow(iteration, sigma, residual, pairing))

        accepted += 1
        if accepted % cfg.growth_interval == 0:
            sigma *= 2.0
            sigma_max = max(sigma_max, sigma)

        if d_sq == 0.0 and residual > cfg.tol_natural:
            raise SolverFailure(
                f"stalled at a fixed point with residual {residual:.3e}",
                best_state=best_z,
                residual=best_residual,
                trace=trace,
            )

        logger.debug(
            f"iteration {iteration}: sigma={sigma:.3e} residual={residual:.3e}"
        )

    if residual <= cfg.tol_natural:
        return SolveResult(z, stats(cfg.max_iter), trace)

    raise SolverFailure(
        f"extragradient did not reach {cfg.tol_natural:g} in {cfg.max_iter} iterations "
        f"(best residual {best_residual:.3e})",
        best_state=best_z,
        residual=best_residual,
        trace=trace,
    )


def projected_gradient_path(
    operator: ProblemData | Operator,
    z0: MFGState,
    sigma: float,
    steps: int,
    m_floor: float | None = None,
) -> list[float]:
    """h-norms of the plain projected forward iteration z <- P(z - sigma A(z)).

    Kept as a reference: on skew operators this iteration spirals outwards
    where the extragradient method contracts.
    """
    op = _as_operator(operator)
    z = project_cone(z0, m_floor)
    norms = []
    for _ in range(steps):
        out = op(z)
        z = _step(z, (out.eta_slot.values, out.nu_slot.values), sigma, m_floor)
        norms.append(
            float(np.sqrt(integral_array(z.grid, z.m.values**2 + z.u.values**2)))
        )
    return norms


def state_distance(z1: MFGState, z2: MFGState) -> float:
    """h-weighted distance over both slots."""
    dm = z1.m.values - z2.m.values
    du = z1.u.values - z2.u.values
    return float(np.sqrt(integral_array(z1.grid, dm**2 + du**2)))
