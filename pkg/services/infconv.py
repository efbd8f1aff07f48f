"""Infimal-convolution envelope of a Hamiltonian.

    H^eps(x, p, m) = min_q  H(x, p - q, m) + K(q) / eps,   K(q) = |q| + |q|^alpha

Because alpha > 1 the subdifferential of K at 0 is the closed unit ball, so the
minimizer is q = 0 exactly when |D_pH(x, p, m)| <= 1/eps. Otherwise the
first-order condition reads

    D_pH(x, p - q, m) = (1 + alpha |q|^(alpha - 1)) / eps * q / |q|

and for the radial built-in families q is a non-negative multiple of p, which
leaves a strictly monotone scalar equation for the radius of q.
"""

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from services.exceptions import FamilyMismatchError, SolverFailure, ValidationError
from services.hamiltonian import (
    Family,
    GrowthCertificate,
    HamiltonianSpec,
    Inequality,
    SampleReport,
    eval_H,
    kernel_parts,
    momentum_gradient,
    momentum_norm,
    radial_parts,
    sample_points,
    summarize_samples,
)
from services.rng import make_rng

logger = logging.getLogger(__name__)

# |D_pH| <= (1 - ZERO_MARGIN)/eps is treated as the q = 0 region
ZERO_MARGIN = 1e-12
PROX_STEP_TOL = 1e-10
DEFAULT_MAX_ITER = 200

Method = Literal["auto", "bisection", "prox"]


def K(q, alpha: float) -> np.ndarray:
    """|q| + |q|^alpha for q with the vector axis first."""
    if not alpha > 1:
        raise ValidationError(f"alpha must be > 1, got {alpha}")
    r, _ = momentum_norm(np.asarray(q, dtype=float))
    return r + r**alpha


@dataclass(frozen=True)
class EnvelopeSpec:
    base: HamiltonianSpec
    epsilon: float

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon <= 1.0:
            raise ValidationError(
                f"envelope epsilon must lie in (0, 1], got {self.epsilon}"
            )

    @property
    def alpha(self) -> float:
        return self.base.alpha


@dataclass(frozen=True)
class EnvelopeValue:
    """H^eps, its minimizer q^eps and D_pH^eps = D_pH(x, p - q^eps, m)."""

    value: np.ndarray
    q_star: np.ndarray
    grad_p: np.ndarray


def _check_density(spec: EnvelopeSpec, m: np.ndarray) -> None:
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise ValidationError("density m must be finite and non-negative")
    if spec.base.family is Family.CONGESTION and np.any(m <= 0):
        raise ValidationError("the congestion envelope needs m > 0")


def _radial_radius(
    spec: EnvelopeSpec, x, r: np.ndarray, m: np.ndarray, max_iter: int
) -> np.ndarray:
    """Radius s of q^eps along p/|p|, by bisection on [0, r]."""
    eps, alpha = spec.epsilon, spec.alpha
    _, slope = radial_parts(spec.base, x, r, m)
    moving = slope > (1.0 - ZERO_MARGIN) / eps

    lo = np.zeros_like(r)
    hi = np.where(moving, r, 0.0)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        _, slope_mid = radial_parts(spec.base, x, r - mid, m)
        residual = (1.0 + alpha * mid ** (alpha - 1.0)) / eps - slope_mid
        hi = np.where(residual > 0, mid, hi)
        lo = np.where(residual > 0, lo, mid)
        if np.all(hi - lo <= 2.0 * np.spacing(np.maximum(hi, 1.0))):
            break
    return np.where(moving, 0.5 * (lo + hi), 0.0)


def prox_K(v, lam, alpha: float, newton_iter: int = 100) -> np.ndarray:
    """Proximal map of lam * K, applied along the vector axis of v.

    The radius solves rho + lam alpha rho^(alpha-1) = |v| - lam (or is 0 when
    |v| <= lam); closed form for alpha = 2, safeguarded Newton otherwise.
    """
    v = np.asarray(v, dtype=float)
    lam = np.asarray(lam, dtype=float)
    norm_v, unit = momentum_norm(v)
    target = np.maximum(norm_v - lam, 0.0)

    if alpha == 2.0:
        rho = target / (1.0 + 2.0 * lam)
    else:
        lo, hi = np.zeros_like(target), target.copy()
        rho = 0.5 * target
        for _ in range(newton_iter):
            psi = rho + lam * alpha * rho ** (alpha - 1.0) - target
            lo = np.where(psi < 0, rho, lo)
            hi = np.where(psi < 0, hi, rho)
            dpsi = 1.0 + lam * alpha * (alpha - 1.0) * rho ** (alpha - 2.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = rho - psi / dpsi
            inside = np.isfinite(step) & (step > lo) & (step < hi)
            rho = np.where(inside, step, 0.5 * (lo + hi))
            if np.all(np.abs(psi) <= 1e-15 * (1.0 + target)):
                break
    return rho * unit


def _prox_minimizer(
    spec: EnvelopeSpec, x, p: np.ndarray, m: np.ndarray, max_iter: int
) -> np.ndarray:
    """q^eps by proximal-gradient steps q <- prox(q + lam D_pH(p - q)).

    Each step is the semi-explicit fixed-point map of the optimality system;
    lam backtracks per sample until the smooth part's descent lemma holds.
    """
    base, eps, alpha = spec.base, spec.epsilon, spec.alpha
    q = np.zeros_like(p)
    lam = np.ones(p.shape[1:])

    def smooth(qq: np.ndarray) -> np.ndarray:
        return eval_H(base, x, p - qq, m)

    for iteration in range(1, max_iter + 1):
        grad = -momentum_gradient(base, x, p - q, m)
        f_q = smooth(q)
        pending = np.ones(lam.shape, dtype=bool)
        q_new = q
        for _ in range(60):
            trial = prox_K(q - lam * grad, lam / eps, alpha)
            step = trial - q
            model = f_q + np.sum(grad * step, axis=0) + np.sum(step**2, axis=0) / (
                2.0 * lam
            )
            ok = smooth(trial) <= model + 1e-15 * np.abs(model)
            q_new = np.where(pending & ok, trial, q_new)
            pending &= ~ok
            if not np.any(pending):
                break
            lam = np.where(pending, 0.5 * lam, lam)

        step_norm = float(np.max(np.sqrt(np.sum((q_new - q) ** 2, axis=0))))
        q = q_new
        if step_norm <= PROX_STEP_TOL:
            logger.debug(f"prox envelope converged after {iteration} steps")
            return q

    raise SolverFailure(
        f"envelope prox iteration did not converge in {max_iter} steps",
        best_state=q,
        residual=step_norm,
    )


def envelope(
    spec: EnvelopeSpec,
    x,
    p,
    m,
    method: Method = "auto",
    max_iter: int = DEFAULT_MAX_ITER,
) -> EnvelopeValue:
    """Evaluate H^eps with its minimizer and gradient.

    Args:
        spec: Base Hamiltonian and epsilon.
        x: Flat node index, array of indices, or None for the whole grid.
        p: Momentum with the vector axis first.
        m: Density; must be positive for the congestion family.
        method: "bisection" (radial reduction), "prox" (proximal-gradient
            fixed point) or "auto", which picks bisection.
        max_iter: Iteration cap for either method.

    Returns:
        EnvelopeValue holding arrays shaped like p[0] (and p for vectors).

    Raises:
        SolverFailure: If the prox iteration does not settle.
    """
    p = np.asarray(p, dtype=float)
    m = np.broadcast_to(np.asarray(m, dtype=float), p.shape[1:])
    if not np.all(np.isfinite(p)):
        raise ValidationError("momentum p must be finite")
    _check_density(spec, m)

    base, eps = spec.base, spec.epsilon
    r, unit = momentum_norm(p)

    if method == "prox":
        q = _prox_minimizer(spec, x, p, m, max_iter)
        slope = np.sqrt(np.sum(momentum_gradient(base, x, p, m) ** 2, axis=0))
        q = np.where(slope <= (1.0 - ZERO_MARGIN) / eps, 0.0, q)
    elif method in ("auto", "bisection"):
        q = _radial_radius(spec, x, r, m, max_iter) * unit
    else:
        raise ValidationError(f"unknown envelope method '{method}'")

    shifted = p - q
    value = eval_H(base, x, shifted, m) + K(q, spec.alpha) / eps
    grad = momentum_gradient(base, x, shifted, m)
    return EnvelopeValue(value=value, q_star=q, grad_p=grad)


def default_box_radius(spec: EnvelopeSpec, x, p, m: float) -> float:
    """Radius of a box around 0 that must contain q^eps.

    From H^eps <= H(p) and phi >= 0: K(q)/eps <= |H(p)| + b m^beta.
    """
    p = np.asarray(p, dtype=float)
    _, b, _ = spec.base.coefficients(x)
    h_val = float(eval_H(spec.base, x, p, m))
    bound = spec.epsilon * (abs(h_val) + float(b) * m**spec.base.beta)
    return float(np.linalg.norm(p)) + bound ** (1.0 / spec.alpha)


def oracle_resolution(
    spec: EnvelopeSpec, x, p, m: float, q_box_radius: float, grid_n: int
) -> float:
    """Worst gap between the grid minimum and the true minimum.

    L_F * sqrt(dim) * spacing / 2 with L_F a Lipschitz bound of
    q -> H(x, p - q, m) + K(q)/eps on the box.
    """
    p = np.asarray(p, dtype=float)
    dim = p.shape[0]
    reach = np.sqrt(dim) * q_box_radius
    _, slope = radial_parts(spec.base, x, np.asarray(np.linalg.norm(p) + reach), m)
    lipschitz = float(slope) + (
        1.0 + spec.alpha * reach ** (spec.alpha - 1.0)
    ) / spec.epsilon
    spacing = 2.0 * q_box_radius / (grid_n - 1)
    return lipschitz * np.sqrt(dim) * spacing / 2.0


def _odd(grid_n: int) -> int:
    return grid_n if grid_n % 2 == 1 else grid_n + 1


def envelope_oracle(
    spec: EnvelopeSpec,
    x,
    p,
    m: float,
    q_box_radius: float | None = None,
    grid_n: int = 201,
) -> float:
    """Brute-force minimum over a uniform q grid on [-R, R]^dim.

    An even `grid_n` is bumped to the next odd number so that q = 0 is a grid
    point; the result never undercuts the true envelope.
    """
    if grid_n < 3:
        raise ValidationError(f"oracle grid_n must be at least 3, got {grid_n}")
    grid_n = _odd(grid_n)
    p = np.asarray(p, dtype=float)
    if q_box_radius is None:
        q_box_radius = default_box_radius(spec, x, p, m)

    axis = np.linspace(-q_box_radius, q_box_radius, grid_n)
    axis[grid_n // 2] = 0.0
    mesh = np.stack(np.meshgrid(*([axis] * p.shape[0]), indexing="ij"))
    q = mesh.reshape(p.shape[0], -1)
    shifted = p[:, None] - q
    values = eval_H(spec.base, x, shifted, np.full(q.shape[1], m)) + K(
        q, spec.alpha
    ) / spec.epsilon
    return float(np.min(values))


@dataclass(frozen=True)
class EnvelopeBoundsReport:
    """Sampled slacks of the envelope growth bounds, keyed by bound name."""

    bounds: dict[str, SampleReport]

    @property
    def worst(self) -> SampleReport:
        return min(self.bounds.values(), key=lambda report: report.worst_scaled)

    @property
    def worst_slack(self) -> float:
        return self.worst.worst

    @property
    def witness(self) -> dict:
        return {"bound": self.worst.name, **self.worst.witness}

    @property
    def passed(self) -> bool:
        return all(report.passed for report in self.bounds.values())

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "worst_slack": self.worst_slack,
            "bounds": {name: report.to_dict() for name, report in self.bounds.items()},
        }


def envelope_certificate(base: HamiltonianSpec) -> GrowthCertificate:
    """Constant C that serves every envelope bound for a Power or Weak base.

    The upper bound uses the point |p - q| = 1, where H is at most
    max(a) + max(g) h(1) - b m^beta.
    """
    a_min, a_max = base.a.min(), base.a.max()
    b_min, b_max = base.b.min(), base.b.max()
    bump = 0.0
    if base.family is Family.WEAK and base.g is not None and base.h_kernel:
        bump = base.g.max() * float(kernel_parts(base.h_kernel, np.asarray(1.0))[0])
    candidates = [1.0, b_max, a_max + bump - 2.0]
    candidates += [1.0 / v for v in (a_min, b_min) if v > 0]
    return GrowthCertificate(max(candidates), Inequality.ASSH_LOWER)


def check_envelope_bounds(
    spec: EnvelopeSpec,
    cert: GrowthCertificate,
    samples: int,
    rng_seed: int = 0,
    m_floor: float = 0.0,
) -> EnvelopeBoundsReport:
    """Sample the envelope bounds with base constant C = cert.C.

    - upper:      H^eps <= (2/eps)(|p|^alpha + 1) - m^beta/C + C
    - gradient:   |D_pH^eps| <= (alpha/eps)(1 + |p|^(alpha-1) + m^(beta - beta/alpha))
    - lower:      H^eps >= |p|^alpha/C' - C'(m^beta + 1),  C' = 2^alpha (C + 1)
    - lagrangian: D_pH^eps . p - H^eps >= m^beta/C - C
    - below_base: H^eps <= H
    - identity:   H^eps = H(p - q) + K(q)/eps
    """
    base = spec.base
    if base.family not in (Family.POWER, Family.WEAK):
        raise FamilyMismatchError(
            f"envelope bounds apply to power and weak bases, not {base.family}"
        )

    rng = make_rng(rng_seed, "envelope-bounds")
    x, p, m = sample_points(base, rng, samples, m_floor)
    env = envelope(spec, x, p, m)

    C, eps, alpha, beta = cert.C, spec.epsilon, spec.alpha, base.beta
    C_low = 2.0**alpha * (C + 1.0)
    r, _ = momentum_norm(p)
    m_beta = m**beta
    H = eval_H(base, x, p, m)
    grad_norm = np.sqrt(np.sum(env.grad_p**2, axis=0))
    lagrangian = np.sum(env.grad_p * p, axis=0) - env.value
    recomposed = eval_H(base, x, p - env.q_star, m) + K(env.q_star, alpha) / eps

    sides = {
        "upper": (2.0 / eps * (r**alpha + 1.0) - m_beta / C + C, env.value),
        "gradient": (
            alpha / eps * (1.0 + r ** (alpha - 1.0) + m ** (beta - beta / alpha)),
            grad_norm,
        ),
        "lower": (env.value, r**alpha / C_low - C_low * (m_beta + 1.0)),
        "lagrangian": (lagrangian, m_beta / C - C),
        "below_base": (H, env.value),
        "identity": (-np.abs(env.value - recomposed), np.zeros_like(r)),
    }

    fields = {"x": x, "p": p, "m": m, "q_star": env.q_star}
    bounds = {}
    for name, (big, small) in sides.items():
        scale = np.maximum(1.0, np.abs(big) + np.abs(small))
        tol = 1e-9 if name == "identity" else 1e-10
        bounds[name] = summarize_samples(name, big - small, scale, fields, tol=tol)

    report = EnvelopeBoundsReport(bounds)
    logger.debug(f"envelope bounds at eps={eps:g}: worst {report.worst_slack:.3e}")
    return report


def check_envelope_monotonicity(
    spec: EnvelopeSpec,
    sample_count: int,
    m_floor: float = 0.0,
    rng_seed: int = 0,
) -> SampleReport:
    """The monotonicity left-hand side built from (H^eps, m D_pH^eps)."""
    base = spec.base
    rng = make_rng(rng_seed, "envelope-hmon")
    x, p1, m1 = sample_points(base, rng, sample_count, m_floor)
    _, p2, m2 = sample_points(base, rng, sample_count, m_floor)

    e1 = envelope(spec, x, p1, m1)
    e2 = envelope(spec, x, p2, m2)
    density_term = (e2.value - e1.value) * (m1 - m2)
    flux_term = np.sum((m1 * e1.grad_p - m2 * e2.grad_p) * (p1 - p2), axis=0)
    scale = np.maximum(1.0, np.abs(density_term) + np.abs(flux_term))

    return summarize_samples(
        "envelope_hmon",
        density_term + flux_term,
        scale,
        {"x": x, "p1": p1, "m1": m1, "p2": p2, "m2": m2},
    )
