"""Prototype Hamiltonian families and their sampled certificates.

Three families are built in, all radial in the momentum p:

- Power:       H(x,p,m) = a(x)|p|^alpha - b(x) m^beta
- Congestion:  H(x,p,m) = a(x)|p|^k / m^tau - b(x) m^beta,  k = alpha (1 + tau/beta)
- Weak:        H(x,p,m) = g(x) h(p) + a(x)|p|^alpha - b(x) m^beta

Each H is written as ``phi(x, |p|, m) - b(x) m^beta`` with a convex radial
profile phi, and D_pH = phi'(|p|) p/|p| (zero at p = 0, the minimal-norm
subgradient).

At m = 0 the Hamiltonian takes its monotone limit sup_{m>0} H, which is +inf
for Congestion with tau > 0 and p != 0. The flux m D_pH is extended to m = 0
by its limit: zero for Power, Weak and Congestion with tau < 1, and
a k |p|^{k-2} p for Congestion with tau = 1.

Weak kernels are convex, C^1 and independent of m. For such a kernel the
monotonicity left-hand side splits as

    m1 [P(p2) - P(p1) - DP(p1).(p2 - p1)] + m2 [P(p1) - P(p2) - DP(p2).(p1 - p2)]
    + b (m1^beta - m2^beta)(m1 - m2)

with P the p-part, and each bracket is a non-negative Bregman gap. That is
why any convex m-independent kernel keeps the family monotone.
"""

import logging
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np

from services.exceptions import FamilyMismatchError, ValidationError
from services.grid import ScalarField, TorusGrid
from services.rng import make_rng

logger = logging.getLogger(__name__)

# Smallest density drawn by the samplers when no floor is given
SAMPLE_M_TINY = 1e-8
SAMPLE_M_MAX = 10.0
SAMPLE_P_MAX = 10.0

# Relative tolerance used to turn a sampled minimum into pass/fail
CERTIFICATE_TOL = 1e-10


class Family(StrEnum):
    POWER = "power"
    CONGESTION = "congestion"
    WEAK = "weak"


class Kernel(StrEnum):
    """Convex radial kernels h(p) available to the Weak family."""

    EXP = "exp"  # h(p) = exp(|p|^2) - 1
    COSH = "cosh"  # h(p) = cosh(|p|) - 1


class Inequality(StrEnum):
    ASSH_UPPER = "assH.upper"
    ASSH_DPH_UPPER = "assH.DpH.upper"
    ASSH_LOWER = "assH.lower"
    DPH_DOT_P_MINUS_H = "DpHdotp-minus-H"
    BOUNDS_H = "boundsH"
    ALTERNATIVE2 = "alternative2"
    BOUNDS_H_PLUS = "boundsH+"
    BOUNDS_MDPH = "boundsmDpH"
    BOUNDS_MDPH_PLUS = "boundsmDpH+"


APPLICABLE_FAMILIES: dict[Inequality, frozenset[Family]] = {
    Inequality.ASSH_UPPER: frozenset(Family),
    Inequality.ASSH_DPH_UPPER: frozenset({Family.POWER, Family.CONGESTION}),
    Inequality.ASSH_LOWER: frozenset(Family),
    Inequality.DPH_DOT_P_MINUS_H: frozenset(Family),
    Inequality.BOUNDS_H: frozenset({Family.POWER}),
    Inequality.ALTERNATIVE2: frozenset({Family.POWER}),
    Inequality.BOUNDS_H_PLUS: frozenset({Family.CONGESTION, Family.POWER}),
    Inequality.BOUNDS_MDPH: frozenset({Family.POWER}),
    Inequality.BOUNDS_MDPH_PLUS: frozenset({Family.CONGESTION, Family.POWER}),
}


@dataclass(frozen=True)
class ExponentSet:
    """Integrability exponents derived from (alpha, beta)."""

    beta_bar: float
    gamma_bar: float
    beta_bar_conj: float
    gamma_bar_conj: float

    @classmethod
    def from_parameters(cls, alpha: float, beta: float) -> "ExponentSet":
        beta_bar = beta + 1.0
        gamma_bar = alpha * (beta + 1.0) / beta
        return cls(
            beta_bar=beta_bar,
            gamma_bar=gamma_bar,
            beta_bar_conj=beta_bar / (beta_bar - 1.0),
            gamma_bar_conj=gamma_bar / (gamma_bar - 1.0),
        )

    def holder_residual(self, alpha: float) -> float:
        """|1/gamma_bar' - (1/beta_bar + (alpha - 1)/gamma_bar)|."""
        return abs(
            1.0 / self.gamma_bar_conj
            - (1.0 / self.beta_bar + (alpha - 1.0) / self.gamma_bar)
        )


@dataclass(frozen=True)
class GrowthCertificate:
    """A growth inequality together with the constant it is certified with."""

    C: float
    inequality_id: Inequality

    def __post_init__(self) -> None:
        if not self.C >= 1.0:
            raise ValidationError(f"certificate constant must be >= 1, got {self.C}")
        object.__setattr__(self, "inequality_id", Inequality(self.inequality_id))


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """One of the built-in Hamiltonian families with its coefficient fields.

    With ``strict=False`` the sign conditions on a, b and g are not enforced,
    which lets deliberately broken data reach the certificate samplers.
    """

    family: Family
    alpha: float
    beta: float
    a: ScalarField
    b: ScalarField
    tau: float = 0.0
    g: ScalarField | None = None
    h_kernel: Kernel | None = None
    strict: bool = field(default=True, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        if self.h_kernel is not None:
            object.__setattr__(self, "h_kernel", Kernel(self.h_kernel))

        errors = []
        if not self.alpha > 1:
            errors.append(f"alpha must be > 1, got {self.alpha}")
        if not self.beta > 0:
            errors.append(f"beta must be > 0, got {self.beta}")
        if not 0.0 <= self.tau <= 1.0:
            errors.append(f"tau must lie in [0, 1], got {self.tau}")
        if self.family is not Family.CONGESTION and self.tau != 0.0:
            errors.append("tau is only meaningful for the congestion family")
        if self.a.grid != self.b.grid:
            errors.append("coefficients a and b live on different grids")
        if self.strict and self.a.min() <= 0:
            errors.append("coefficient a must be strictly positive")
        if self.strict and self.b.min() <= 0:
            errors.append("coefficient b must be strictly positive")

        if self.family is Family.WEAK:
            if self.g is None or self.h_kernel is None:
                errors.append("weak family needs both g and h_kernel")
            elif self.g.grid != self.a.grid:
                errors.append("coefficient g lives on a different grid")
            elif self.strict and self.g.min() < 0:
                errors.append("coefficient g must be non-negative")

        if errors:
            raise ValidationError(errors)

    @property
    def grid(self) -> TorusGrid:
        return self.a.grid

    @property
    def exponents(self) -> ExponentSet:
        return ExponentSet.from_parameters(self.alpha, self.beta)

    @property
    def kinetic_exponent(self) -> float:
        """Power of |p| in the kinetic term (alpha unless congested)."""
        if self.family is Family.CONGESTION:
            return self.alpha * (1.0 + self.tau / self.beta)
        return self.alpha

    @property
    def m_independent_momentum(self) -> bool:
        """True when the p-part of H does not depend on m."""
        return self.family is not Family.CONGESTION or self.tau == 0.0

    def coefficients(
        self, x: np.ndarray | int | None
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(a, b, g) at flat node indices `x`, or on the whole grid for None."""
        g = self.g if self.g is not None else ScalarField.zeros(self.grid)
        if x is None:
            return self.a.values, self.b.values, g.values
        idx = np.asarray(x)
        return (
            self.a.values.ravel()[idx],
            self.b.values.ravel()[idx],
            g.values.ravel()[idx],
        )


def kernel_parts(kernel: Kernel, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(h, h') of a radial kernel at radius r."""
    if kernel is Kernel.EXP:
        return np.expm1(r**2), 2.0 * r * np.exp(r**2)
    return np.cosh(r) - 1.0, np.sinh(r)


def radial_parts(
    spec: HamiltonianSpec, x: np.ndarray | int | None, r: np.ndarray, m: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(phi, phi') of the radial p-part at radius r.

    For Congestion this needs m > 0; the other families ignore m.
    """
    a, _, g = spec.coefficients(x)
    alpha = spec.alpha

    if spec.family is Family.CONGESTION:
        k = spec.kinetic_exponent
        crowd = np.asarray(m, dtype=float) ** spec.tau
        return a * r**k / crowd, a * k * r ** (k - 1.0) / crowd

    phi = a * r**alpha
    dphi = a * alpha * r ** (alpha - 1.0)
    if spec.family is Family.WEAK:
        assert spec.h_kernel is not None
        h, dh = kernel_parts(spec.h_kernel, r)
        phi = phi + g * h
        dphi = dphi + g * dh
    return phi, dphi


def momentum_norm(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(|p|, p/|p|) with the unit vector set to zero where p = 0."""
    r = np.sqrt(np.sum(p**2, axis=0))
    unit = np.divide(p, r, out=np.zeros_like(p), where=r > 0)
    return r, unit


def _prepare(p, m) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=float)
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValidationError("momentum p must be finite")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise ValidationError("density m must be finite and non-negative")
    return p, m


def eval_H(
    spec: HamiltonianSpec, x: np.ndarray | int | None, p, m
) -> np.ndarray:
    """H(x, p, m) with the monotone extension at m = 0 (may be +inf).

    Args:
        spec: Hamiltonian family and coefficients.
        x: Flat node index (or array of them); None means every node, in
            which case p has shape (dim, *grid.shape).
        p: Momentum, leading axis of length dim.
        m: Density, broadcastable against p[0].

    Returns:
        Array of Hamiltonian values.
    """
    p, m = _prepare(p, m)
    _, b, _ = spec.coefficients(x)
    r, _ = momentum_norm(p)
    density_term = b * m**spec.beta

    if spec.family is not Family.CONGESTION:
        phi, _ = radial_parts(spec, x, r, m)
        return phi - density_term

    safe_m = np.where(m > 0, m, 1.0)
    phi, _ = radial_parts(spec, x, r, safe_m)
    if spec.tau > 0:
        phi_at_vacuum = np.where(r > 0, np.inf, 0.0)
    else:
        phi_at_vacuum = phi
    return np.where(m > 0, phi, phi_at_vacuum) - density_term


def momentum_gradient(
    spec: HamiltonianSpec, x: np.ndarray | int | None, p, m
) -> np.ndarray:
    """D_pH without the m > 0 guard; callers make sure m is admissible."""
    p = np.asarray(p, dtype=float)
    r, unit = momentum_norm(p)
    _, dphi = radial_parts(spec, x, r, m)
    return dphi * unit


def eval_DpH(spec: HamiltonianSpec, x: np.ndarray | int | None, p, m) -> np.ndarray:
    """p-gradient of H; requires m > 0 (use `eval_mDpH` at vacuum)."""
    p, m = _prepare(p, m)
    if np.any(m <= 0):
        raise ValidationError("D_pH is only defined for m > 0; use eval_mDpH")
    return momentum_gradient(spec, x, p, m)


def eval_mDpH(spec: HamiltonianSpec, x: np.ndarray | int | None, p, m) -> np.ndarray:
    """The flux m D_pH continuously extended to m = 0."""
    p, m = _prepare(p, m)
    r, unit = momentum_norm(p)

    if spec.family is Family.CONGESTION:
        a, _, _ = spec.coefficients(x)
        k = spec.kinetic_exponent
        # m^(1 - tau) is 1 at m = 0 when tau = 1 (0.0 ** 0.0 == 1.0)
        return a * k * r ** (k - 1.0) * m ** (1.0 - spec.tau) * unit

    _, dphi = radial_parts(spec, x, r, m)
    return m * dphi * unit


def hmon_lhs(
    spec: HamiltonianSpec, x, p1, m1, p2, m2
) -> tuple[np.ndarray, np.ndarray]:
    """Monotonicity left-hand side and its magnitude scale.

    Returns:
        Tuple of (lhs, scale) with scale = max(1, |density term| + |flux term|).
    """
    p1, m1 = _prepare(p1, m1)
    p2, m2 = _prepare(p2, m2)
    h1 = eval_H(spec, x, p1, m1)
    h2 = eval_H(spec, x, p2, m2)
    j1 = eval_mDpH(spec, x, p1, m1)
    j2 = eval_mDpH(spec, x, p2, m2)

    density_term = (h2 - h1) * (m1 - m2)
    flux_term = np.sum((j1 - j2) * (p1 - p2), axis=0)
    scale = np.maximum(1.0, np.abs(density_term) + np.abs(flux_term))
    return density_term + flux_term, scale


@dataclass(frozen=True)
class SampleReport:
    """Outcome of a sampled inequality check.

    `worst` is the raw minimum; `worst_scaled` divides each sample by its own
    magnitude max(1, |lhs| + |rhs|).

    `passed` is a relative test: it gates on `worst_scaled`, so a raw value of
    -1e-6 next to terms of size 1e8 still passes. Samples of order one are
    judged on their raw value. `passed_raw` is the absolute test
    `worst >= -tol`, which rounding in huge terms can fail on its own.
    """

    name: str
    worst: float
    worst_scaled: float
    witness: dict
    sample_count: int
    tol: float = CERTIFICATE_TOL

    @property
    def passed(self) -> bool:
        return self.worst_scaled >= -self.tol

    @property
    def passed_raw(self) -> bool:
        return self.worst >= -self.tol

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "worst": self.worst,
            "worst_scaled": self.worst_scaled,
            "passed": self.passed,
            "passed_raw": self.passed_raw,
            "sample_count": self.sample_count,
            "witness": self.witness,
        }


def sample_points(
    spec: HamiltonianSpec,
    rng: np.random.Generator,
    count: int,
    m_floor: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw (x, p, m): uniform node, uniform p in the box, log-uniform m."""
    x = rng.integers(spec.grid.node_count, size=count)
    p = rng.uniform(-SAMPLE_P_MAX, SAMPLE_P_MAX, size=(spec.grid.dim, count))
    m_low = max(m_floor, SAMPLE_M_TINY)
    m = np.exp(rng.uniform(np.log(m_low), np.log(SAMPLE_M_MAX), size=count))
    return x, p, m


def summarize_samples(
    name: str,
    values: np.ndarray,
    scale: np.ndarray,
    fields: dict[str, np.ndarray],
    tol: float = CERTIFICATE_TOL,
) -> SampleReport:
    scaled = values / scale
    worst_raw = int(np.argmin(values))
    worst_rel = int(np.argmin(scaled))
    witness = {
        key: np.asarray(val)[..., worst_raw].tolist() for key, val in fields.items()
    }
    witness["value"] = float(values[worst_raw])
    witness["scaled_index_value"] = float(values[worst_rel])
    return SampleReport(
        name=name,
        worst=float(values[worst_raw]),
        worst_scaled=float(scaled[worst_rel]),
        witness=witness,
        sample_count=int(values.size),
        tol=tol,
    )


def check_monotonicity(
    spec: HamiltonianSpec,
    sample_count: int,
    m_floor: float = 0.0,
    rng_seed: int = 0,
) -> SampleReport:
    """Sample the monotonicity inequality at pairs sharing a node.

    Returns:
        A `SampleReport` whose `worst` is the minimum left-hand side and whose
        witness holds the minimizing (x, p1, m1, p2, m2).
    """
    if sample_count < 1:
        raise ValidationError("sample_count must be at least 1")

    rng = make_rng(rng_seed, "hmon")
    x, p1, m1 = sample_points(spec, rng, sample_count, m_floor)
    _, p2, m2 = sample_points(spec, rng, sample_count, m_floor)
    lhs, scale = hmon_lhs(spec, x, p1, m1, p2, m2)

    report = summarize_samples(
        "hmon", lhs, scale, {"x": x, "p1": p1, "m1": m1, "p2": p2, "m2": m2}
    )
    logger.debug(f"hmon sampled {sample_count} pairs, min lhs {report.worst:.3e}")
    return report


def _bounds(field_: ScalarField) -> tuple[float, float]:
    return field_.min(), field_.max()


def _safe_inverse(value: float) -> float:
    return 1.0 / value if value > 0 else 1.0


def certified_constant(spec: HamiltonianSpec, inequality_id: Inequality) -> float:
    """Constant with which a built-in family satisfies the inequality.

    Derived from the extrema of a and b; equals 1 for a = b = 1, alpha = 2
    except for the gradient bound, which needs alpha * max(a), and the flux
    bounds, which need (alpha * max(a))^gamma_bar' by Young's inequality.
    """
    inequality_id = Inequality(inequality_id)
    a_min, a_max = _bounds(spec.a)
    b_min, b_max = _bounds(spec.b)
    inv_a, inv_b = _safe_inverse(a_min), _safe_inverse(b_min)

    match inequality_id:
        case Inequality.ASSH_UPPER | Inequality.DPH_DOT_P_MINUS_H:
            candidates = [inv_b]
        case Inequality.ASSH_DPH_UPPER:
            candidates = [spec.kinetic_exponent * a_max]
        case Inequality.ASSH_LOWER:
            candidates = [inv_a, b_max]
        case Inequality.BOUNDS_H | Inequality.BOUNDS_H_PLUS:
            candidates = [a_max, inv_b]
        case Inequality.ALTERNATIVE2:
            candidates = [b_max, inv_b, _safe_inverse(a_min * (spec.alpha - 1.0))]
        case Inequality.BOUNDS_MDPH | Inequality.BOUNDS_MDPH_PLUS:
            flux_coef = spec.kinetic_exponent * a_max
            candidates = [flux_coef**spec.exponents.gamma_bar_conj]
    return max([1.0, *candidates])


def growth_slack(
    spec: HamiltonianSpec,
    cert: GrowthCertificate,
    x,
    p: np.ndarray,
    m: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Slack (right side minus left side, oriented so >= 0 holds) and its scale."""
    family = spec.family
    if family not in APPLICABLE_FAMILIES[cert.inequality_id]:
        raise FamilyMismatchError(
            f"inequality {cert.inequality_id} does not apply to the {family} family"
        )

    p, m = _prepare(p, m)
    C = cert.C
    r, _ = momentum_norm(p)
    m_beta = m**spec.beta
    alpha, beta, tau = spec.alpha, spec.beta, spec.tau
    k = spec.kinetic_exponent
    H = eval_H(spec, x, p, m)

    def lagrangian() -> np.ndarray:
        return np.sum(momentum_gradient(spec, x, p, m) * p, axis=0) - H

    match cert.inequality_id:
        case Inequality.ASSH_UPPER:
            lhs = eval_H(spec, x, np.zeros_like(p), m)
            rhs = -m_beta / C + C
            slack = rhs - lhs
        case Inequality.ASSH_DPH_UPPER:
            lhs = np.sqrt(np.sum(momentum_gradient(spec, x, p, m) ** 2, axis=0))
            m_mixed = m ** (beta - beta / alpha)
            if family is Family.CONGESTION:
                rhs = C * (1.0 / m + 1.0 / m**tau) * r ** (k - 1.0) + C * (
                    m_mixed + 1.0 / m
                )
            else:
                rhs = C * (r ** (alpha - 1.0) + m_mixed + 1.0)
            slack = rhs - lhs
        case Inequality.ASSH_LOWER:
            lhs = H
            if family is Family.CONGESTION:
                rhs = r**k / (C * (m**tau + 1.0)) - C * (m_beta + 1.0)
            else:
                rhs = r**alpha / C - C * (m_beta + 1.0)
            slack = lhs - rhs
        case Inequality.DPH_DOT_P_MINUS_H:
            lhs = lagrangian()
            rhs = m_beta / C - C
            slack = lhs - rhs
        case Inequality.BOUNDS_H:
            lhs = H
            rhs = C * (r**alpha + 1.0) - m_beta / C
            slack = rhs - lhs
        case Inequality.ALTERNATIVE2:
            lhs = lagrangian()
            rhs = (r**alpha + m_beta) / C - C
            slack = np.minimum(H + C * (m_beta + 1.0), lhs - rhs)
        case Inequality.BOUNDS_H_PLUS:
            lhs = H
            rhs = C * (1.0 / m + 1.0 / m**tau) * (r**k + 1.0) - m_beta / C
            slack = rhs - lhs
        case Inequality.BOUNDS_MDPH | Inequality.BOUNDS_MDPH_PLUS:
            exps = spec.exponents
            flux = eval_mDpH(spec, x, p, m)
            lhs = np.sum(flux**2, axis=0) ** (0.5 * exps.gamma_bar_conj)
            rhs = C * (m**exps.beta_bar + r**exps.gamma_bar + 1.0)
            slack = rhs - lhs

    scale = np.maximum(1.0, np.abs(lhs) + np.abs(rhs))
    return slack, scale


def check_growth(
    spec: HamiltonianSpec,
    cert: GrowthCertificate,
    sample_count: int,
    rng_seed: int = 0,
    m_floor: float = 0.0,
) -> SampleReport:
    """Sample one growth inequality; a non-negative worst slack certifies it."""
    if spec.family not in APPLICABLE_FAMILIES[cert.inequality_id]:
        raise FamilyMismatchError(
            f"inequality {cert.inequality_id} does not apply to "
            f"the {spec.family} family"
        )
    rng = make_rng(rng_seed, f"growth:{cert.inequality_id}")
    x, p, m = sample_points(spec, rng, sample_count, m_floor)
    slack, scale = growth_slack(spec, cert, x, p, m)
    report = summarize_samples(
        str(cert.inequality_id), slack, scale, {"x": x, "p": p, "m": m}
    )
    logger.debug(
        f"{cert.inequality_id} with C={cert.C:g}: worst slack {report.worst:.3e}"
    )
    return report


def applicable_inequalities(spec: HamiltonianSpec) -> list[Inequality]:
    return [ineq for ineq, fams in APPLICABLE_FAMILIES.items() if spec.family in fams]


def check_hierarchy(
    spec: HamiltonianSpec, sample_count: int, rng_seed: int = 0
) -> SampleReport:
    """Young-type bound linking congestion growth to plain power growth.

    |p|^k/(m^tau + 1) + (m^beta + 1) >= 2^(-beta/(beta+tau)) |p|^alpha
    """
    rng = make_rng(rng_seed, "hierarchy")
    x, p, m = sample_points(spec, rng, sample_count)
    alpha, beta, tau = spec.alpha, spec.beta, spec.tau
    k = alpha * (1.0 + tau / beta)
    r, _ = momentum_norm(p)

    lhs = r**k / (m**tau + 1.0) + (m**beta + 1.0)
    rhs = 2.0 ** (-beta / (beta + tau)) * r**alpha
    scale = np.maximum(1.0, lhs + rhs)
    return summarize_samples("hierarchy", lhs - rhs, scale, {"x": x, "p": p, "m": m})


@dataclass(frozen=True)
class StructureReport:
    """Sampled structural properties implied by monotonicity.

    `vacuum_flux_gaps` holds the flux gaps along m = 2^-k; continuity at the
    vacuum shows up as a non-increasing sequence that ends below where it
    started (or is identically zero).
    """

    density_monotone: SampleReport
    momentum_convex: SampleReport
    vacuum_flux_gaps: tuple[float, ...]

    @property
    def vacuum_flux_continuous(self) -> bool:
        gaps = np.asarray(self.vacuum_flux_gaps)
        if gaps[-1] <= 1e-12:
            return True
        non_increasing = bool(np.all(np.diff(gaps) <= 1e-12 * (1.0 + gaps[:-1])))
        return non_increasing and gaps[-1] < gaps[0]

    @property
    def passed(self) -> bool:
        return (
            self.density_monotone.passed
            and self.momentum_convex.passed
            and self.vacuum_flux_continuous
        )

    def to_dict(self) -> dict:
        return {
            "density_monotone": self.density_monotone.to_dict(),
            "momentum_convex": self.momentum_convex.to_dict(),
            "vacuum_flux_gaps": list(self.vacuum_flux_gaps),
            "passed": self.passed,
        }


def vacuum_flux_gaps(
    spec: HamiltonianSpec, x, p: np.ndarray, levels: range = range(0, 61, 4)
) -> np.ndarray:
    """Relative gaps |J(p, 2^-k) - J(p, 0)| / (1 + |J(p, 1)|) for each k."""
    p = np.asarray(p, dtype=float)
    j0 = eval_mDpH(spec, x, p, np.zeros(p.shape[1:]))
    j1 = eval_mDpH(spec, x, p, np.ones(p.shape[1:]))
    ref = 1.0 + np.sqrt(np.sum(j1**2, axis=0))
    gaps = []
    for level in levels:
        m = np.full(p.shape[1:], 2.0**-level)
        jm = eval_mDpH(spec, x, p, m)
        gaps.append(np.max(np.sqrt(np.sum((jm - j0) ** 2, axis=0)) / ref))
    return np.array(gaps)


def check_structure(
    spec: HamiltonianSpec,
    sample_count: int,
    m_floor: float = 0.0,
    rng_seed: int = 0,
) -> StructureReport:
    """m -> H non-increasing, p -> H convex on lines, m D_pH continuous at 0."""
    rng = make_rng(rng_seed, "structure")
    x, p, m1 = sample_points(spec, rng, sample_count, m_floor)
    _, q, m2 = sample_points(spec, rng, sample_count, m_floor)
    low, high = np.minimum(m1, m2), np.maximum(m1, m2)

    h_low = eval_H(spec, x, p, low)
    h_high = eval_H(spec, x, p, high)
    decrease = h_low - h_high
    density_report = summarize_samples(
        "density_monotone",
        decrease,
        np.maximum(1.0, np.abs(h_low) + np.abs(h_high)),
        {"x": x, "p": p, "m_low": low, "m_high": high},
    )

    t = rng.uniform(0.0, 1.0, size=sample_count)
    h_p = eval_H(spec, x, p, m1)
    h_q = eval_H(spec, x, q, m1)
    h_mid = eval_H(spec, x, t * p + (1.0 - t) * q, m1)
    chord = t * h_p + (1.0 - t) * h_q
    convex_report = summarize_samples(
        "momentum_convex",
        chord - h_mid,
        np.maximum(1.0, np.abs(chord) + np.abs(h_mid)),
        {"x": x, "p": p, "q": q, "m": m1, "t": t},
    )

    gaps = vacuum_flux_gaps(spec, x[:64], p[:, :64])
    return StructureReport(
        density_report, convex_report, tuple(float(gap) for gap in gaps)
    )
