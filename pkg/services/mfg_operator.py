"""Discrete regularized MFG operator and its residuals.

For a state z = (m, u) with p = gradient(u) the operator has two slots:

    eta_slot = -u - H(x, p, m) + V
    nu_slot  = -divergence(m D_pH(x, p, m) + eps |p|^(gb-2) p)
               + (m - 1) + eps |u|^(gb-2) u

where gb is the exponent gamma_bar. eta_slot pairs against variations of m
and nu_slot against variations of u, so

    <A(z1) - A(z2), z1 - z2>_h

reduces node by node to the monotonicity inequality of H plus the monotone
gb-Laplacian terms; the -u and (m - 1) cross terms cancel.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from services.exceptions import ValidationError
from services.grid import (
    ScalarField,
    TorusGrid,
    div_array,
    grad_array,
    inner_product,
    integral_array,
    sobolev_norm_pow,
)
from services.hamiltonian import (
    ExponentSet,
    Family,
    HamiltonianSpec,
    SampleReport,
    eval_H,
    eval_mDpH,
    momentum_norm,
    summarize_samples,
)
from services.infconv import EnvelopeSpec, envelope
from services.rng import make_rng

logger = logging.getLogger(__name__)

# Relative threshold separating {m > 0} from floating-point vacuum
SUPPORT_THRESHOLD = 1e-8


@dataclass(frozen=True, eq=False)
class MFGState:
    """The unknown (m, u); m may be infeasible until projected."""

    m: ScalarField
    u: ScalarField

    def __post_init__(self) -> None:
        if self.m.grid != self.u.grid:
            raise ValidationError("m and u live on different grids")

    @property
    def grid(self) -> TorusGrid:
        return self.m.grid

    @classmethod
    def from_arrays(cls, grid: TorusGrid, m: np.ndarray, u: np.ndarray) -> "MFGState":
        return cls(ScalarField(grid, m), ScalarField(grid, u))

    @classmethod
    def constant(cls, grid: TorusGrid, m: float, u: float) -> "MFGState":
        return cls(ScalarField.constant(grid, m), ScalarField.constant(grid, u))

    def admissible(self, m_floor: float = 0.0) -> bool:
        return self.m.min() >= m_floor


@dataclass(frozen=True, eq=False)
class OperatorOutput:
    eta_slot: ScalarField
    nu_slot: ScalarField

    def pair(self, eta: ScalarField, nu: ScalarField) -> float:
        """<A[z], (eta, nu)> in the h-weighted pairing."""
        return inner_product(self.eta_slot, eta) + inner_product(self.nu_slot, nu)


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Potential, Hamiltonian and regularization of one MFG problem.

    `m_floor` realizes the congestion domain {m >= floor > 0}; the envelope
    variant ties its epsilon to `epsilon`.
    """

    V: ScalarField
    spec: HamiltonianSpec
    epsilon: float = 0.0
    use_envelope: bool = False
    m_floor: float = 0.0
    exponents: ExponentSet | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.exponents is None:
            object.__setattr__(self, "exponents", self.spec.exponents)

        errors = []
        if self.V.grid != self.spec.grid:
            errors.append("potential V and the Hamiltonian live on different grids")
        if not self.epsilon >= 0:
            errors.append(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.m_floor >= 0:
            errors.append(f"m_floor must be >= 0, got {self.m_floor}")
        if self.spec.family is Family.CONGESTION and self.m_floor <= 0:
            errors.append("the congestion family needs m_floor > 0")
        if self.use_envelope and not 0 < self.epsilon <= 1:
            errors.append("the envelope needs 0 < epsilon <= 1")
        if errors:
            raise ValidationError(errors)

    @property
    def grid(self) -> TorusGrid:
        return self.V.grid

    @property
    def gamma_bar(self) -> float:
        assert self.exponents is not None
        return self.exponents.gamma_bar

    @property
    def envelope_spec(self) -> EnvelopeSpec | None:
        if not self.use_envelope:
            return None
        return EnvelopeSpec(self.spec, self.epsilon)

    def with_stage(self, epsilon: float, m_floor: float) -> "ProblemData":
        """Copy with a new regularization level and density floor."""
        return replace(self, epsilon=epsilon, m_floor=m_floor)


def signed_power(s: np.ndarray, exponent: float) -> np.ndarray:
    """sign(s)|s|^exponent, with 0 at s = 0."""
    return np.sign(s) * np.abs(s) ** exponent


def _hamiltonian_terms(
    data: ProblemData, p: np.ndarray, m: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(H, m D_pH) on the whole grid, envelope variant when configured."""
    if np.any(m < 0):
        raise ValidationError("the operator needs m >= 0 at every node")

    env_spec = data.envelope_spec
    if env_spec is not None:
        env = envelope(env_spec, None, p, m)
        H, flux = env.value, m * env.grad_p
    else:
        H = eval_H(data.spec, None, p, m)
        flux = eval_mDpH(data.spec, None, p, m)

    if not np.all(np.isfinite(H)):
        raise ValidationError(
            "Hamiltonian is +inf at a node (density below the congestion floor)"
        )
    return H, flux


def regularization_flux(data: ProblemData, p: np.ndarray) -> np.ndarray:
    """eps |p|^(gb-2) p, written as eps |p|^(gb-1) p/|p| so it is 0 at p = 0."""
    r, unit = momentum_norm(p)
    return data.epsilon * r ** (data.gamma_bar - 1.0) * unit


def apply(data: ProblemData, z: MFGState) -> OperatorOutput:
    """Evaluate the operator at z.

    Raises:
        ValidationError: If z lives on another grid, has negative density,
            or hits the +inf extension of a congestion Hamiltonian.
    """
    grid = data.grid
    if z.grid != grid:
        raise ValidationError("state and problem data live on different grids")

    m, u = z.m.values, z.u.values
    p = grad_array(grid, u)
    H, flux = _hamiltonian_terms(data, p, m)

    eta = -u - H + data.V.values
    nu = (
        -div_array(grid, flux + regularization_flux(data, p))
        + (m - 1.0)
        + data.epsilon * signed_power(u, data.gamma_bar - 1.0)
    )
    return OperatorOutput(ScalarField(grid, eta), ScalarField(grid, nu))


def monotonicity_pairing(data: ProblemData, z1: MFGState, z2: MFGState) -> float:
    """<apply(z1) - apply(z2), z1 - z2>_h over both slots."""
    a1, a2 = apply(data, z1), apply(data, z2)
    grid = data.grid
    d_eta = a1.eta_slot.values - a2.eta_slot.values
    d_nu = a1.nu_slot.values - a2.nu_slot.values
    return integral_array(
        grid, d_eta * (z1.m.values - z2.m.values) + d_nu * (z1.u.values - z2.u.values)
    )


def random_state(
    grid: TorusGrid, rng: np.random.Generator, m_floor: float = 0.0, modes: int = 3
) -> MFGState:
    """Smooth random state: a few Fourier modes per slot, m above `m_floor`.

    Mode k of u has amplitude of order 1/(2 pi k^2), which keeps |Du| of order
    one so that fast-growing kernels stay finite.
    """
    coords = grid.coordinates
    m_log = np.zeros(grid.shape)
    u = np.full(grid.shape, rng.normal())
    for k in range(1, modes + 1):
        for axis in range(grid.dim):
            phase = 2.0 * np.pi * k * coords[axis]
            m_log += rng.normal(scale=1.0 / k) * np.sin(phase + rng.uniform(0, 6.3))
            u_scale = 1.0 / (2.0 * np.pi * k**2)
            u += rng.normal(scale=u_scale) * np.cos(phase + rng.uniform(0, 6.3))
    m = m_floor + np.exp(m_log + rng.normal())
    return MFGState.from_arrays(grid, m, u)


def check_operator_monotonicity(
    data: ProblemData, pair_count: int, rng_seed: int = 0, tol: float = 1e-9
) -> SampleReport:
    """Sample <A(z1) - A(z2), z1 - z2>_h over random admissible pairs.

    Each pairing is scaled by the h-weighted sum of the absolute nodal
    products, so the reported relative minimum is insensitive to the size of
    the operator values.
    """
    if pair_count < 1:
        raise ValidationError("pair_count must be at least 1")

    rng = make_rng(rng_seed, f"operator-pairing-{data.epsilon!r}")
    grid = data.grid
    values, scales = np.empty(pair_count), np.empty(pair_count)
    for index in range(pair_count):
        z1 = random_state(grid, rng, data.m_floor)
        z2 = random_state(grid, rng, data.m_floor)
        a1, a2 = apply(data, z1), apply(data, z2)
        products = (a1.eta_slot.values - a2.eta_slot.values) * (
            z1.m.values - z2.m.values
        ) + (a1.nu_slot.values - a2.nu_slot.values) * (z1.u.values - z2.u.values)
        values[index] = integral_array(grid, products)
        scales[index] = max(1.0, integral_array(grid, np.abs(products)))

    report = summarize_samples(
        f"operator_pairing[eps={data.epsilon:g}]",
        values,
        scales,
        {"pair": np.arange(pair_count)},
        tol=tol,
    )
    logger.debug(f"{report.name}: worst scaled pairing {report.worst_scaled:.3e}")
    return report


@dataclass(frozen=True, eq=False)
class HJResidual:
    field: ScalarField
    max_pos: float
    max_on_support: float
    support_size: int


@dataclass(frozen=True, eq=False)
class TransportResidual:
    """Transport row at nodal test functions plus the mass identity split."""

    field: ScalarField
    l1: float
    mass_gap: float
    mass_defect: float
    penalty_mass: float


def support_mask(data: ProblemData, m: np.ndarray) -> np.ndarray:
    """Nodes counted as {m > 0}: above the floor by a relative threshold."""
    threshold = SUPPORT_THRESHOLD * max(float(np.max(m)), 1.0)
    return m > data.m_floor + threshold


def hj_residual(data: ProblemData, z: MFGState) -> HJResidual:
    """u + H(x, Du, m) - V with its positive part and its size on the support."""
    grid = data.grid
    m, u = z.m.values, z.u.values
    H, _ = _hamiltonian_terms(data, grad_array(grid, u), m)
    residual = u + H - data.V.values

    mask = support_mask(data, m)
    on_support = float(np.max(np.abs(residual[mask]))) if mask.any() else 0.0
    return HJResidual(
        field=ScalarField(grid, residual),
        max_pos=float(np.max(np.maximum(residual, 0.0))),
        max_on_support=on_support,
        support_size=int(mask.sum()),
    )


def transport_residual(data: ProblemData, z: MFGState) -> TransportResidual:
    """nu_slot as a field, its L1 norm and the mass identity (test function 1)."""
    grid = data.grid
    nu = apply(data, z).nu_slot
    mass_defect = integral_array(grid, z.m.values - 1.0)
    penalty_mass = data.epsilon * integral_array(
        grid, signed_power(z.u.values, data.gamma_bar - 1.0)
    )
    return TransportResidual(
        field=nu,
        l1=integral_array(grid, np.abs(nu.values)),
        mass_gap=mass_defect + penalty_mass,
        mass_defect=mass_defect,
        penalty_mass=penalty_mass,
    )


@dataclass(frozen=True)
class WeakCertificate:
    min_value: float
    witness: int
    values: tuple[float, ...]

    def passed(self, tol: float) -> bool:
        return self.min_value >= -tol


def weak_solution_certificate(
    data: ProblemData, z: MFGState, test_pairs: list[MFGState]
) -> WeakCertificate:
    """Minimum over test pairs w = (mu, upsilon) of <A(w), w - z>_h.

    A non-negative minimum means z behaves like a weak solution against the
    supplied tests.

    Raises:
        ValidationError: If a test density is not strictly positive.
    """
    if not test_pairs:
        raise ValidationError("weak certificate needs at least one test pair")

    values = []
    for index, w in enumerate(test_pairs):
        if w.m.min() <= 0:
            raise ValidationError(f"test pair {index} has a non-positive density")
        out = apply(data, w)
        values.append(
            out.pair(
                ScalarField(data.grid, w.m.values - z.m.values),
                ScalarField(data.grid, w.u.values - z.u.values),
            )
        )

    witness = int(np.argmin(values))
    return WeakCertificate(float(values[witness]), witness, tuple(values))


def standard_test_battery(grid: TorusGrid) -> list[MFGState]:
    """Sixteen smooth pairs (1 + 0.5 sin(2 pi k x_0), 0.3 cos(2 pi j x_last))."""
    first, last = grid.coordinates[0], grid.coordinates[-1]
    return [
        MFGState.from_arrays(
            grid,
            1.0 + 0.5 * np.sin(2.0 * np.pi * k * first),
            0.3 * np.cos(2.0 * np.pi * j * last),
        )
        for k in range(4)
        for j in range(4)
    ]


def regularization_energy(data: ProblemData, u: ScalarField) -> float:
    """(eps/gb) ||u||^gb_{W^{1,gb}}; its gradient is the eps part of nu_slot."""
    return data.epsilon / data.gamma_bar * sobolev_norm_pow(u, data.gamma_bar)


def regularization_gradient(data: ProblemData, u: ScalarField) -> ScalarField:
    grid = data.grid
    p = grad_array(grid, u.values)
    values = -div_array(grid, regularization_flux(data, p)) + data.epsilon * (
        signed_power(u.values, data.gamma_bar - 1.0)
    )
    return ScalarField(grid, values)


def coercivity_profile(
    data: ProblemData,
    z_ref: MFGState,
    w: MFGState,
    scales: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0),
) -> list[float]:
    """pairing(z_ref + t w, z_ref) / ||t w||_h for each t in `scales`."""
    grid = data.grid
    w_norm = np.sqrt(
        integral_array(grid, w.m.values**2) + integral_array(grid, w.u.values**2)
    )
    ratios = []
    for t in scales:
        z_t = MFGState.from_arrays(
            grid, z_ref.m.values + t * w.m.values, z_ref.u.values + t * w.u.values
        )
        ratios.append(monotonicity_pairing(data, z_t, z_ref) / (t * w_norm))
    return ratios


def _is_constant(f: ScalarField) -> bool:
    return f.max() == f.min()


def constant_solution(data: ProblemData) -> MFGState:
    """Exact spatially constant zero of the operator for constant data.

    With p = 0 the Hamiltonian reduces to -b m^beta, so u = V + b m^beta and
    m solves m - 1 + eps sign(u)|u|^(gb-1) = 0, which is increasing in m.

    Raises:
        ValidationError: If V, a or b vary in space, or the root lies below
            the density floor.
    """
    spec = data.spec
    if not all(_is_constant(f) for f in (data.V, spec.a, spec.b)):
        raise ValidationError("constant solution needs constant V, a and b")

    V, b = data.V.max(), spec.b.max()
    eps, gb, beta = data.epsilon, data.gamma_bar, spec.beta

    def u_of(m: float) -> float:
        return V + b * m**beta

    def mass(m: float) -> float:
        return m - 1.0 + eps * float(signed_power(np.asarray(u_of(m)), gb - 1.0))

    lo = data.m_floor
    if mass(lo) > 0:
        raise ValidationError("constant solution would sit below the density floor")
    if mass(lo) == 0:
        root = lo
    else:
        hi = 1.0
        while mass(hi) < 0:
            hi *= 2.0
        root = brentq(mass, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)

    logger.debug(f"constant solution m={root:.12g}, u={u_of(root):.12g}")
    return MFGState.constant(data.grid, root, u_of(root))
