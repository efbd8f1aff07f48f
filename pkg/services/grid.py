"""Periodic lattice and discrete calculus on the flat torus.

The gradient uses forward differences and the divergence backward
differences, both with periodic wrap, so that

    <gradient(u), w>_h = -<u, divergence(w)>_h

holds up to rounding. Every pairing in the solver is the h^dim-weighted
Euclidean inner product defined here; with it the discrete MFG operator is
monotone node by node whenever the Hamiltonian is.

Reductions use numpy's pairwise summation over a contiguous array, which is
deterministic for a fixed grid shape.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from services.exceptions import ValidationError

SUPPORTED_DIMS = (1, 2)


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic lattice on [0, 1)^dim with row-major node indexing."""

    dim: int
    n_per_dim: int

    def __post_init__(self) -> None:
        if self.dim not in SUPPORTED_DIMS:
            raise ValidationError(f"grid dim must be 1 or 2, got {self.dim}")
        if self.n_per_dim < 2:
            raise ValidationError(
                f"grid n_per_dim must be at least 2, got {self.n_per_dim}"
            )

    @property
    def h(self) -> float:
        return 1.0 / self.n_per_dim

    @property
    def node_count(self) -> int:
        return self.n_per_dim**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_per_dim,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @cached_property
    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape (dim, *shape); axis k holds x_k = i_k * h."""
        axes = [np.arange(self.n_per_dim) * self.h for _ in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def unravel(self, flat_index: np.ndarray | int) -> tuple[np.ndarray, ...]:
        """Row-major multi-index of flat node numbers."""
        return np.unravel_index(flat_index, self.shape)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real value per node of `grid`."""

    grid: TorusGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.size != self.grid.node_count:
            raise ValidationError(
                f"scalar field has {values.size} values, grid has "
                f"{self.grid.node_count} nodes"
            )
        values = values.reshape(self.grid.shape)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "ScalarField":
        return cls.constant(grid, 0.0)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())


@dataclass(frozen=True, eq=False)
class VectorField:
    """Vector in R^dim per node of `grid`; values have shape (dim, *grid.shape)."""

    grid: TorusGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        expected = (self.grid.dim, *self.grid.shape)
        if values.size != self.grid.dim * self.grid.node_count:
            raise ValidationError(
                f"vector field has {values.size} values, expected shape {expected}"
            )
        values = values.reshape(expected)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def norm(self) -> np.ndarray:
        """Pointwise Euclidean norm, shape grid.shape."""
        return np.sqrt(np.sum(self.values**2, axis=0))


def grad_array(grid: TorusGrid, u: np.ndarray) -> np.ndarray:
    """Forward differences of a raw nodal array, shape (dim, *grid.shape)."""
    return np.stack(
        [(np.roll(u, -1, axis=k) - u) / grid.h for k in range(grid.dim)]
    )


def div_array(grid: TorusGrid, w: np.ndarray) -> np.ndarray:
    """Backward-difference divergence of a raw (dim, *shape) array."""
    out = np.zeros(grid.shape)
    for k in range(grid.dim):
        out += (w[k] - np.roll(w[k], 1, axis=k)) / grid.h
    return out


def gradient(u: ScalarField) -> VectorField:
    """Forward-difference gradient with periodic wrap."""
    return VectorField(u.grid, grad_array(u.grid, u.values))


def divergence(w: VectorField) -> ScalarField:
    """Backward-difference divergence, the exact negative adjoint of `gradient`."""
    return ScalarField(w.grid, div_array(w.grid, w.values))


def integral_array(grid: TorusGrid, f: np.ndarray) -> float:
    return float(grid.cell_volume * np.sum(np.ascontiguousarray(f)))


def integral(f: ScalarField) -> float:
    """h^dim times the sum of nodal values."""
    return integral_array(f.grid, f.values)


def inner_product(f: ScalarField | VectorField, g: ScalarField | VectorField) -> float:
    """h^dim-weighted Euclidean pairing of two scalar or two vector fields."""
    if f.grid != g.grid:
        raise ValidationError("inner product of fields on different grids")
    if f.values.shape != g.values.shape:
        raise ValidationError("inner product of a scalar and a vector field")
    return integral_array(f.grid, f.values * g.values)


def lp_norm_pow(f: ScalarField, p: float) -> float:
    """Discrete ||f||_p^p."""
    return integral_array(f.grid, np.abs(f.values) ** p)


def sobolev_norm_pow(u: ScalarField, p: float) -> float:
    """Discrete ||u||^p_{W^{1,p}} = integral of |Du|^p + |u|^p."""
    if p <= 1:
        raise ValidationError(f"Sobolev exponent must exceed 1, got {p}")
    du = np.sqrt(np.sum(grad_array(u.grid, u.values) ** 2, axis=0))
    return integral_array(u.grid, du**p + np.abs(u.values) ** p)
