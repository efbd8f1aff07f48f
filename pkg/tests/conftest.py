import json
from collections.abc import Callable

import pytest
from click.testing import CliRunner

from services.grid import ScalarField, TorusGrid
from services.hamiltonian import HamiltonianSpec
from services.mfg_operator import ProblemData

SpecFactory = Callable[..., HamiltonianSpec]


@pytest.fixture(name="grid_1d")
def grid_one_dimensional() -> TorusGrid:
    return TorusGrid(1, 16)


@pytest.fixture(name="grid_2d")
def grid_two_dimensional() -> TorusGrid:
    return TorusGrid(2, 8)


@pytest.fixture
def make_spec() -> SpecFactory:
    """Factory for Hamiltonians with constant coefficients."""

    def _make(
        grid: TorusGrid,
        family: str = "power",
        alpha: float = 2.0,
        beta: float = 1.0,
        a: float = 1.0,
        b: float = 1.0,
        tau: float = 0.0,
        g: float | None = None,
        h_kernel: str | None = None,
        strict: bool = True,
    ) -> HamiltonianSpec:
        return HamiltonianSpec(
            family=family,
            alpha=alpha,
            beta=beta,
            a=ScalarField.constant(grid, a),
            b=ScalarField.constant(grid, b),
            tau=tau,
            g=ScalarField.constant(grid, g) if g is not None else None,
            h_kernel=h_kernel,
            strict=strict,
        )

    return _make


@pytest.fixture(name="power_spec")
def power_hamiltonian(grid_1d: TorusGrid, make_spec: SpecFactory) -> HamiltonianSpec:
    """|p|^2 - m on a 1-D grid."""
    return make_spec(grid_1d)


@pytest.fixture
def make_problem() -> Callable[..., ProblemData]:
    def _make(
        spec: HamiltonianSpec,
        epsilon: float = 0.0,
        V: float = 0.0,
        m_floor: float = 0.0,
        use_envelope: bool = False,
    ) -> ProblemData:
        return ProblemData(
            V=ScalarField.constant(spec.grid, V),
            spec=spec,
            epsilon=epsilon,
            use_envelope=use_envelope,
            m_floor=m_floor,
        )

    return _make


@pytest.fixture
def write_config(tmp_path) -> Callable[..., str]:
    """Write a run config as JSON and return its path."""

    def _write(data: dict, name: str = "run.json") -> str:
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return str(path)

    return _write


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture(name="small_check_config")
def small_check_config_data() -> dict:
    """Power Hamiltonian with sample counts small enough for a unit test."""
    return {
        "grid": {"dim": 1, "n": 16},
        "hamiltonian": {"family": "power", "alpha": 2.0, "beta": 1.0},
        "check": {
            "samples": 2000,
            "envelope_epsilons": [1.0, 0.1],
            "operator_pairs": 40,
        },
    }
