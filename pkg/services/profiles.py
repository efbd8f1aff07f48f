"""Analytic coefficient profiles for a, b, g and the potential V.

A profile is a short string:

- ``const:c``: the constant c.
- ``sin1:c0,c1``: c0 + c1 * sin(2 pi x_0).
- ``cos1:c0,c1``: c0 + c1 * cos(2 pi x_0).
"""

import re

import numpy as np

from services.exceptions import ValidationError
from services.grid import ScalarField, TorusGrid

_PROFILE_RE = re.compile(r"^(const|sin1|cos1):(.+)$")
_ARITY = {"const": 1, "sin1": 2, "cos1": 2}


def validate_profile(profile: str) -> tuple[bool, str | None]:
    """Check a profile string without building it.

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not isinstance(profile, str):
        return False, f"profile must be a string, got {type(profile).__name__}"

    match = _PROFILE_RE.match(profile.strip())
    if not match:
        return False, f"unknown profile '{profile}' (use const:, sin1: or cos1:)"

    kind, args = match.groups()
    parts = [part.strip() for part in args.split(",")]
    if len(parts) != _ARITY[kind]:
        return False, f"profile '{profile}' needs {_ARITY[kind]} number(s)"

    try:
        numbers = [float(part) for part in parts]
    except ValueError:
        return False, f"profile '{profile}' has a non-numeric parameter"

    if not all(np.isfinite(numbers)):
        return False, f"profile '{profile}' has a non-finite parameter"

    return True, None


def profile_bounds(profile: str) -> tuple[float, float]:
    """Exact (min, max) of the profile over the torus."""
    kind, numbers = _parse(profile)
    if kind == "const":
        return numbers[0], numbers[0]
    c0, c1 = numbers
    return c0 - abs(c1), c0 + abs(c1)


def build_profile(grid: TorusGrid, profile: str) -> ScalarField:
    """Sample a profile at the grid nodes."""
    kind, numbers = _parse(profile)
    if kind == "const":
        return ScalarField.constant(grid, numbers[0])

    x0 = grid.coordinates[0]
    c0, c1 = numbers
    wave = np.sin if kind == "sin1" else np.cos
    return ScalarField(grid, c0 + c1 * wave(2.0 * np.pi * x0))


def _parse(profile: str) -> tuple[str, list[float]]:
    is_valid, error = validate_profile(profile)
    if not is_valid:
        raise ValidationError(error or f"invalid profile '{profile}'")
    kind, args = profile.strip().split(":", 1)
    return kind, [float(part) for part in args.split(",")]
