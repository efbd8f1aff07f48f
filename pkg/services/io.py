"""Readers and writers for run artifacts.

Grid fields are dumped as CSV with one row per node in row-major order,
one integer index column per axis:

    index_0[,index_1],value

with every value written to 17 significant digits, so that reading a dump
back reproduces the field bit for bit.
"""

import csv
import json
import math
import os
from collections.abc import Iterable, Sequence
from typing import Any

import numpy as np

from services.exceptions import ValidationError
from services.grid import ScalarField, TorusGrid
from services.vi_solver import TraceRow

FLOAT_FORMAT = "{:.17g}"
TRACE_COLUMNS = ("stage", "iteration", "sigma", "natural_residual", "pairing_check")


def _fmt(value: float) -> str:
    return FLOAT_FORMAT.format(float(value))


def index_columns(dim: int) -> list[str]:
    return [f"index_{k}" for k in range(dim)]


def write_field_csv(path: str, field: ScalarField) -> None:
    grid = field.grid
    multi = grid.unravel(np.arange(grid.node_count))
    values = field.values.ravel()

    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([*index_columns(grid.dim), "value"])
        for flat in range(grid.node_count):
            writer.writerow(
                [*(int(axis[flat]) for axis in multi), _fmt(values[flat])]
            )


def read_field_csv(path: str) -> ScalarField:
    """Read a field dump, inferring the grid from its header and row count.

    Rows may come in any order; each value is placed at its multi-index.

    Raises:
        ValidationError: If the file is missing or malformed, its row count is
            not a perfect power of the dimension, or an index is out of range
            or repeated.
    """
    try:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise ValidationError(f"cannot read field file {path}: {e!s}") from e

    if len(rows) < 2:
        raise ValidationError(f"field file {path} has no data rows")
    header, body = [c.strip() for c in rows[0]], rows[1:]
    dim = len(header) - 1
    if dim not in (1, 2) or header != [*index_columns(dim), "value"]:
        raise ValidationError(f"field file {path} has an unexpected header {header}")

    n = round(len(body) ** (1.0 / dim))
    if n**dim != len(body):
        raise ValidationError(
            f"field file {path} has {len(body)} rows, not a {dim}-D square grid"
        )

    try:
        if any(len(row) != dim + 1 for row in body):
            raise ValueError(f"expected {dim + 1} columns")
        indices = np.array([[int(c) for c in row[:dim]] for row in body])
        raw = np.array([float(row[dim]) for row in body])
    except ValueError as e:
        raise ValidationError(f"field file {path} has a malformed row: {e!s}") from e

    if np.any(indices < 0) or np.any(indices >= n):
        raise ValidationError(f"field file {path} has an index outside 0..{n - 1}")
    flat = np.ravel_multi_index(tuple(indices.T), (n,) * dim)
    if np.unique(flat).size != flat.size:
        raise ValidationError(f"field file {path} repeats a node index")
    if not np.all(np.isfinite(raw)):
        raise ValidationError(f"field file {path} contains non-finite values")

    values = np.empty(len(body))
    values[flat] = raw
    return ScalarField(TorusGrid(dim, n), values)


def write_trace_csv(path: str, rows: Iterable[tuple[int, TraceRow]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_COLUMNS)
        for stage, row in rows:
            writer.writerow(
                [
                    stage,
                    row.iteration,
                    _fmt(row.sigma),
                    _fmt(row.natural_residual),
                    _fmt(row.pairing_check),
                ]
            )


def write_table_csv(
    path: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                [_fmt(v) if isinstance(v, float) else v for v in row]
            )


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats for strict JSON."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, float | np.floating):
        value = float(value)
        if math.isfinite(value):
            return value
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def write_json(path: str, data: dict[str, Any]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_jsonable(data), f, indent=2, allow_nan=False)
        f.write("\n")


def read_json(path: str) -> dict[str, Any]:
    with open(path, encoding="utf-8") as f:
        return json.load(f)
