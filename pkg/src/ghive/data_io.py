"""Datasets, CSV parsing, and atomic file output.

CSV conventions: UTF-8, comma separated, decimal point, optional single
header row (auto-detected: a first row with any cell that does not parse as
a number is treated as headers). Parse errors report 1-based row and column
positions, counting the header row as row 1 when present.

Floats are written with 17 significant digits so that write -> read is
bit-exact for every finite double. All file writes go through a temp file
in the target directory followed by an atomic rename, so readers never see
a partially written artifact.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError
from .families import GlmFamily, validate_response


@dataclass
class Dataset:
    """A design matrix x (n x p) and response matrix y (n x M)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.ascontiguousarray(np.asarray(self.x, dtype=float))
        self.y = np.ascontiguousarray(np.asarray(self.y, dtype=float))
        if self.x.ndim != 2 or self.y.ndim != 2:
            raise DataValidationError("x and y must both be 2-dimensional")
        if self.x.shape[0] != self.y.shape[0]:
            raise DataValidationError(
                f"x has {self.x.shape[0]} rows but y has {self.y.shape[0]}"
            )
        if self.x.shape[0] < 2:
            raise DataValidationError("need at least 2 observations")
        if self.x.shape[1] < 1 or self.y.shape[1] < 1:
            raise DataValidationError("x and y must each have at least one column")
        if not np.all(np.isfinite(self.x)):
            raise DataValidationError("x contains non-finite entries")
        if not np.all(np.isfinite(self.y)):
            raise DataValidationError("y contains non-finite entries")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def m_dim(self) -> int:
        return self.y.shape[1]


def validate_for_family(data: Dataset, family: GlmFamily) -> None:
    """Family-specific response checks (binary for bernoulli, etc.)."""
    validate_response(family, data.y)


@dataclass
class CsvTable:
    """A parsed numeric CSV: optional header names plus a float matrix."""

    headers: list | None
    values: np.ndarray


def _parse_cell(cell: str, row: int, col: int, path) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataValidationError(
            f"{path}: row {row}, column {col}: could not parse {cell.strip()!r} "
            "as a number"
        ) from None


def read_csv_table(path) -> CsvTable:
    """Read a numeric CSV with auto-detected header row."""
    with open(path, newline="", encoding="utf-8") as fh:
        raw = [row for row in csv.reader(fh) if row]
    if not raw:
        raise DataValidationError(f"{path}: file is empty")

    headers = None
    start = 0
    first = [c.strip() for c in raw[0]]
    try:
        [float(c) for c in first]
    except ValueError:
        headers = first
        start = 1
        if len(raw) == 1:
            raise DataValidationError(f"{path}: no data rows after header")

    width = len(raw[start])
    rows = []
    for i in range(start, len(raw)):
        row = raw[i]
        if len(row) != width:
            raise DataValidationError(
                f"{path}: row {i + 1} has {len(row)} cells, expected {width}"
            )
        rows.append([_parse_cell(c, i + 1, j + 1, path) for j, c in enumerate(row)])
    if headers is not None and len(headers) != width:
        raise DataValidationError(
            f"{path}: header has {len(headers)} cells, data rows have {width}"
        )
    return CsvTable(headers=headers, values=np.asarray(rows, dtype=float))


def load_matrix_csv(path) -> np.ndarray:
    return read_csv_table(path).values


def load_dataset(x_path, y_path, family: GlmFamily, center: bool = False) -> Dataset:
    """Load x and y CSVs into a validated Dataset.

    With ``center=True`` the x columns are standardised to mean 0 and unit
    variance (columns with zero variance are centred but left unscaled).
    """
    x = read_csv_table(x_path).values
    y = read_csv_table(y_path).values
    if x.shape[0] != y.shape[0]:
        raise DataValidationError(
            f"{x_path} has {x.shape[0]} data rows but {y_path} has {y.shape[0]}"
        )
    if center:
        x = standardize_columns(x)
    data = Dataset(x, y)
    validate_for_family(data, family)
    return data


def standardize_columns(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    centered = x - x.mean(axis=0)
    scale = centered.std(axis=0)
    scale[scale == 0.0] = 1.0
    return centered / scale


# ---------------------------------------------------------------------------
# writing


def _format_float(v) -> str:
    return format(float(v), ".17g")


def atomic_write_text(path, text: str) -> None:
    """Write text to ``path`` via temp-file-then-rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_matrix_csv(path, matrix, headers=None) -> None:
    """Write a matrix as CSV with 17-significant-digit floats, atomically."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    lines = []
    if headers is not None:
        lines.append(",".join(str(h) for h in headers))
    for row in matrix:
        lines.append(",".join(_format_float(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_csv_rows(path, fieldnames, rows) -> None:
    """Write dict rows as CSV atomically; floats get 17 significant digits."""
    import io as _io

    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        formatted = {
            k: _format_float(v) if isinstance(v, float) else v for k, v in row.items()
        }
        writer.writerow(formatted)
    atomic_write_text(path, buf.getvalue())


def write_json_atomic(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# JSON matrix encoding: row-major nested lists with explicit dimensions


def matrix_to_json(matrix) -> dict:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    return {
        "dims": [int(matrix.shape[0]), int(matrix.shape[1])],
        "data": [[float(v) for v in row] for row in matrix],
    }


def matrix_from_json(obj, name="matrix") -> np.ndarray:
    try:
        dims = obj["dims"]
        data = obj["data"]
    except (TypeError, KeyError):
        raise DataValidationError(f"{name}: expected an object with dims and data")
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or list(arr.shape) != [int(dims[0]), int(dims[1])]:
        raise DataValidationError(
            f"{name}: declared dims {dims} do not match data shape {arr.shape}"
        )
    return arr
