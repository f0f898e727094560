"""Incomplete data matrices and their CSV representation.

Missing cells are NaN in memory and empty fields on disk.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, IngestionError
from .numkernel import IndexPartition


@dataclass(frozen=True, eq=False)
class IncompleteDataset:
    """``N x p`` float matrix with NaN marking missing entries."""

    values: np.ndarray
    columns: tuple = field(default=())

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ConfigurationError(f"data must be a 2-D matrix, got {v.ndim} dimensions")
        if np.isinf(v).any():
            raise ConfigurationError("data contains infinite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        cols = tuple(self.columns) or tuple(f"x{j + 1}" for j in range(v.shape[1]))
        if len(cols) != v.shape[1]:
            raise ConfigurationError(f"{len(cols)} column names for {v.shape[1]} columns")
        object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def observed(self) -> np.ndarray:
        """Boolean mask, True where a value is present (the indicator ``R``)."""
        return ~np.isnan(self.values)

    def partition(self, row: int) -> IndexPartition:
        return IndexPartition.from_mask(self.observed[row])

    def column_observed(self, j: int) -> np.ndarray:
        col = self.values[:, j]
        return col[~np.isnan(col)]


def _format(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))


def read_csv(path_or_buf) -> IncompleteDataset:
    """Parse a CSV with a header row; empty fields are missing values."""
    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        with open(path_or_buf, newline="") as fh:
            return read_csv(fh)
    reader = csv.reader(path_or_buf)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestionError("empty input: a header row is required") from None
    header = [h.strip() for h in header]
    if not header or all(h == "" for h in header):
        raise IngestionError("empty header row")
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise IngestionError(f"line {lineno}: expected {len(header)} fields, found {len(rec)}")
        row = []
        for name, cell in zip(header, rec):
            cell = cell.strip()
            if cell == "":
                row.append(np.nan)
                continue
            try:
                val = float(cell)
            except ValueError:
                raise IngestionError(f"line {lineno}, column {name!r}: cannot parse {cell!r}") from None
            if not np.isfinite(val):
                raise IngestionError(f"line {lineno}, column {name!r}: non-finite value {cell!r}")
            row.append(val)
        rows.append(row)
    values = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return IncompleteDataset(values, tuple(header))


def write_csv(data: IncompleteDataset, path_or_buf=None, extra=None):
    """Write ``data`` as CSV. Returns the text when no destination is given.

    ``extra`` optionally prepends integer columns: a list of ``(name, values)``.
    """
    if path_or_buf is None:
        buf = io.StringIO()
        write_csv(data, buf, extra)
        return buf.getvalue()
    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        with open(path_or_buf, "w", newline="") as fh:
            return write_csv(data, fh, extra)
    extra = extra or []
    w = csv.writer(path_or_buf, lineterminator="\n")
    w.writerow([name for name, _ in extra] + list(data.columns))
    for i, row in enumerate(data.values):
        w.writerow([str(int(vals[i])) for _, vals in extra] + [_format(v) for v in row])
    return None
