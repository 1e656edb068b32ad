"""Flat-file formats: tensor CSVs, matrix CSVs and record tables.

A tensor file looks like::

    dims=3x4
    value,mask
    0.12,1
    ...

The first line fixes the mode dimensions, the second names the columns
(``value`` or ``value,mask``), and the remaining rows hold the entries of
one or more tensors in C order (mode 1 slowest), tensor after tensor.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, DimensionError
from .partial_trace import MaskedTensor

FLOAT_FMT = "%.17g"


@dataclass
class TensorFile:
    values: np.ndarray
    mask: np.ndarray | None = None

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.values.shape[1:])

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def masked(self) -> bool:
        return self.mask is not None and not bool(np.all(self.mask))

    def masked_tensors(self) -> list[MaskedTensor]:
        mask = np.ones(self.values.shape, bool) if self.mask is None else self.mask
        return [MaskedTensor(v, m) for v, m in zip(self.values, mask)]


def parse_dims(text: str) -> tuple[int, ...]:
    """``"3x4x2"`` to ``(3, 4, 2)``."""
    try:
        dims = tuple(int(t) for t in text.strip().lower().split("x"))
    except ValueError:
        raise DataError(f"cannot parse dims {text!r}; expected e.g. 3x4") from None
    if not dims or any(d < 1 for d in dims):
        raise DataError(f"dims must be positive integers, got {text!r}")
    return dims


def format_dims(dims: Sequence[int]) -> str:
    return "x".join(str(int(d)) for d in dims)


def _parse_header(line: str, path) -> tuple[int, ...]:
    key, sep, rest = line.strip().partition("=")
    if not sep or key.strip() != "dims":
        raise DataError(f"{path}: malformed header {line.strip()!r}; expected 'dims=p1xp2...'")
    return parse_dims(rest)


def read_tensor_csv(path) -> TensorFile:
    path = Path(path)
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2:
        raise DataError(f"{path}: missing header lines")
    dims = _parse_header(lines[0], path)
    cols = [c.strip() for c in lines[1].split(",")]
    if cols not in (["value"], ["value", "mask"]):
        raise DataError(f"{path}: malformed column header {lines[1].strip()!r}; expected 'value' or 'value,mask'")
    rows = [r for r in csv.reader(lines[2:]) if r]
    if any(len(r) != len(cols) for r in rows):
        raise DataError(f"{path}: every row needs {len(cols)} field(s)")
    p = int(np.prod(dims))
    if not rows or len(rows) % p:
        raise DimensionError(
            f"{path}: {len(rows)} values is not a positive multiple of p={p} for dims={format_dims(dims)}"
        )
    try:
        values = np.array([float(r[0]) for r in rows])
        mask = np.array([int(r[1]) for r in rows]) if len(cols) == 2 else None
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    shape = (len(rows) // p,) + dims
    if mask is not None:
        if not np.all(np.isin(mask, (0, 1))):
            raise DataError(f"{path}: mask entries must be 0 or 1")
        mask = mask.astype(bool).reshape(shape)
        if not np.all(np.isfinite(values.reshape(shape)[mask])):
            raise DataError(f"{path}: observed values must be finite")
    elif not np.all(np.isfinite(values)):
        raise DataError(f"{path}: values must be finite")
    return TensorFile(values.reshape(shape), mask)


def read_tensor_dir(path) -> TensorFile:
    """Every ``*.csv`` in ``path`` (sorted by name) is a replicate; dims must agree."""
    path = Path(path)
    files = sorted(p for p in path.iterdir() if p.suffix == ".csv")
    if not files:
        raise DataError(f"{path}: no .csv tensor files")
    parts = [read_tensor_csv(f) for f in files]
    dims = parts[0].dims
    for f, part in zip(files, parts):
        if part.dims != dims:
            raise DimensionError(f"{f}: dims {format_dims(part.dims)} differ from {format_dims(dims)}")
    values = np.concatenate([t.values for t in parts])
    if all(t.mask is None for t in parts):
        return TensorFile(values)
    masks = [np.ones(t.values.shape, bool) if t.mask is None else t.mask for t in parts]
    return TensorFile(values, np.concatenate(masks))


def read_tensor(path) -> TensorFile:
    return read_tensor_dir(path) if os.path.isdir(path) else read_tensor_csv(path)


def write_tensor_csv(path, values, mask=None) -> None:
    """Write tensors of shape ``(n, p_1, ..., p_k)``; a mask adds the ``mask`` column."""
    values = np.asarray(values, dtype=float)
    if values.ndim < 2:
        raise DimensionError("values need shape (n, p_1, ..., p_k)")
    dims = values.shape[1:]
    with open(path, "w", newline="") as fh:
        fh.write(f"dims={format_dims(dims)}\n")
        if mask is None:
            fh.write("value\n")
            for v in values.ravel():
                fh.write(f"{FLOAT_FMT % v}\n")
        else:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != values.shape:
                raise DimensionError("mask shape differs from values")
            fh.write("value,mask\n")
            for v, m in zip(values.ravel(), mask.ravel()):
                fh.write(f"{FLOAT_FMT % (v if m else 0.0)},{int(m)}\n")


def write_matrix_csv(path, a) -> None:
    np.savetxt(path, np.atleast_2d(np.asarray(a, dtype=float)), delimiter=",", fmt=FLOAT_FMT)


def read_matrix_csv(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_records_csv(path, header: Sequence[str], records: Sequence[dict]) -> None:
    """One row per record; floats keep full precision, missing values are blank."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rec in records:
            w.writerow([_cell(rec.get(h)) for h in header])


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else FLOAT_FMT % v
    return str(v)


def read_records_csv(path) -> list[dict]:
    """Rows as dicts of strings, in file order."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
