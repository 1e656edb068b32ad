"""Partial trace operators and the closed-form Kronecker estimators built on them.

Modes are numbered from 1 to k in the public functions, matching the usual
``tr_1, ..., tr_k`` notation.
"""
from __future__ import annotations

import string
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateSampleError,
    DimensionError,
    NotPositiveDefiniteError,
    RankDeficientError,
)
from .linalg import (
    PSD_TOL,
    KroneckerCov,
    SampleCov,
    TensorSample,
    as_spd,
    as_symmetric,
    check_dims,
    logdet,
)


def _check_mode(mode: int, k: int) -> int:
    if not 1 <= mode <= k:
        raise DimensionError(f"mode {mode} out of range 1..{k}")
    return mode - 1


def _einsum_spec(k: int, j: int) -> str:
    letters = string.ascii_letters
    if 2 * k + 1 > len(letters):
        raise DimensionError(f"order k={k} too large for dense partial traces")
    row = list(letters[:k])
    col = list(row)
    col[j] = letters[k]
    return "".join(row) + "".join(col) + "->" + row[j] + col[j]


def partial_trace_matrix(matrix, dims: Sequence[int], mode: int) -> np.ndarray:
    """Partial trace of a (not necessarily symmetric) p x p matrix.

    Sums ``matrix[(.., i, ..), (.., i', ..)]`` over every index except the one
    belonging to ``mode``.
    """
    matrix = np.asarray(matrix, dtype=float)
    dims = check_dims(dims, matrix.shape[0])
    if matrix.shape != (matrix.shape[0], matrix.shape[0]):
        raise DimensionError(f"expected a square matrix, got {matrix.shape}")
    j = _check_mode(mode, len(dims))
    return np.einsum(_einsum_spec(len(dims), j), matrix.reshape(dims + dims))


def partial_trace(s: SampleCov | TensorSample, mode: int) -> np.ndarray:
    """``tr_mode(S)``: a symmetric ``p_mode x p_mode`` matrix with ``tr`` equal to ``tr(S)``."""
    if isinstance(s, TensorSample):
        j = _check_mode(mode, s.k)
        # unfold to p_j x (everything else) and hand the product to BLAS
        y = np.moveaxis(s.data, j + 1, 0).reshape(s.dims[j], -1)
        return as_symmetric(y @ y.T / s.n)
    return as_symmetric(partial_trace_matrix(s.matrix, s.dims, mode))


def all_partial_traces(s: SampleCov | TensorSample) -> list[np.ndarray]:
    return [partial_trace(s, i) for i in range(1, s.k + 1)]


def pt_estimator(s: SampleCov | TensorSample) -> KroneckerCov:
    """Partial trace estimator ``tr(S)^-(k-1) * tr_1(S) x ... x tr_k(S)``.

    The result stores unit-trace factors ``tr_i(S) / tr(S)`` and carries
    ``tr(S)`` as its scale, so ``tr_i`` of the estimate equals ``tr_i(S)``.
    """
    total = s.trace()
    if not total > 0:
        raise DegenerateSampleError("sample covariance has zero trace")
    factors = []
    for i, t in enumerate(all_partial_traces(s), start=1):
        try:
            factors.append(as_spd(t / total, f"partial trace {i}"))
        except NotPositiveDefiniteError:
            raise RankDeficientError(
                f"partial trace of mode {i} is not positive definite", mode=i
            ) from None
    return KroneckerCov(tuple(factors), total)


def _diagonal_blocks(s: SampleCov, mode: int) -> list[np.ndarray]:
    t = s.tensor()
    if mode == 1:
        return [t[:, j, :, j] for j in range(s.dims[1])]
    return [t[i, :, i, :] for i in range(s.dims[0])]


def det_rescaled_partial_trace(s: SampleCov, mode: int) -> np.ndarray:
    """Sum of the mode's diagonal blocks, each divided by ``|block|^(1/p_mode)``."""
    if s.k != 2:
        raise DimensionError(f"determinant-rescaled partial traces need k=2, got k={s.k}")
    _check_mode(mode, 2)
    p_mode = s.dims[mode - 1]
    out = np.zeros((p_mode, p_mode))
    for idx, block in enumerate(_diagonal_blocks(s, mode)):
        try:
            ld = logdet(as_spd(block))
        except NotPositiveDefiniteError:
            raise RankDeficientError(
                f"diagonal block {idx + 1} of mode {mode} is singular",
                mode=mode,
                block=idx + 1,
            ) from None
        out += block * np.exp(-ld / p_mode)
    return as_symmetric(out)


def unit_det(a) -> np.ndarray:
    a = as_spd(a)
    return a * np.exp(-logdet(a) / a.shape[0])


def rpt_factors(s: SampleCov) -> list[np.ndarray]:
    """Unit-determinant Kronecker factors of the rescaled PT estimator.

    Needs only the diagonal blocks to be non-singular, so it exists for
    ``n >= max(p_1, p_2)`` even when ``S`` itself is singular.
    """
    return [unit_det(det_rescaled_partial_trace(s, m)) for m in (1, 2)]


def rpt_estimator(s: SampleCov) -> KroneckerCov:
    """Rescaled partial trace estimator ``|S|^(1/p) (F_1 x F_2)`` with unit-determinant ``F_i``.

    ``|R(S)| = |S|`` by construction; a singular ``S`` raises.
    """
    factors = rpt_factors(s)
    try:
        ld = logdet(as_spd(s.matrix))
    except NotPositiveDefiniteError:
        raise RankDeficientError(
            "sample covariance is singular; the overall determinant scale "
            f"needs n >= p = {s.p}"
        ) from None
    return KroneckerCov(tuple(factors), float(np.exp(ld / s.p))).normalized()


@dataclass
class MaskedTensor:
    """A single tensor observation with a boolean mask (True = observed)."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape:
            raise DimensionError(
                f"mask shape {self.mask.shape} differs from values {self.values.shape}"
            )
        check_dims(self.values.shape)
        if not np.all(np.isfinite(self.values[self.mask])):
            raise DimensionError("observed entries must be finite")

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.shape

    @classmethod
    def with_diagonal_missing(cls, values, modes=(1, 2)) -> "MaskedTensor":
        values = np.asarray(values, dtype=float)
        return cls(values, diagonal_mask(values.shape, modes))


def diagonal_mask(dims: Sequence[int], modes=(1, 2)) -> np.ndarray:
    """Mask hiding entries whose indices along the two ``modes`` coincide."""
    dims = check_dims(dims)
    a, b = (_check_mode(m, len(dims)) for m in modes)
    if dims[a] != dims[b]:
        raise DimensionError(f"modes {modes} have different sizes {dims[a]}, {dims[b]}")
    idx = np.indices(dims)
    return idx[a] != idx[b]


@dataclass
class MaskedPTResult:
    factors: list
    status: str
    min_eigenvalues: list

    def correlations(self) -> list[np.ndarray]:
        return [correlation(f) for f in self.factors]


def correlation(a) -> np.ndarray:
    a = as_symmetric(a)
    d = np.sqrt(np.diag(a))
    if np.any(d <= 0):
        raise DegenerateSampleError("matrix has a non-positive diagonal entry")
    return as_symmetric(a / np.outer(d, d))


def masked_pt_estimator(t: MaskedTensor | Sequence[MaskedTensor]) -> MaskedPTResult:
    """Approximate partial traces that skip products involving unobserved entries.

    Entry ``(i, i')`` of factor j sums ``x[..i..] * x[..i'..]`` over the other
    indices where both entries are observed. Factors are scaled to unit trace.
    """
    tensors = [t] if isinstance(t, MaskedTensor) else list(t)
    if not tensors:
        raise DimensionError("no tensors given")
    dims = tensors[0].dims
    if any(x.dims != dims for x in tensors):
        raise DimensionError("all tensors must share the same dimensions")
    filled = np.stack([np.where(x.mask, x.values, 0.0) for x in tensors])
    sample = TensorSample(filled)
    factors, mins, status = [], [], "ok"
    for i in range(1, len(dims) + 1):
        f = partial_trace(sample, i)
        tr = np.trace(f)
        if not tr > 0:
            raise DegenerateSampleError(f"masked partial trace of mode {i} is zero")
        f = f / tr
        w = float(np.linalg.eigvalsh(f)[0])
        mins.append(w)
        if w < -PSD_TOL:
            status = "indefinite"
            warnings.warn(f"masked factor {i} is indefinite (min eigenvalue {w:.3g})")
        factors.append(f)
    return MaskedPTResult(factors, status, mins)
