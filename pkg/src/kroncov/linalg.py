"""Dense symmetric linear algebra, Kronecker algebra and Wishart sampling.

Matrices are plain ``numpy`` arrays. Composite tensor indices are linearized
with mode 1 slowest and mode k fastest (C order), so ``np.kron(A, B)`` has
blocks ``a_ij * B`` and ``S.reshape(dims + dims)`` recovers the 2k-index view.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    DimensionError,
    NotPositiveDefiniteError,
    NumericalError,
    SizeLimitError,
)

#: Largest dimension ``p`` that is ever materialized as a dense p x p matrix.
MATERIALIZE_CAP = 4096

SPD_TOL = 1e-12
PSD_TOL = 1e-10


def set_materialize_cap(cap: int) -> None:
    global MATERIALIZE_CAP
    if cap < 1:
        raise ValueError("materialization cap must be positive")
    MATERIALIZE_CAP = int(cap)


def as_symmetric(a) -> np.ndarray:
    """Return ``a`` as a float square array with exact symmetry enforced."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionError(f"expected a non-empty square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def is_spd(a) -> bool:
    try:
        as_spd(a)
    except NotPositiveDefiniteError:
        return False
    return True


def as_spd(a, name: str = "matrix") -> np.ndarray:
    """Symmetrize ``a`` and certify it positive definite via Cholesky.

    The test runs on the unit-diagonal rescaling of ``a``, so graded but
    well-posed matrices such as ``diag(1, 1e-30)`` pass while rank-deficient
    ones fail: a pivot below ``1e-12 * p`` there counts as singular. Nothing
    is clamped.
    """
    a = as_symmetric(a)
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefiniteError(f"{name} has non-finite entries")
    d = np.diag(a)
    if np.any(d <= 0):
        raise NotPositiveDefiniteError(f"{name} has a non-positive diagonal entry")
    root = np.sqrt(d)
    try:
        chol = np.linalg.cholesky(a / np.outer(root, root))
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(f"{name} is not positive definite") from None
    if np.min(np.diag(chol)) ** 2 <= SPD_TOL * a.shape[0]:
        raise NotPositiveDefiniteError(f"{name} is numerically singular")
    return a


def check_dims(dims: Sequence[int], p: int | None = None) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if len(dims) < 1 or any(d < 1 for d in dims):
        raise DimensionError(f"mode dimensions must be positive integers, got {dims}")
    if p is not None and int(np.prod(dims)) != p:
        raise DimensionError(f"mode dimensions {dims} do not multiply to {p}")
    return dims


def sym_eigen(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix, eigenvalues descending.

    Returns ``(values, vectors)`` with ``a = V diag(values) V^T``.
    """
    a = as_symmetric(a)
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"symmetric eigensolver failed: {exc}") from None
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
        raise NumericalError("symmetric eigensolver produced non-finite output")
    return w[::-1], v[:, ::-1]


def spd_power(a, t: float) -> np.ndarray:
    """``a**t`` for SPD ``a`` through its eigen-decomposition."""
    w, v = sym_eigen(as_spd(a))
    return as_symmetric((v * w**t) @ v.T)


def matrix_log(a) -> np.ndarray:
    w, v = sym_eigen(as_spd(a))
    return as_symmetric((v * np.log(w)) @ v.T)


def matrix_exp(h) -> np.ndarray:
    w, v = sym_eigen(h)
    return as_symmetric((v * np.exp(w)) @ v.T)


def logdet(a) -> float:
    sign, val = np.linalg.slogdet(np.asarray(a, dtype=float))
    if sign <= 0 or not np.isfinite(val):
        raise NotPositiveDefiniteError("determinant is not positive")
    return float(val)


def fim_inner(sigma, h1, h2) -> float:
    """Fisher information metric of the Wishart model at ``sigma``.

    ``<H1, H2>_Sigma = 1/2 tr(Sigma^-1 H1 Sigma^-1 H2)``.
    """
    sigma = np.asarray(sigma, dtype=float)
    h1 = np.asarray(h1, dtype=float)
    h2 = np.asarray(h2, dtype=float)
    if not (sigma.shape == h1.shape == h2.shape) or sigma.ndim != 2:
        raise DimensionError(
            f"dimension mismatch: {sigma.shape}, {h1.shape}, {h2.shape}"
        )
    sigma = as_spd(sigma, "sigma")
    a = np.linalg.solve(sigma, h1)
    b = np.linalg.solve(sigma, h2)
    return 0.5 * float(np.sum(a * b.T))


def affine_invariant_distance(a, b) -> float:
    """``||log(A^-1/2 B A^-1/2)||_F``, computed from generalized eigenvalues."""
    a = as_spd(a, "a")
    b = as_spd(b, "b")
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    w = spd_power(a, -0.5)
    w, _ = sym_eigen(w @ b @ w)
    if np.min(w) <= 0:
        raise NotPositiveDefiniteError("congruence lost positive definiteness")
    return float(np.sqrt(np.sum(np.log(w) ** 2)))


def kron_all(factors: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, factors)


@dataclass(frozen=True)
class KroneckerCov:
    """``scale * (factors[0] kron ... kron factors[k-1])`` kept in factored form."""

    factors: tuple
    scale: float = 1.0

    def __post_init__(self):
        if len(self.factors) < 1:
            raise DimensionError("a Kronecker covariance needs at least one factor")
        facs = tuple(as_spd(f, f"factor {i + 1}") for i, f in enumerate(self.factors))
        object.__setattr__(self, "factors", facs)
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise NotPositiveDefiniteError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def k(self) -> int:
        return len(self.factors)

    @property
    def p(self) -> int:
        return int(np.prod(self.dims))

    def materialize(self, cap: int | None = None) -> np.ndarray:
        cap = MATERIALIZE_CAP if cap is None else cap
        if self.p > cap:
            raise SizeLimitError(f"refusing to materialize p={self.p} > cap {cap}")
        return self.scale * kron_all(self.factors)

    def normalized(self) -> "KroneckerCov":
        """Unit-trace factors with the whole scalar carried by ``scale``."""
        traces = [np.trace(f) for f in self.factors]
        return KroneckerCov(
            tuple(f / t for f, t in zip(self.factors, traces)),
            self.scale * float(np.prod(traces)),
        )

    def folded(self) -> list[np.ndarray]:
        """Factors with ``scale`` folded into the first one."""
        out = [f.copy() for f in self.factors]
        out[0] = out[0] * self.scale
        return out

    def eigenvalues(self) -> np.ndarray:
        vals = [sym_eigen(f)[0] for f in self.factors]
        return self.scale * reduce(np.multiply.outer, vals).ravel()

    def frobenius_sq(self) -> float:
        return self.scale**2 * float(np.prod([np.sum(f * f) for f in self.factors]))

    def frobenius_inner(self, other: "KroneckerCov") -> float:
        """``tr(self @ other)`` without materializing either operand."""
        if self.dims != other.dims:
            raise DimensionError(f"dimension mismatch: {self.dims} vs {other.dims}")
        prods = [np.sum(a * b) for a, b in zip(self.factors, other.factors)]
        return self.scale * other.scale * float(np.prod(prods))


@dataclass
class SampleCov:
    """Sample covariance ``S`` of n tensor observations with mode dims."""

    matrix: np.ndarray
    dims: tuple
    n: int = 1
    check_psd: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.matrix = as_symmetric(self.matrix)
        self.dims = check_dims(self.dims, self.matrix.shape[0])
        if self.n < 1:
            raise DimensionError(f"sample size must be positive, got {self.n}")
        if self.check_psd:
            tr = np.trace(self.matrix)
            w = np.linalg.eigvalsh(self.matrix)
            if w[0] < -PSD_TOL * max(abs(tr), 1e-300):
                raise NotPositiveDefiniteError(
                    f"sample covariance is not PSD (min eigenvalue {w[0]:.3g})"
                )

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    @property
    def k(self) -> int:
        return len(self.dims)

    def tensor(self) -> np.ndarray:
        """2k-index view ``S[i_1..i_k, j_1..j_k]``."""
        return self.matrix.reshape(self.dims + self.dims)

    def trace(self) -> float:
        return float(np.trace(self.matrix))


@dataclass
class TensorSample:
    """Raw observations, shape ``(n, p_1, ..., p_k)``.

    Used where ``S`` is too large to form: every partial trace and the total
    trace are computable from the data directly.
    """

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim < 2:
            raise DimensionError("tensor sample needs shape (n, p_1, ..., p_k)")
        check_dims(self.data.shape[1:])

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.data.shape[1:])

    @property
    def k(self) -> int:
        return self.data.ndim - 1

    @property
    def p(self) -> int:
        return int(np.prod(self.dims))

    def trace(self) -> float:
        return float(np.sum(self.data**2)) / self.n

    def to_sample_cov(self, cap: int | None = None) -> SampleCov:
        cap = MATERIALIZE_CAP if cap is None else cap
        if self.p > cap:
            raise SizeLimitError(f"refusing to materialize p={self.p} > cap {cap}")
        y = self.data.reshape(self.n, self.p)
        return SampleCov(y.T @ y / self.n, self.dims, self.n, check_psd=False)


def mode_multiply(x: np.ndarray, a: np.ndarray, mode: int) -> np.ndarray:
    """Multiply axis ``mode`` of ``x`` by the matrix ``a`` (``a @ x_(mode)``)."""
    out = np.tensordot(a, x, axes=([1], [mode]))
    return np.moveaxis(out, 0, mode)


def _root_factor(f: np.ndarray) -> np.ndarray:
    if np.count_nonzero(f - np.diag(np.diag(f))) == 0:
        return np.diag(np.sqrt(np.diag(f)))
    return spd_power(f, 0.5)


def sample_tensors(sigma, n: int, rng: np.random.Generator) -> TensorSample:
    """Draw n iid ``N(0, sigma)`` tensors without materializing ``sigma``."""
    if n < 1:
        raise DimensionError(f"sample size must be positive, got {n}")
    if not isinstance(sigma, KroneckerCov):
        sigma = KroneckerCov((as_spd(sigma, "sigma"),))
    z = rng.standard_normal((n,) + sigma.dims)
    for i, f in enumerate(sigma.factors):
        if f.shape[0] > 1:
            z = mode_multiply(z, _root_factor(f), i + 1)
    return TensorSample(z * np.sqrt(sigma.scale))


def sample_wishart(sigma, n: int, rng: np.random.Generator) -> SampleCov:
    """``S = (1/n) sum_l y_l y_l^T`` with ``y_l ~ N(0, sigma)``, so ``nS ~ Wishart(sigma, n)``.

    ``sigma`` may be a dense SPD matrix or a :class:`KroneckerCov`; the
    returned :class:`SampleCov` carries the matching mode dimensions.
    """
    if isinstance(sigma, KroneckerCov):
        return sample_tensors(sigma, n, rng).to_sample_cov()
    sigma = as_spd(sigma, "sigma")
    if n < 1:
        raise DimensionError(f"sample size must be positive, got {n}")
    root = spd_power(sigma, 0.5)
    y = rng.standard_normal((n, sigma.shape[0])) @ root
    return SampleCov(y.T @ y / n, (sigma.shape[0],), n, check_psd=False)


class CovMetricCheck(NamedTuple):
    empirical: float
    theoretical: float
    std_error: float


def cov_metric_check(sigma, a, b, reps: int, rng: np.random.Generator) -> CovMetricCheck:
    """Monte Carlo check of ``Cov(<A,S>, <B,S>) = 4 <A,B>_Sigma`` for ``S ~ Wishart(Sigma, 1)``.

    The projections use the unhalved pairing ``tr(Sigma^-1 A Sigma^-1 S)``,
    which is twice ``fim_inner(sigma, A, S)``; with the halved pairing on both
    sides the identity reads ``Cov = <A,B>_Sigma`` instead.
    """
    if reps < 2:
        raise ValueError("need at least two replicates")
    sigma = as_spd(sigma, "sigma")
    a = as_symmetric(a)
    b = as_symmetric(b)
    sinv = np.linalg.inv(sigma)
    ma = sinv @ a @ sinv
    mb = sinv @ b @ sinv
    y = rng.standard_normal((reps, sigma.shape[0])) @ spd_power(sigma, 0.5)
    xa = np.einsum("ni,ij,nj->n", y, ma, y)
    xb = np.einsum("ni,ij,nj->n", y, mb, y)
    prod = (xa - xa.mean()) * (xb - xb.mean())
    empirical = float(prod.sum() / (reps - 1))
    se = float(prod.std(ddof=1) / np.sqrt(reps))
    return CovMetricCheck(empirical, 4.0 * fim_inner(sigma, a, b), se)


def random_spd(p: int, rng: np.random.Generator, cond: float = 10.0) -> np.ndarray:
    """Random SPD matrix with eigenvalues spread over ``[1, cond]``."""
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    w = np.exp(rng.uniform(0.0, np.log(cond), size=p))
    return as_symmetric((q * w) @ q.T)


def random_orthogonal(p: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    return q * np.sign(np.diag(r))
