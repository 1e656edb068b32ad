"""Kronecker maximum likelihood via block-coordinate descent (flip-flop)."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSampleError, DimensionError, NotPositiveDefiniteError
from .linalg import KroneckerCov, SampleCov, as_spd, logdet, spd_power


@dataclass
class MleConfig:
    tol: float = 1e-9
    max_iter: int = 500
    init: KroneckerCov | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class MleResult:
    estimate: KroneckerCov
    iterations: int
    converged: bool
    final_residual: float
    nll_history: list = field(default_factory=list, repr=False)


def _require_k2(s: SampleCov):
    if s.k != 2:
        raise DimensionError(f"the flip-flop MLE is implemented for k=2, got k={s.k}")


def gaussian_nll(s, sigma, n: int | None = None) -> float:
    """``(n/2) (log|Sigma| + tr(Sigma^-1 S))`` with additive constants dropped.

    ``s`` may be a :class:`SampleCov` (its ``n`` is the default) or a matrix.
    """
    if isinstance(s, SampleCov):
        n = s.n if n is None else n
        s = s.matrix
    if n is None:
        raise ValueError("sample size n is required for a bare matrix")
    s = np.asarray(s, dtype=float)
    if isinstance(sigma, KroneckerCov):
        sigma = sigma.materialize()
    sigma = np.asarray(sigma, dtype=float)
    if s.shape != sigma.shape:
        raise DimensionError(f"dimension mismatch: {s.shape} vs {sigma.shape}")
    try:
        sigma = as_spd(sigma, "sigma")
    except NotPositiveDefiniteError as exc:
        raise NotPositiveDefiniteError(f"singular covariance in likelihood: {exc}") from None
    return 0.5 * n * (logdet(sigma) + float(np.trace(np.linalg.solve(sigma, s))))


def kron_nll(s: SampleCov, sigma1, sigma2) -> float:
    """Gaussian NLL at ``sigma1 x sigma2`` without forming the Kronecker product."""
    p1, p2 = s.dims
    t = s.tensor()
    a = np.linalg.inv(sigma1)
    b = np.linalg.inv(sigma2)
    quad = np.einsum("ki,ijkl,lj->", a, t, b)
    return 0.5 * s.n * (p2 * logdet(sigma1) + p1 * logdet(sigma2) + quad)


def _update_first(t: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    # (1/p2) tr_1((I x sigma2)^-1 S)
    return np.einsum("ikml,lk->im", t, np.linalg.inv(sigma2)) / t.shape[1]


def _update_second(t: np.ndarray, sigma1: np.ndarray) -> np.ndarray:
    # (1/p1) tr_2((sigma1 x I)^-1 S)
    return np.einsum("kjil,ik->jl", t, np.linalg.inv(sigma1)) / t.shape[0]


def likelihood_residual(s: SampleCov, est: KroneckerCov) -> float:
    """Largest Frobenius deviation from ``I`` of the averaged partial traces of the decorrelated S.

    Zero exactly when ``est`` solves the Kronecker likelihood equations.
    """
    _require_k2(s)
    if est.dims != s.dims:
        raise DimensionError(f"estimate dims {est.dims} differ from sample dims {s.dims}")
    f1, f2 = est.folded()
    try:
        w1 = spd_power(f1, -0.5)
        w2 = spd_power(f2, -0.5)
    except NotPositiveDefiniteError:
        raise NotPositiveDefiniteError("singular estimate") from None
    d = np.einsum("ai,bj,ijkl,ck,dl->abcd", w1, w2, s.tensor(), w1, w2)
    p1, p2 = s.dims
    r1 = np.einsum("ajcj->ac", d) / p2 - np.eye(p1)
    r2 = np.einsum("ibid->bd", d) / p1 - np.eye(p2)
    return float(max(np.linalg.norm(r1), np.linalg.norm(r2)))


def mle_flip_flop(s: SampleCov, cfg: MleConfig | None = None) -> MleResult:
    """Alternate the two likelihood equations until the stationarity residual is below ``cfg.tol``."""
    cfg = MleConfig() if cfg is None else cfg
    _require_k2(s)
    p1, p2 = s.dims
    if not p1 / p2 + p2 / p1 < s.n:
        warnings.warn(
            f"n={s.n} does not satisfy p1/p2 + p2/p1 < n; the MLE may not exist",
            stacklevel=2,
        )
    t = s.tensor()
    if cfg.init is None:
        sigma2 = np.eye(p2)
    else:
        if cfg.init.dims != s.dims:
            raise DimensionError("initial value has the wrong dimensions")
        sigma2 = cfg.init.factors[1]

    history = []
    residual = np.inf
    it = 0
    for it in range(1, cfg.max_iter + 1):
        try:
            sigma1 = as_spd(_update_first(t, sigma2), "flip-flop iterate 1")
            sigma2 = as_spd(_update_second(t, sigma1), "flip-flop iterate 2")
        except NotPositiveDefiniteError as exc:
            raise DegenerateSampleError(
                f"flip-flop iterate lost positive definiteness at sweep {it}: {exc}"
            ) from None
        est = KroneckerCov((sigma1, sigma2))
        history.append(kron_nll(s, sigma1, sigma2))
        residual = likelihood_residual(s, est)
        if residual <= cfg.tol:
            break
    return MleResult(est.normalized(), it, bool(residual <= cfg.tol), residual, history)
