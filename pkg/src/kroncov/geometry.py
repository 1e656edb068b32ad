"""Fisher-information geometry of the Kronecker submodel.

Tangent and auxiliary subspaces are represented by explicit bases of
symmetric p x p matrices, stacked along the first axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Sequence

import numpy as np
from scipy.linalg import null_space

from .errors import DimensionError, NumericalError, SizeLimitError
from .linalg import (
    KroneckerCov,
    as_spd,
    check_dims,
    fim_inner,
    kron_all,
    logdet,
    spd_power,
)
from .partial_trace import partial_trace_matrix

#: Largest p = p1 * p2 for which Sym(p) bases are built explicitly.
BASIS_CAP = 64


@dataclass
class TangentBasis:
    vectors: np.ndarray
    label: str

    @property
    def p(self) -> int:
        return self.vectors.shape[1]

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def ambient_dim(self) -> int:
        return comb(self.p + 1, 2)


def sym_basis(p: int) -> np.ndarray:
    """Standard basis ``E_aa`` and ``E_ab + E_ba`` of Sym(p)."""
    rows, cols = np.triu_indices(p)
    out = np.zeros((rows.size, p, p))
    idx = np.arange(rows.size)
    out[idx, rows, cols] = 1.0
    out[idx, cols, rows] = 1.0
    return out


def _span(generators: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    m, p, _ = generators.shape
    u, s, vt = np.linalg.svd(generators.reshape(m, p * p), full_matrices=False)
    rank = int(np.sum(s > rtol * s[0]))
    return vt[:rank].reshape(rank, p, p)


def _check_cap(p: int):
    if p > BASIS_CAP:
        raise SizeLimitError(f"Sym(p) bases are limited to p <= {BASIS_CAP}, got p={p}")


def kron_tangent_basis(sigma1, sigma2) -> TangentBasis:
    """Basis of ``span{H1 x Sigma2, Sigma1 x H2}``; the shared direction is counted once."""
    sigma1 = as_spd(sigma1, "sigma1")
    sigma2 = as_spd(sigma2, "sigma2")
    p1, p2 = sigma1.shape[0], sigma2.shape[0]
    _check_cap(p1 * p2)
    gens = [np.kron(h, sigma2) for h in sym_basis(p1)]
    gens += [np.kron(sigma1, h) for h in sym_basis(p2)]
    vectors = _span(np.array(gens))
    expected = comb(p1 + 1, 2) + comb(p2 + 1, 2) - 1
    if vectors.shape[0] != expected:
        raise NumericalError(
            f"Kronecker tangent space has dimension {vectors.shape[0]}, expected {expected}"
        )
    return TangentBasis(vectors, "kron-tangent")


def _null_basis(dims, constraint, label: str) -> TangentBasis:
    p = int(np.prod(dims))
    _check_cap(p)
    basis = sym_basis(p)
    rows = np.array([constraint(b) for b in basis]).T
    coeffs = null_space(rows)
    vectors = np.einsum("mj,mab->jab", coeffs, basis)
    p1, p2 = dims
    expected = comb(p + 1, 2) - (comb(p1 + 1, 2) + comb(p2 + 1, 2) - 1)
    if vectors.shape[0] != expected:
        raise NumericalError(f"{label} has dimension {vectors.shape[0]}, expected {expected}")
    return TangentBasis(vectors, label)


def pt_aux_basis(dims: Sequence[int]) -> TangentBasis:
    """Basis of ``{S in Sym(p): tr_1(S) = 0, tr_2(S) = 0}``."""
    dims = check_dims(dims)
    if len(dims) != 2:
        raise DimensionError("auxiliary bases are defined for k=2")

    def constraint(b):
        return np.concatenate(
            [partial_trace_matrix(b, dims, 1).ravel(), partial_trace_matrix(b, dims, 2).ravel()]
        )

    return _null_basis(dims, constraint, "pt-aux")


def mle_aux_basis(sigma1, sigma2) -> TangentBasis:
    """Basis of ``{S: tr_i((Sigma1 x Sigma2)^-1 S) = 0, i = 1, 2}``."""
    sigma1 = as_spd(sigma1, "sigma1")
    sigma2 = as_spd(sigma2, "sigma2")
    dims = (sigma1.shape[0], sigma2.shape[0])
    inv = np.kron(np.linalg.inv(sigma1), np.linalg.inv(sigma2))

    def constraint(b):
        m = inv @ b
        return np.concatenate(
            [partial_trace_matrix(m, dims, 1).ravel(), partial_trace_matrix(m, dims, 2).ravel()]
        )

    return _null_basis(dims, constraint, "mle-aux")


def _fim_orthonormal(basis: TangentBasis, whitener: np.ndarray) -> np.ndarray:
    x = np.einsum("ab,mbc,cd->mad", whitener, basis.vectors, whitener)
    x = x.reshape(basis.dim, -1) / np.sqrt(2.0)
    gram = x @ x.T
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{basis.label} basis is rank deficient under the FIM") from None
    if np.min(np.diag(chol)) ** 2 <= 1e-12 * np.trace(gram):
        raise NumericalError(f"{basis.label} basis is rank deficient under the FIM")
    return np.linalg.solve(chol, x)


def principal_angles(u: TangentBasis, v: TangentBasis, sigma) -> np.ndarray:
    """Principal angles between two subspaces of Sym(p) under ``<.,.>_sigma``, ascending."""
    sigma = as_spd(sigma, "sigma")
    if not (u.p == v.p == sigma.shape[0]):
        raise DimensionError("bases and sigma must share the ambient dimension")
    if u.dim == 0 or v.dim == 0:
        return np.array([])
    w = spd_power(sigma, -0.5)
    qu = _fim_orthonormal(u, w)
    qv = _fim_orthonormal(v, w)
    s = np.linalg.svd(qu @ qv.T, compute_uv=False)
    return np.arccos(np.clip(s, 0.0, 1.0))


def avar_ratio_exact(sigma1, sigma2) -> float:
    """Worst-case asymptotic variance ratio of PT over the MLE, ``sin(theta)^-2``.

    ``theta`` is the smallest principal angle between the PT auxiliary tangent
    space and the Kronecker tangent space at ``sigma1 x sigma2``.
    """
    sigma1 = as_spd(sigma1, "sigma1")
    sigma2 = as_spd(sigma2, "sigma2")
    dims = (sigma1.shape[0], sigma2.shape[0])
    aux = pt_aux_basis(dims)
    if aux.dim == 0:
        return 1.0
    w = spd_power(np.kron(sigma1, sigma2), -0.5)
    qa = _fim_orthonormal(aux, w)
    qk = _fim_orthonormal(kron_tangent_basis(sigma1, sigma2), w)
    smax = float(np.linalg.svd(qa @ qk.T, compute_uv=False)[0])
    sin_sq = 1.0 - min(smax, 1.0) ** 2
    return np.inf if sin_sq <= 0 else 1.0 / sin_sq


def _positive_vector(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float).ravel()
    if lam.size == 0:
        raise DimensionError("eigenvalue vector is empty")
    if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        raise DimensionError("eigenvalues must be finite and strictly positive")
    return lam


def cos_sq_angle(lam) -> float:
    """``cos^2`` of the angle between ``lam`` and the all-ones vector."""
    lam = _positive_vector(lam)
    lam = lam / lam.max()
    return float(lam.sum() ** 2 / (lam.size * np.sum(lam * lam)))


def avar_ratio_lower_bound(*spectra) -> float:
    """Eigenvalue lower bound ``max_i cos(angle(lambda_i, 1))^-2`` on the worst-case ratio."""
    if not spectra:
        raise DimensionError("need at least one spectrum")
    return max(1.0 / cos_sq_angle(lam) for lam in spectra)


def spiked_cos_inv_sq(q: int, m: int, a: float, b: float) -> float:
    """Closed form of ``cos^-2`` for ``q`` entries ``a + b`` and ``m - q`` entries ``b``."""
    if not 0 < q <= m:
        raise DimensionError("need 0 < q <= m")
    r = q / m
    return (r * a * a + 2 * r * a * b + b * b) / (r * r * a * a + 2 * r * a * b + b * b)


def kron_cos(spectra: Sequence) -> float:
    """``cos`` of the angle between the Kronecker eigenvalue vector and the ones vector.

    Equals the product of the per-mode cosines, so the long vector is never formed.
    """
    return float(np.prod([np.sqrt(cos_sq_angle(lam)) for lam in spectra]))


@dataclass
class OrthogParam:
    c: float
    tilde_factors: tuple


def orthog_param(kc: KroneckerCov) -> OrthogParam:
    """Log overall scale plus unit-determinant factors."""
    logdets = [logdet(f) for f in kc.factors]
    c = float(np.log(kc.scale) + sum(ld / f.shape[0] for ld, f in zip(logdets, kc.factors)))
    tilde = tuple(f * np.exp(-ld / f.shape[0]) for ld, f in zip(logdets, kc.factors))
    return OrthogParam(c, tilde)


def orthog_unparam(op: OrthogParam) -> KroneckerCov:
    return KroneckerCov(tuple(op.tilde_factors), float(np.exp(op.c)))


@dataclass
class FimOrthogonality:
    max_cross: float
    scale_ratio: float
    block_ratios: list
    expected_block_ratios: list


def _unit_det_tangents(tilde: np.ndarray) -> np.ndarray:
    # directions H with tr(tilde^-1 H) = 0, i.e. tangent to {|A| = 1} at tilde
    p = tilde.shape[0]
    inv = np.linalg.inv(tilde)
    out = []
    for h in sym_basis(p):
        h = h - np.trace(inv @ h) / p * tilde
        if np.linalg.norm(h) > 1e-12:
            out.append(h)
    return np.array(out).reshape(-1, p, p)


def fim_orthogonality_check(kc: KroneckerCov, v: float = 1.0) -> FimOrthogonality:
    """FIM cross terms between the scale, and each unit-determinant factor, direction.

    ``max_cross`` should vanish. ``scale_ratio`` is ``||v Sigma||^2_Sigma`` over
    the one-dimensional Wishart norm ``v^2 / 2`` and should equal ``p``;
    ``block_ratios[i]`` compares factor-i directions with the FIM of factor i
    alone and should equal ``p / p_i``.
    """
    op = orthog_param(kc)
    sigma = orthog_unparam(op).materialize()
    _check_cap(sigma.shape[0])
    scale = np.exp(op.c)
    tilde = list(op.tilde_factors)
    groups = [[v * sigma]]
    ratios = []
    for i, t in enumerate(tilde):
        hs = _unit_det_tangents(t)
        dirs = []
        r = []
        for h in hs:
            facs = tilde.copy()
            facs[i] = h
            d = scale * kron_all(facs)
            dirs.append(d)
            r.append(fim_inner(sigma, d, d) / fim_inner(t, h, h))
        groups.append(dirs)
        ratios.append(r)
    cross = 0.0
    for gi in range(len(groups)):
        for gj in range(gi + 1, len(groups)):
            for a in groups[gi]:
                for b in groups[gj]:
                    cross = max(cross, abs(fim_inner(sigma, a, b)))
    scale_ratio = fim_inner(sigma, v * sigma, v * sigma) / (0.5 * v * v)
    return FimOrthogonality(cross, scale_ratio, ratios, [kc.p / d for d in kc.dims])
