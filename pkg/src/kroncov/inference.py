"""Tests on Kronecker factors: diagonality via the affine-invariant distance,
compound symmetry via the likelihood ratio, and their intersection test.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from scipy import stats

from ._parallel import parallel_map, replicate_rng
from .errors import DimensionError, NumericalError
from .linalg import (
    KroneckerCov,
    SampleCov,
    affine_invariant_distance,
    as_spd,
    as_symmetric,
    logdet,
    sample_wishart,
)
from .mle import MleConfig, mle_flip_flop
from .partial_trace import rpt_factors


class BoundaryFitError(NumericalError):
    pass


@dataclass
class TestReport:
    __test__ = False

    statistic: float
    critical_value: float
    reject: bool
    level: float
    method: str


def sphericity_stat(sigma_hat) -> float:
    """``d_AI(Sigma_hat, diag(Sigma_hat))``; zero exactly when the input is diagonal."""
    sigma_hat = as_spd(sigma_hat, "sigma_hat")
    return affine_invariant_distance(sigma_hat, np.diag(np.diag(sigma_hat)))


def _batched_sphericity(mats: np.ndarray) -> np.ndarray:
    # d_AI(A, diag A) equals ||log eig(corr(A))||, which batches cleanly
    d = np.sqrt(np.einsum("nii->ni", mats))
    corr = mats / (d[:, :, None] * d[:, None, :])
    w = np.linalg.eigvalsh(corr)
    return np.sqrt(np.sum(np.log(w) ** 2, axis=1))


def sphericity_null_draws(p: int, dof: int, reps: int, rng: np.random.Generator, sigma=None) -> np.ndarray:
    """Statistic values under ``dof * S ~ Wishart_p(sigma, dof)``, ``sigma`` defaulting to ``I``."""
    if dof < p:
        raise DimensionError(f"need dof >= p for a non-singular Wishart draw (dof={dof}, p={p})")
    scale = np.eye(p) if sigma is None else as_spd(sigma)
    draws = stats.wishart(df=dof, scale=scale).rvs(size=reps, random_state=rng)
    draws = np.asarray(draws, dtype=float).reshape(reps, p, p) / dof
    return _batched_sphericity(draws)


def sphericity_quantile(
    p: int, dof: int, level: float, reps: int, rng: np.random.Generator, sigma=None
) -> float:
    """Empirical ``level`` quantile of the statistic under a diagonal null."""
    if reps < 100:
        raise ValueError("use at least 100 replicates for a simulated quantile")
    if not 0 <= level <= 1:
        raise ValueError("level must lie in [0, 1]")
    return float(np.quantile(sphericity_null_draws(p, dof, reps, rng, sigma), level))


def compound_symmetry_fit(s) -> tuple[float, float]:
    """Maximum likelihood ``(a, b)`` for ``Sigma = a I + b 11^T``.

    In the eigenbasis of ``11^T`` the likelihood splits into the ones direction
    (eigenvalue ``a + p b``) and its complement (eigenvalue ``a``), each fitted
    by the matching average of ``S``.
    """
    s = s.matrix if isinstance(s, SampleCov) else as_symmetric(s)
    p = s.shape[0]
    if p < 2:
        raise DimensionError("compound symmetry needs p >= 2")
    lam_one = float(np.sum(s)) / p
    lam_rest = (float(np.trace(s)) - lam_one) / (p - 1)
    if not (lam_one > 0 and lam_rest > 0):
        raise BoundaryFitError("compound-symmetric fit falls outside the positive-definite cone")
    return lam_rest, (lam_one - lam_rest) / p


def compound_symmetry_matrix(a: float, b: float, p: int) -> np.ndarray:
    return a * np.eye(p) + b * np.ones((p, p))


def compound_symmetry_lrt(s, dof: int) -> tuple[float, int]:
    """``2 [nll(S, Sigma_CS) - nll(S, S)]`` at ``dof`` degrees of freedom, with its chi-squared df."""
    s = s.matrix if isinstance(s, SampleCov) else as_symmetric(s)
    p = s.shape[0]
    a, b = compound_symmetry_fit(s)
    # tr(Sigma_CS^-1 S) = p at the fit, so only the log-determinants remain
    stat = dof * (np.log(a + p * b) + (p - 1) * np.log(a) - logdet(as_spd(s)))
    return float(max(stat, 0.0)), comb(p + 1, 2) - 2


@dataclass
class IntersectionResult:
    h1: TestReport
    h2: TestReport
    joint_level: float

    @property
    def reject(self) -> bool:
        return self.h1.reject or self.h2.reject


def fit_factors(s: SampleCov, estimator: str = "mle", cfg: MleConfig | None = None) -> list[np.ndarray]:
    if estimator == "mle":
        return list(mle_flip_flop(s, cfg).estimate.factors)
    if estimator == "rpt":
        return rpt_factors(s)
    raise ValueError(f"unknown estimator {estimator!r} (use 'mle' or 'rpt')")


def intersection_test(
    s: SampleCov,
    level: float = 0.95,
    cfg: MleConfig | None = None,
    rng: np.random.Generator | None = None,
    *,
    estimator: str = "mle",
    quantile_reps: int = 5000,
    sphericity_critical: float | None = None,
) -> IntersectionResult:
    """Diagonality of factor 1 and compound symmetry of factor 2 from one Kronecker fit.

    ``level`` is the quantile level of each critical value (0.95 gives
    marginal size 0.05); the reported ``joint_level`` is ``alpha (2 - alpha)``
    with ``alpha = 1 - level``. At ``level = 0`` both critical values are 0
    and both hypotheses are rejected.
    """
    if s.k != 2:
        raise DimensionError(f"the intersection test needs k=2, got k={s.k}")
    if not 0 <= level < 1:
        raise ValueError("level must lie in [0, 1)")
    p1, p2 = s.dims
    f1, f2 = fit_factors(s, estimator, cfg)

    stat1 = sphericity_stat(f1)
    stat2, df = compound_symmetry_lrt(f2, s.n * p1)
    if level == 0:
        crit1 = crit2 = 0.0
    else:
        if sphericity_critical is None:
            rng = np.random.default_rng() if rng is None else rng
            sphericity_critical = sphericity_quantile(p1, s.n * p2, level, quantile_reps, rng)
        crit1 = sphericity_critical
        crit2 = float(stats.chi2.ppf(level, df))
    alpha = 1.0 - level
    return IntersectionResult(
        TestReport(stat1, crit1, bool(stat1 >= crit1), level, "sphericity"),
        TestReport(stat2, crit2, bool(stat2 >= crit2), level, "compound-symmetry"),
        alpha * (2.0 - alpha),
    )


def scenario_factors(name: str) -> tuple[np.ndarray, np.ndarray]:
    """Named ``(Sigma1, Sigma2)`` pairs: ``null`` satisfies both hypotheses, ``alternative`` neither."""
    sigma1 = np.diag(np.arange(1.0, 6.0))
    sigma2 = compound_symmetry_matrix(2.0, 1.0, 3)
    if name == "null":
        return sigma1, sigma2
    if name == "alternative":
        e3 = np.zeros((3, 3))
        e3[2, 2] = 1.0
        return sigma1 + 0.1 * np.ones((5, 5)), sigma2 - 0.3 * e3
    raise ValueError(f"unknown test scenario {name!r} (use 'null' or 'alternative')")


@dataclass
class ContingencyTable:
    """Joint rejection counts; rows are H1 (no reject, reject), columns H2."""

    counts: np.ndarray
    failures: int
    level: float
    n: int

    @property
    def reps(self) -> int:
        return int(self.counts.sum())

    @property
    def proportions(self) -> np.ndarray:
        return self.counts / self.reps

    @property
    def independence(self) -> np.ndarray:
        prop = self.proportions
        return np.outer(prop.sum(axis=1), prop.sum(axis=0))

    def std_errors(self) -> np.ndarray:
        prop = self.proportions
        return np.sqrt(prop * (1 - prop) / self.reps)


def independence_experiment(
    sigma1,
    sigma2,
    n: int,
    reps: int = 5000,
    level: float = 0.95,
    seed: int = 0,
    *,
    estimator: str = "mle",
    quantile_reps: int = 5000,
    cfg: MleConfig | None = None,
    threads: int = 1,
) -> ContingencyTable:
    """Monte Carlo contingency table of the two rejection decisions.

    The diagonality critical value is simulated once and shared by all replicates.
    """
    truth = KroneckerCov((as_spd(sigma1), as_spd(sigma2)))
    p1, p2 = truth.dims
    crit = None
    if level > 0:
        crit = sphericity_quantile(p1, n * p2, level, quantile_reps, replicate_rng(seed, "quantile", 0))

    def one(r):
        s = sample_wishart(truth, n, replicate_rng(seed, "replicate", r))
        try:
            res = intersection_test(
                s, level, cfg, estimator=estimator, sphericity_critical=crit
            )
        except NumericalError:
            return None
        return int(res.h1.reject), int(res.h2.reject)

    counts = np.zeros((2, 2), dtype=int)
    failures = 0
    for out in parallel_map(one, range(reps), threads):
        if out is None:
            failures += 1
        else:
            counts[out] += 1
    return ContingencyTable(counts, failures, level, n)
