"""Monte Carlo risk experiments for the PT, MLE and RPT estimators."""
from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ._parallel import parallel_map, replicate_rng
from .errors import ConfigError, DimensionError, KronCovError
from .geometry import cos_sq_angle, kron_cos
from . import linalg
from .linalg import KroneckerCov, TensorSample, sample_tensors
from .mle import MleConfig, mle_flip_flop
from .partial_trace import pt_estimator, rpt_estimator
from .profiles import profile_label, resolve_spectrum

ESTIMATORS = ("PT", "MLE", "RPT")


def relative_frobenius_loss(delta: KroneckerCov, truth: KroneckerCov, n: int) -> float:
    """``n ||delta - Sigma||_F^2 / ||Sigma||_F^2``.

    Dense when ``p`` fits under the materialization cap; above it the norm is
    expanded through traces of factor products.
    """
    if delta.dims != truth.dims:
        raise DimensionError(f"dimension mismatch: {delta.dims} vs {truth.dims}")
    if truth.p <= linalg.MATERIALIZE_CAP:
        t = truth.materialize()
        diff = delta.materialize() - t
        return n * float(np.sum(diff * diff) / np.sum(t * t))
    t_sq = truth.frobenius_sq()
    num = delta.frobenius_sq() - 2.0 * delta.frobenius_inner(truth) + t_sq
    return n * max(num, 0.0) / t_sq


@dataclass
class Scenario:
    dims: tuple
    profile: object = "constant"
    estimators: tuple = ESTIMATORS
    n_grid: tuple = (50,)
    reps: int = 200
    max_reps: int = 20000
    target_rel_se: float = 0.05
    time_cap: float | None = None
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if not self.dims or any(d < 1 for d in self.dims):
            raise ConfigError(f"invalid dims {self.dims}")
        self.estimators = tuple(self.estimators)
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise ConfigError(f"unknown estimator {bad[0]!r}; choose from {ESTIMATORS}")
        self.n_grid = tuple(int(n) for n in self.n_grid)
        if not self.n_grid or any(n < 1 for n in self.n_grid):
            raise ConfigError("n grid must be non-empty with positive entries")
        if self.reps < 2:
            raise ConfigError("reps must be at least 2")
        if self.max_reps < self.reps:
            raise ConfigError("max_reps must be at least reps")
        if not self.target_rel_se > 0:
            raise ConfigError("target_rel_se must be positive")
        self.spectra()

    def spectra(self) -> list[np.ndarray]:
        prof = self.profile
        if isinstance(prof, (list, tuple)) and prof and isinstance(prof[0], (list, tuple)):
            if len(prof) != len(self.dims):
                raise ConfigError("per-mode spectra must match the number of modes")
            return [resolve_spectrum(list(s), d) for s, d in zip(prof, self.dims)]
        return [resolve_spectrum(prof, d) for d in self.dims]

    def truth(self) -> KroneckerCov:
        return KroneckerCov(tuple(np.diag(lam) for lam in self.spectra()))

    @property
    def label(self) -> str:
        return profile_label(self.profile)


@dataclass
class RiskRow:
    estimator: str
    n: int
    dims: tuple
    profile: str
    mean_loss: float
    mc_se: float
    reps: int
    failures: int = 0
    status: str = "ok"
    mean_rel_error: float = np.nan
    rel_error_se: float = np.nan

    @property
    def k(self) -> int:
        return len(self.dims)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = "x".join(map(str, self.dims))
        d["k"] = self.k
        return d


@dataclass
class RiskTable:
    rows: list = field(default_factory=list)

    def get(self, estimator: str, n: int, dims=None, profile=None) -> RiskRow:
        for r in self.rows:
            if (
                r.estimator == estimator
                and r.n == n
                and (dims is None or r.dims == tuple(dims))
                and (profile is None or r.profile == profile)
            ):
                return r
        raise KeyError((estimator, n, dims, profile))


def applicable(estimator: str, dims: Sequence[int], n: int) -> str | None:
    """Reason the estimator cannot run on this cell, or None."""
    p = int(np.prod(dims))
    if estimator in ("MLE", "RPT") and len(dims) != 2:
        return f"{estimator} is defined for k=2 only"
    if estimator in ("MLE", "RPT") and p > linalg.MATERIALIZE_CAP:
        return f"{estimator} needs the dense sample covariance (p={p} above cap)"
    if estimator == "RPT" and n < p:
        return f"RPT needs n >= p = {p} for the determinant scale"
    return None


def estimate(estimator: str, sample: TensorSample, mle_cfg: MleConfig | None = None) -> KroneckerCov:
    if estimator == "PT":
        return pt_estimator(sample)
    s = sample.to_sample_cov()
    if estimator == "MLE":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = mle_flip_flop(s, mle_cfg)
        if not res.converged:
            raise KronCovError(f"flip-flop did not converge in {res.iterations} sweeps")
        return res.estimate
    if estimator == "RPT":
        return rpt_estimator(s)
    raise ValueError(f"unknown estimator {estimator!r}")


def cell_losses(
    truth: KroneckerCov,
    estimators: Sequence[str],
    n: int,
    replicates: Sequence[int],
    seed: int,
    threads: int | None = None,
    mle_cfg: MleConfig | None = None,
) -> list[dict]:
    """Losses of every estimator on shared draws, one dict per replicate.

    Failed fits are recorded as ``None``.
    """

    def one(r):
        sample = sample_tensors(truth, n, replicate_rng(seed, "risk", r, n))
        out = {}
        for est in estimators:
            try:
                out[est] = relative_frobenius_loss(estimate(est, sample, mle_cfg), truth, n)
            except KronCovError:
                out[est] = None
        return out

    return parallel_map(one, replicates, threads)


def _summary(values: list) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        return (float(arr.mean()) if arr.size else np.nan), np.nan
    return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(arr.size))


def risk_experiment(sc: Scenario, threads: int | None = None) -> RiskTable:
    """Mean relative Frobenius loss and its MC standard error on every (estimator, n) cell.

    Rows also carry the unsquared relative error ``||delta - Sigma||_F / ||Sigma||_F``
    averaged over the same replicates.

    Replicates are added in doublings until every cell's standard error is
    below ``target_rel_se`` of its mean, ``max_reps`` is reached, or the
    optional wall-clock ``time_cap`` runs out.
    """
    truth = sc.truth()
    table = RiskTable()
    start = time.monotonic()
    for n in sc.n_grid:
        reasons = {e: applicable(e, truth.dims, n) for e in sc.estimators}
        active = [e for e in sc.estimators if reasons[e] is None]
        losses = {e: [] for e in active}
        failures = {e: 0 for e in active}
        done, target = 0, sc.reps
        while active and done < target:
            for out in cell_losses(truth, active, n, range(done, target), sc.seed, threads):
                for e in active:
                    if out[e] is None:
                        failures[e] += 1
                    else:
                        losses[e].append(out[e])
            done = target
            converged = True
            for e in active:
                mean, se = _summary(losses[e])
                if not (np.isfinite(se) and se < sc.target_rel_se * abs(mean)):
                    converged = False
            out_of_time = sc.time_cap is not None and time.monotonic() - start > sc.time_cap
            if not converged and not out_of_time:
                target = min(2 * target, sc.max_reps)
        for e in sc.estimators:
            if reasons[e] is not None:
                table.rows.append(
                    RiskRow(e, n, truth.dims, sc.label, np.nan, np.nan, 0, 0, "not-applicable")
                )
                continue
            mean, se = _summary(losses[e])
            err, err_se = _summary(np.sqrt(np.asarray(losses[e]) / n))
            status = "ok" if np.isfinite(se) and se < sc.target_rel_se * abs(mean) else "se-target-missed"
            table.rows.append(
                RiskRow(
                    e, n, truth.dims, sc.label, mean, se, len(losses[e]), failures[e], status, err, err_se
                )
            )
    return table


@dataclass
class ConvergenceRow:
    m: int
    empirical: float
    predicted: float


@dataclass
class ConvergenceTable:
    rows: list
    slope: float

    @property
    def empirical(self) -> np.ndarray:
        return np.array([r.empirical for r in self.rows])

    @property
    def predicted(self) -> np.ndarray:
        return np.array([r.predicted for r in self.rows])


def predicted_rate(spectra: Sequence, n: int) -> float:
    """``sup_j p_j cos^2(lambda_j, 1) / (sqrt(n p) cos(lambda, 1))`` for the PT relative error."""
    dims = [len(lam) for lam in spectra]
    p = float(np.prod(dims))
    num = max(d * cos_sq_angle(lam) for d, lam in zip(dims, spectra))
    return num / (np.sqrt(n * p) * kron_cos(spectra))


def convergence_rate_check(
    k: int,
    m_grid: Sequence[int],
    profile="constant",
    n: int = 1,
    reps: int = 50,
    seed: int = 0,
    threads: int | None = None,
) -> ConvergenceTable:
    """Median PT relative Frobenius error against the predicted rate as every ``p_i = m`` grows.

    ``slope`` is the least-squares log-log slope of empirical on predicted,
    or NaN when the predicted rate is flat over the grid.
    """
    if k < 2:
        raise ConfigError("convergence checks need k >= 2")
    rows = []
    for m in m_grid:
        sc = Scenario(dims=(m,) * k, profile=profile, estimators=("PT",), n_grid=(n,), reps=reps)
        truth = sc.truth()
        out = cell_losses(truth, ["PT"], n, range(reps), seed, threads)
        rel = [np.sqrt(o["PT"] / n) for o in out if o["PT"] is not None]
        rows.append(ConvergenceRow(m, float(np.median(rel)), predicted_rate(sc.spectra(), n)))
    pred = np.log([r.predicted for r in rows])
    emp = np.log([r.empirical for r in rows])
    if pred.max() - pred.min() < 0.05:
        slope = np.nan
    else:
        slope = float(np.polyfit(pred, emp, 1)[0])
    return ConvergenceTable(rows, slope)
