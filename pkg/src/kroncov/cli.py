"""Command-line front end.

    kroncov simulate-risk --preset table-large-n --out results/
    kroncov estimate --input data.csv --estimator pt --out fit/
    kroncov diagnose --config spectra.toml --out diag/
    kroncov test --preset table-independence --out test/

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import io, linalg
from ._parallel import THREADS_ENV, default_threads, replicate_rng
from .errors import ConfigError, DataError, KronCovError, NumericalError, SizeLimitError
from .geometry import (
    BASIS_CAP,
    avar_ratio_exact,
    avar_ratio_lower_bound,
    cos_sq_angle,
    orthog_param,
)
from .inference import independence_experiment, intersection_test, scenario_factors
from .linalg import KroneckerCov, TensorSample, sample_wishart
from .mle import MleConfig, mle_flip_flop
from .partial_trace import correlation, masked_pt_estimator, pt_estimator, rpt_estimator
from .profiles import profile_label, resolve_spectrum
from .simulation import RiskTable, Scenario, risk_experiment

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

RISK_HEADER = ["estimator", "n", "k", "dims", "profile", "mean_loss", "mc_se", "reps"]
RISK_EXTRA = ["failures", "status", "mean_rel_error", "rel_error_se"]

SCENARIO_KEYS = {
    "name", "dims", "profile", "estimators", "n_grid", "reps", "max_reps",
    "target_rel_se", "time_cap", "seed",
}
SIMULATE_KEYS = {"seed", "threads", "materialize_cap", "scenario"}
DIAGNOSE_KEYS = {"materialize_cap", "case", "sweep"}
CASE_KEYS = {"name", "dims", "profile", "spectra"}
SWEEP_KEYS = {"name", "dims", "eps"}
TEST_KEYS = {
    "seed", "threads", "materialize_cap", "mode", "scenario", "sigma1", "sigma2", "input",
    "n", "reps", "level", "estimator", "quantile_reps", "tol", "max_iter",
}


# -- configuration ---------------------------------------------------------

def preset_names() -> list[str]:
    root = resources.files("kroncov") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_config(path=None, preset=None) -> dict:
    if (path is None) == (preset is None):
        raise ConfigError("give exactly one of --config or --preset")
    if preset is not None:
        if preset not in preset_names():
            raise ConfigError(f"unknown preset {preset!r}; available: {', '.join(preset_names())}")
        text = (resources.files("kroncov") / "presets" / f"{preset}.toml").read_text()
        where = f"preset {preset}"
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        where = str(path)
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _check_keys(table: dict, allowed: set, where: str):
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in {where}")


def _threads(args, cfg: dict) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    if THREADS_ENV in os.environ:
        return default_threads()
    return max(1, int(cfg.get("threads", 1)))


def _seed(args, cfg: dict) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an integer in [0, 2^64)")
    return seed


def _apply_cap(cfg: dict):
    if "materialize_cap" in cfg:
        try:
            linalg.set_materialize_cap(int(cfg["materialize_cap"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"materialize_cap: {exc}") from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_table(out: Path, stem: str, header: list, records: list, fmt: str):
    if fmt == "json":
        _write_json(out / f"{stem}.json", records)
    else:
        io.write_records_csv(out / f"{stem}.csv", header, records)


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        return None if np.isnan(v) else float(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    return v


def _write_json(path: Path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=False) + "\n")


# -- simulate-risk ----------------------------------------------------------

def scenarios_from_config(cfg: dict, seed: int) -> list[Scenario]:
    _check_keys(cfg, SIMULATE_KEYS, "config")
    blocks = cfg.get("scenario", [])
    if not isinstance(blocks, list) or not blocks:
        raise ConfigError("no scenarios: add at least one [[scenario]] block")
    out = []
    for i, block in enumerate(blocks, start=1):
        if not isinstance(block, dict):
            raise ConfigError(f"scenario {i} must be a table")
        _check_keys(block, SCENARIO_KEYS, f"scenario {i}")
        if "dims" not in block:
            raise ConfigError(f"scenario {i} needs 'dims'")
        kw = dict(block)
        kw.setdefault("seed", seed)
        try:
            out.append(Scenario(**kw))
        except TypeError as exc:
            raise ConfigError(f"scenario {i}: {exc}") from None
    return out


def risk_records(table: RiskTable) -> list[dict]:
    return [r.to_dict() for r in table.rows]


def _fmt(v, spec=".4g") -> str:
    return "n/a" if v is None or (isinstance(v, float) and np.isnan(v)) else format(v, spec)


def print_risk_table(records: list[dict], stream=None):
    stream = sys.stdout if stream is None else stream
    cols = ["estimator", "n", "dims", "profile", "mean_loss", "mc_se", "reps", "status"]
    rows = [
        [str(r["estimator"]), str(r["n"]), r["dims"], r["profile"],
         _fmt(r["mean_loss"]), _fmt(r["mc_se"]), str(r["reps"]), r["status"]]
        for r in records
    ]
    widths = [max(len(c), *(len(row[i]) for row in rows)) for i, c in enumerate(cols)]
    print("  ".join(c.ljust(w) for c, w in zip(cols, widths)), file=stream)
    for row in rows:
        print("  ".join(v.ljust(w) for v, w in zip(row, widths)), file=stream)


def cmd_simulate_risk(args) -> int:
    cfg = load_config(args.config, args.preset)
    _apply_cap(cfg)
    seed = _seed(args, cfg)
    threads = _threads(args, cfg)
    scenarios = scenarios_from_config(cfg, seed)
    records = []
    for sc in scenarios:
        records += risk_records(risk_experiment(sc, threads))
    out = _out_dir(args)
    io.write_records_csv(out / "risk.csv", RISK_HEADER + RISK_EXTRA, records)
    _write_json(out / "risk.json", records)
    print_risk_table(records)
    return 0


# -- estimate --------------------------------------------------------------

def cmd_estimate(args) -> int:
    data = io.read_tensor(args.input)
    if args.dims is not None and io.parse_dims(args.dims) != data.dims:
        raise DataError(
            f"--dims {args.dims} does not match the file header dims={io.format_dims(data.dims)}"
        )
    k = len(data.dims)
    estimator = args.estimator
    if data.masked and estimator not in ("pt", "auto"):
        raise DataError(f"{estimator} cannot handle missing entries; use the pt estimator")
    if estimator in ("mle", "rpt") and k != 2:
        raise DataError(f"{estimator} needs k=2, got k={k}")
    out = _out_dir(args)
    summary = {"dims": io.format_dims(data.dims), "n": data.n, "k": k}

    if data.masked:
        res = masked_pt_estimator(data.masked_tensors())
        summary.update(estimator="masked-pt", status=res.status, min_eigenvalues=res.min_eigenvalues)
        for i, f in enumerate(res.factors, start=1):
            io.write_matrix_csv(out / f"factor_{i}.csv", f)
            io.write_matrix_csv(out / f"correlation_{i}.csv", correlation(f))
        if res.status == "ok":
            _write_orthog(out, KroneckerCov(tuple(res.factors)))
        _write_json(out / "summary.json", summary)
        return 0

    sample = TensorSample(data.values)
    if estimator in ("pt", "auto"):
        est = pt_estimator(sample)
        summary["estimator"] = "pt"
    elif estimator == "mle":
        fit = mle_flip_flop(sample.to_sample_cov(), MleConfig(tol=args.tol, max_iter=args.max_iter))
        if not fit.converged:
            raise NumericalError(
                f"flip-flop did not converge in {fit.iterations} sweeps (residual {fit.final_residual:.3g})"
            )
        est = fit.estimate
        summary.update(estimator="mle", iterations=fit.iterations, residual=fit.final_residual)
    else:
        est = rpt_estimator(sample.to_sample_cov())
        summary["estimator"] = "rpt"
    summary["scale"] = est.scale
    for i, f in enumerate(est.folded(), start=1):
        io.write_matrix_csv(out / f"factor_{i}.csv", f)
        io.write_matrix_csv(out / f"correlation_{i}.csv", correlation(f))
    _write_orthog(out, est)
    _write_json(out / "summary.json", summary)
    return 0


def _write_orthog(out: Path, est: KroneckerCov):
    op = orthog_param(est)
    files = []
    for i, f in enumerate(op.tilde_factors, start=1):
        name = f"unit_det_factor_{i}.csv"
        io.write_matrix_csv(out / name, f)
        files.append(name)
    _write_json(out / "orthog.json", {"c": op.c, "unit_det_factors": files})


# -- diagnose --------------------------------------------------------------

def diagnose_cases(cfg: dict) -> list[tuple[str, list]]:
    _check_keys(cfg, DIAGNOSE_KEYS, "config")
    cases = []
    for i, block in enumerate(cfg.get("case", []), start=1):
        _check_keys(block, CASE_KEYS, f"case {i}")
        if "spectra" in block:
            spectra = [np.asarray(s, dtype=float) for s in block["spectra"]]
            label = block.get("name", "explicit")
        elif "profile" in block and "dims" in block:
            spectra = [resolve_spectrum(block["profile"], int(d)) for d in block["dims"]]
            label = block.get("name", profile_label(block["profile"]))
        else:
            raise ConfigError(f"case {i} needs 'spectra' or both 'profile' and 'dims'")
        cases.append((label, spectra))
    for i, block in enumerate(cfg.get("sweep", []), start=1):
        _check_keys(block, SWEEP_KEYS, f"sweep {i}")
        if "eps" not in block or "dims" not in block:
            raise ConfigError(f"sweep {i} needs 'dims' and 'eps'")
        for eps in block["eps"]:
            spectra = [np.r_[1.0, np.full(int(d) - 1, float(eps))] for d in block["dims"]]
            cases.append((f"{block.get('name', 'spike')}(eps={eps:g})", spectra))
    if not cases:
        raise ConfigError("no cases: add [[case]] or [[sweep]] blocks")
    for label, spectra in cases:
        for lam in spectra:
            if lam.ndim != 1 or lam.size == 0 or np.any(~np.isfinite(lam)) or np.any(lam <= 0):
                raise DataError(f"case {label!r}: eigenvalues must be finite and positive")
    return cases


def diagnose_records(cases) -> tuple[list[str], list[dict]]:
    kmax = max(len(s) for _, s in cases)
    header = ["profile", "exact_ratio", "lower_bound"] + [f"cos_sq_{i}" for i in range(1, kmax + 1)]
    records = []
    for label, spectra in cases:
        rec = {"profile": label, "lower_bound": avar_ratio_lower_bound(*spectra)}
        p = int(np.prod([len(s) for s in spectra]))
        if len(spectra) == 2 and p <= BASIS_CAP:
            rec["exact_ratio"] = avar_ratio_exact(np.diag(spectra[0]), np.diag(spectra[1]))
        for i, lam in enumerate(spectra, start=1):
            rec[f"cos_sq_{i}"] = cos_sq_angle(lam)
        records.append(rec)
    return header, records


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config, args.preset)
    header, records = diagnose_records(diagnose_cases(cfg))
    out = _out_dir(args)
    _write_table(out, "diagnose", header, records, args.format)
    for r in records:
        print(f"{r['profile']}: exact={_fmt(r.get('exact_ratio'))} bound={_fmt(r['lower_bound'])}")
    return 0


# -- test ------------------------------------------------------------------

REPORT_HEADER = ["scenario", "hypothesis", "method", "statistic", "critical_value", "reject", "level"]
TABLE_HEADER = ["scenario", "n", "h1", "h2", "count", "proportion", "std_error", "independence"]


def _test_factors(cfg: dict, name) -> tuple[np.ndarray, np.ndarray]:
    if name is not None:
        try:
            return scenario_factors(name)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if "sigma1" not in cfg or "sigma2" not in cfg:
        raise ConfigError("give 'scenario' or both 'sigma1' and 'sigma2'")
    return np.asarray(cfg["sigma1"], float), np.asarray(cfg["sigma2"], float)


def cmd_test(args) -> int:
    cfg = load_config(args.config, args.preset)
    _check_keys(cfg, TEST_KEYS, "config")
    _apply_cap(cfg)
    seed = _seed(args, cfg)
    threads = _threads(args, cfg)
    mode = cfg.get("mode", "single")
    if mode not in ("single", "experiment"):
        raise ConfigError(f"mode must be 'single' or 'experiment', got {mode!r}")
    level = float(cfg.get("level", 0.95))
    estimator = cfg.get("estimator", "mle")
    if estimator not in ("mle", "rpt"):
        raise ConfigError(f"estimator must be 'mle' or 'rpt', got {estimator!r}")
    mle_cfg = MleConfig(tol=float(cfg.get("tol", 1e-9)), max_iter=int(cfg.get("max_iter", 500)))
    quantile_reps = int(cfg.get("quantile_reps", 5000))
    names = cfg.get("scenario")
    names = [names] if names is None or isinstance(names, str) else list(names)
    out = _out_dir(args)

    if mode == "single":
        reports = []
        for name in names:
            if "input" in cfg:
                data = io.read_tensor(cfg["input"])
                if data.masked:
                    raise DataError("the intersection test needs fully observed data")
                s = TensorSample(data.values).to_sample_cov()
                label = name or Path(cfg["input"]).stem
            else:
                s1, s2 = _test_factors(cfg, name)
                n = int(cfg.get("n", 200))
                s = sample_wishart(KroneckerCov((s1, s2)), n, replicate_rng(seed, "test-sample", 0))
                label = name or "explicit"
            res = intersection_test(
                s, level, mle_cfg, replicate_rng(seed, "quantile", 0),
                estimator=estimator, quantile_reps=quantile_reps,
            )
            for hyp, rep in (("H1", res.h1), ("H2", res.h2)):
                reports.append({
                    "scenario": label, "hypothesis": hyp, "method": rep.method,
                    "statistic": rep.statistic, "critical_value": rep.critical_value,
                    "reject": int(rep.reject), "level": rep.level,
                })
                print(f"{label} {hyp} {rep.method}: stat={rep.statistic:.4g} "
                      f"crit={rep.critical_value:.4g} reject={rep.reject}")
        _write_table(out, "reports", REPORT_HEADER, reports, args.format)
        return 0

    records = []
    for name in names:
        s1, s2 = _test_factors(cfg, name)
        n = int(cfg.get("n", 200))
        tab = independence_experiment(
            s1, s2, n, int(cfg.get("reps", 5000)), level, seed,
            estimator=estimator, quantile_reps=quantile_reps, cfg=mle_cfg, threads=threads,
        )
        label = name or "explicit"
        se = tab.std_errors()
        for a in range(2):
            for b in range(2):
                records.append({
                    "scenario": label, "n": n,
                    "h1": "reject" if a else "no-reject", "h2": "reject" if b else "no-reject",
                    "count": int(tab.counts[a, b]), "proportion": tab.proportions[a, b],
                    "std_error": se[a, b], "independence": tab.independence[a, b],
                })
        print(f"{label}, n={n}, reps={tab.reps}, failures={tab.failures}")
        print("            H2 no-reject        H2 reject")
        for a, lab in enumerate(("H1 no-reject", "H1 reject")):
            cells = [f"{tab.proportions[a, b]:.3f} ({tab.independence[a, b]:.3f})" for b in range(2)]
            print(f"{lab:<12}{cells[0]:<20}{cells[1]}")
    _write_table(out, "contingency", TABLE_HEADER, records, args.format)
    return 0


# -- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base seed (overrides config)")
    common.add_argument(
        "--threads", type=int, default=None,
        help=f"worker threads (overrides ${THREADS_ENV} and config)",
    )
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="table file format")

    config = argparse.ArgumentParser(add_help=False)
    config.add_argument("--config", default=None, help="TOML config file")
    config.add_argument("--preset", default=None, help="shipped config by name")

    parser = argparse.ArgumentParser(prog="kroncov", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-risk", parents=[common, config], help="Monte Carlo risk tables")
    p.set_defaults(func=cmd_simulate_risk)

    p = sub.add_parser("estimate", parents=[common], help="fit a Kronecker covariance to a tensor file")
    p.add_argument("--input", required=True, help="tensor CSV or a directory of replicate files")
    p.add_argument("--dims", default=None, help="expected dims, e.g. 3x4 (checked against the header)")
    p.add_argument("--estimator", choices=("auto", "pt", "mle", "rpt"), default="auto")
    p.add_argument("--tol", type=float, default=1e-9, help="flip-flop stationarity tolerance")
    p.add_argument("--max-iter", type=int, default=500, help="flip-flop sweep cap")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("diagnose", parents=[common, config], help="variance ratios and cos-angle bounds")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("test", parents=[common, config], help="diagonal / compound-symmetry tests")
    p.set_defaults(func=cmd_test)

    sub.add_parser("presets", help="list shipped presets").set_defaults(
        func=lambda args: print("\n".join(preset_names())) or 0
    )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (DataError, SizeLimitError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KronCovError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
