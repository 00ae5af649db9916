"""Simulation-study harness: named experiments, grids, and CSV output.

Five named experiments cover the study: two approximation-bias sweeps
("fig1-bias" over p, "fig1-eta" over confounding strength), two estimation
error sweeps ("fig2-n" over sample size, "fig2-m" over response count), and
the coverage experiment ("table1"). Default grids and replication counts are
desk scale; ``full_scale=True`` restores the original protocol sizes.

Seed discipline: the experiment seed is mixed (splitmix-style) with the grid
index to give each grid point its own stream family. Error experiments
redraw the ground truth every replication; the coverage experiment fixes the
truth per grid point (one pseudo-true target) and derives replication seeds
as grid_seed XOR rep, so the whole run is reproducible byte for byte.

Replications are independent tasks. They run serially unless the
GHIVE_THREADS environment variable asks for a process pool; output ordering
is canonicalised either way.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data_io import write_csv_rows
from .errors import GhiveError
from .families import family_from_name
from .inference import basis_contrast, confidence_interval, naive_wald_interval
from .pipeline import Mode, ghive_fit, with_projection
from .qml import fit_naive_mle
from .simulate import SimConfig, fstar_oracle, make_truth, metrics, sample_dataset

ESTIMATOR_DATA_DRIVEN = "data-driven"
ESTIMATOR_ORACLE_K = "oracle-k"
ESTIMATOR_ORACLE_P = "oracle-p"
ESTIMATOR_NAIVE = "naive-mle"
ESTIMATOR_FSTAR = "fstar-oracle"

GHIVE_ESTIMATORS = (ESTIMATOR_ORACLE_P, ESTIMATOR_ORACLE_K, ESTIMATOR_DATA_DRIVEN)
ERROR_ESTIMATORS = GHIVE_ESTIMATORS + (ESTIMATOR_NAIVE,)

EXPERIMENT_NAMES = ("fig1-bias", "fig1-eta", "fig2-n", "fig2-m", "table1")

LONG_FIELDS = (
    "experiment",
    "grid_index",
    "n",
    "p",
    "m_dim",
    "k_true",
    "eta",
    "estimator",
    "rep",
    "metric",
    "value",
    "failed",
)
AGG_FIELDS = (
    "experiment",
    "grid_index",
    "n",
    "p",
    "m_dim",
    "k_true",
    "eta",
    "estimator",
    "metric",
    "mean",
    "stderr",
    "n_used",
)

_MASK64 = (1 << 64) - 1


def _mix(seed: int, index: int) -> int:
    """Splitmix64 finalizer over seed advanced by a golden-ratio stride."""
    x = (seed + (index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def worker_count() -> int:
    """Size of the replication work pool, from GHIVE_THREADS (default 1)."""
    raw = os.environ.get("GHIVE_THREADS", "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        warnings.warn(
            f"ignoring non-integer GHIVE_THREADS={raw!r}; running serially",
            RuntimeWarning,
        )
        return 1
    return max(1, value)


@dataclass(frozen=True)
class ExperimentSpec:
    """One named experiment: a grid of generator configs plus run settings."""

    name: str
    grid: tuple
    estimators: tuple
    reps: int
    seed: int
    n_mc: int = 50_000
    alpha: float = 0.05


def experiment_spec(
    name: str, reps: int | None = None, seed: int = 0, full_scale: bool = False
) -> ExperimentSpec:
    """Build the canonical spec for a named experiment.

    ``reps=None`` takes the experiment's default replication count
    (desk scale unless ``full_scale``).
    """
    if name == "fig1-bias":
        ps = tuple(range(3, 16)) if full_scale else (3, 6, 9, 12, 15)
        # Identity link: the approximation error of the pseudo-true coefficient
        # has a closed form there, and its decay in p is clean.  Under the
        # logit link the attenuation of the population coefficients grows with
        # p fast enough to mask the decay on a grid this short.
        grid = tuple(
            SimConfig(n=100, p=p, m_dim=3, k=3, eta=10.0, seed=seed, family="gaussian")
            for p in ps
        )
        return ExperimentSpec(
            name=name,
            grid=grid,
            estimators=(ESTIMATOR_FSTAR,),
            reps=reps or (20 if full_scale else 5),
            seed=seed,
            n_mc=200_000 if full_scale else 50_000,
        )
    if name == "fig1-eta":
        etas = tuple(range(1, 9)) if full_scale else (1, 2, 4, 6, 8)
        grid = tuple(
            SimConfig(n=100, p=4, m_dim=4, k=3, eta=float(e), seed=seed) for e in etas
        )
        return ExperimentSpec(
            name=name,
            grid=grid,
            estimators=ERROR_ESTIMATORS,
            reps=reps or (500 if full_scale else 100),
            seed=seed,
        )
    if name == "fig2-n":
        ns = tuple(range(100, 401, 50)) if full_scale else (100, 200, 300, 400)
        grid = tuple(
            SimConfig(n=n, p=4, m_dim=4, k=3, eta=4.0, seed=seed) for n in ns
        )
        return ExperimentSpec(
            name=name,
            grid=grid,
            estimators=ERROR_ESTIMATORS,
            reps=reps or (200 if full_scale else 50),
            seed=seed,
        )
    if name == "fig2-m":
        ms = (4, 8, 12, 16, 20) if full_scale else (4, 12, 20)
        grid = tuple(
            SimConfig(n=200, p=4, m_dim=m, k=3, eta=4.0, seed=seed) for m in ms
        )
        return ExperimentSpec(
            name=name,
            grid=grid,
            estimators=ERROR_ESTIMATORS,
            reps=reps or (100 if full_scale else 30),
            seed=seed,
        )
    if name == "table1":
        ns = (40, 70) if full_scale else (70,)
        grid = tuple(
            SimConfig(n=n, p=4, m_dim=4, k=3, eta=4.0, seed=seed) for n in ns
        )
        return ExperimentSpec(
            name=name,
            grid=grid,
            estimators=(ESTIMATOR_DATA_DRIVEN, ESTIMATOR_NAIVE),
            reps=reps or 100,
            seed=seed,
            n_mc=100_000,
            alpha=0.05,
        )
    raise ValueError(f"unknown experiment {name!r}; expected one of {EXPERIMENT_NAMES}")


# ---------------------------------------------------------------------------
# per-replication workers


def _base_row(spec, gi, cfg, estimator, rep) -> dict:
    return {
        "experiment": spec.name,
        "grid_index": gi,
        "n": cfg.n,
        "p": cfg.p,
        "m_dim": cfg.m_dim,
        "k_true": cfg.k,
        "eta": float(cfg.eta),
        "estimator": estimator,
        "rep": rep,
        "metric": "",
        "value": float("nan"),
        "failed": 0,
    }


def _metric_rows(base: dict, values: dict) -> list:
    rows = []
    for metric, value in values.items():
        row = dict(base)
        row["metric"] = metric
        row["value"] = float(value)
        rows.append(row)
    return rows


def _failed_rows(base: dict, metric_names) -> list:
    rows = []
    for metric in metric_names:
        row = dict(base)
        row["metric"] = metric
        row["value"] = float("nan")
        row["failed"] = 1
        rows.append(row)
    return rows


def _bias_rep(spec: ExperimentSpec, gi: int, rep: int) -> list:
    cfg = spec.grid[gi]
    truth_seed = _mix(_mix(spec.seed, gi), rep)
    cfg_r = replace(cfg, seed=truth_seed)
    base = _base_row(spec, gi, cfg, ESTIMATOR_FSTAR, rep)
    try:
        truth = make_truth(cfg_r)
        oracle = fstar_oracle(truth, cfg_r, n_mc=spec.n_mc)
        met = metrics(None, truth, f_star=oracle)
        values = {
            "bias1": met.bias1,
            "bias2": met.bias2,
            "oracle_converged_frac": float(np.mean(oracle.converged)),
        }
        return _metric_rows(base, values)
    except (GhiveError, np.linalg.LinAlgError):
        return _failed_rows(base, ("bias1", "bias2", "oracle_converged_frac"))


def _error_rep(spec: ExperimentSpec, gi: int, rep: int) -> list:
    cfg = spec.grid[gi]
    truth_seed = _mix(_mix(spec.seed, gi), rep)
    cfg_r = replace(cfg, seed=truth_seed)
    family = family_from_name(cfg.family)
    rows = []
    try:
        truth = make_truth(cfg_r)
        data = sample_dataset(truth, cfg_r, rep_seed=truth_seed)
    except (GhiveError, np.linalg.LinAlgError):
        for est in spec.estimators:
            rows.extend(_failed_rows(_base_row(spec, gi, cfg, est, rep), ("frob_err",)))
        return rows

    wants_ghive = any(e in GHIVE_ESTIMATORS for e in spec.estimators)
    fit_dd = None
    if wants_ghive:
        try:
            fit_dd = ghive_fit(data, family, seed=truth_seed)
        except (GhiveError, np.linalg.LinAlgError):
            fit_dd = None

    for est in spec.estimators:
        base = _base_row(spec, gi, cfg, est, rep)
        try:
            if est == ESTIMATOR_NAIVE:
                theta_hat = fit_naive_mle(data, family).values
                extra = {}
            else:
                if fit_dd is None:
                    raise GhiveError("pipeline fit failed")
                if est == ESTIMATOR_DATA_DRIVEN:
                    fit = fit_dd
                    extra = {"k_hat": float(fit.spectral.k_hat)}
                elif est == ESTIMATOR_ORACLE_K:
                    fit = with_projection(fit_dd, Mode.oracle_k(cfg.k))
                    extra = {}
                else:
                    fit = with_projection(fit_dd, Mode.oracle_p(truth.p_b_perp))
                    extra = {}
                theta_hat = fit.theta_hat
            met = metrics(theta_hat, truth)
            values = {"frob_err": met.frob_err}
            values.update(extra)
            rows.extend(_metric_rows(base, values))
        except (GhiveError, np.linalg.LinAlgError):
            rows.extend(_failed_rows(base, ("frob_err",)))
    return rows


_COVERAGE_METRICS = ("covered", "covered_theta", "se", "ci_length", "estimate")


def _coverage_rep(
    spec: ExperimentSpec,
    gi: int,
    rep: int,
    truth,
    target_fstar: float,
    target_theta: float,
) -> list:
    cfg = spec.grid[gi]
    grid_seed = _mix(spec.seed, gi)
    rep_seed = grid_seed ^ rep
    family = family_from_name(cfg.family)
    rows = []
    try:
        data = sample_dataset(truth, cfg, rep_seed=rep_seed)
    except (GhiveError, np.linalg.LinAlgError):
        for est in spec.estimators:
            rows.extend(
                _failed_rows(_base_row(spec, gi, cfg, est, rep), _COVERAGE_METRICS)
            )
        return rows

    contrast = basis_contrast(0, 0, cfg.m_dim, cfg.p)
    for est in spec.estimators:
        base = _base_row(spec, gi, cfg, est, rep)
        try:
            if est == ESTIMATOR_NAIVE:
                coef = fit_naive_mle(data, family)
                res = naive_wald_interval(data, family, coef, contrast, spec.alpha)
                extra = {}
            else:
                fit = ghive_fit(data, family, seed=rep_seed)
                res = confidence_interval(data, family, fit, contrast, spec.alpha)
                extra = {"rms_h": float(np.sqrt(res.s_sq / data.n))}
            values = {
                "covered": float(res.ci_lo <= target_fstar <= res.ci_hi),
                "covered_theta": float(res.ci_lo <= target_theta <= res.ci_hi),
                "se": res.se,
                "ci_length": res.ci_hi - res.ci_lo,
                "estimate": res.estimate,
            }
            values.update(extra)
            rows.extend(_metric_rows(base, values))
        except (GhiveError, np.linalg.LinAlgError):
            rows.extend(_failed_rows(base, _COVERAGE_METRICS))
    return rows


def _run_task(task) -> list:
    kind = task[0]
    if kind == "bias":
        return _bias_rep(*task[1:])
    if kind == "error":
        return _error_rep(*task[1:])
    return _coverage_rep(*task[1:])


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    long_rows: list
    agg_rows: list
    long_path: str | None = None
    agg_path: str | None = None


def _row_key(row):
    return (row["grid_index"], row["estimator"], row["rep"], row["metric"])


def aggregate_rows(long_rows) -> list:
    """Group long rows and average the non-failed values.

    Means are plain arithmetic means; stderr is the sample standard
    deviation over replications divided by sqrt(count).
    """
    groups = {}
    meta = {}
    for row in long_rows:
        key = (row["grid_index"], row["estimator"], row["metric"])
        meta.setdefault(
            key,
            {
                "experiment": row["experiment"],
                "n": row["n"],
                "p": row["p"],
                "m_dim": row["m_dim"],
                "k_true": row["k_true"],
                "eta": row["eta"],
            },
        )
        if not row["failed"]:
            groups.setdefault(key, []).append(float(row["value"]))
    out = []
    for key in sorted(meta, key=lambda k: (k[0], k[1], k[2])):
        values = groups.get(key, [])
        gi, estimator, metric = key
        info = meta[key]
        if values:
            arr = np.asarray(values)
            mean = float(arr.mean())
            stderr = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else float("nan")
        else:
            mean, stderr = float("nan"), float("nan")
        out.append(
            {
                "experiment": info["experiment"],
                "grid_index": gi,
                "n": info["n"],
                "p": info["p"],
                "m_dim": info["m_dim"],
                "k_true": info["k_true"],
                "eta": info["eta"],
                "estimator": estimator,
                "metric": metric,
                "mean": mean,
                "stderr": stderr,
                "n_used": len(values),
            }
        )
    return out


def _map_tasks(tasks) -> list:
    workers = worker_count()
    if workers == 1 or len(tasks) < 2:
        results = [_run_task(t) for t in tasks]
    else:
        chunk = max(1, len(tasks) // (workers * 4))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=chunk))
    rows = []
    for chunk_rows in results:
        rows.extend(chunk_rows)
    return rows


def run_experiment(spec: ExperimentSpec, out_dir=None) -> ExperimentResult:
    """Run all grid points and replications; optionally write the two CSVs."""
    tasks = []
    if spec.name == "fig1-bias":
        for gi in range(len(spec.grid)):
            for rep in range(spec.reps):
                tasks.append(("bias", spec, gi, rep))
    elif spec.name == "table1":
        for gi, cfg in enumerate(spec.grid):
            grid_seed = _mix(spec.seed, gi)
            cfg_g = replace(cfg, seed=grid_seed)
            truth = make_truth(cfg_g)
            oracle = fstar_oracle(truth, cfg_g, n_mc=spec.n_mc)
            target_fstar = float((truth.p_b_perp @ oracle.values)[0, 0])
            target_theta = float(truth.theta[0, 0])
            for rep in range(spec.reps):
                tasks.append(
                    ("coverage", spec, gi, rep, truth, target_fstar, target_theta)
                )
    else:
        for gi in range(len(spec.grid)):
            for rep in range(spec.reps):
                tasks.append(("error", spec, gi, rep))

    long_rows = sorted(_map_tasks(tasks), key=_row_key)
    agg_rows = aggregate_rows(long_rows)

    long_path = agg_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        long_path = os.path.join(out_dir, f"{spec.name}_long.csv")
        agg_path = os.path.join(out_dir, f"{spec.name}_agg.csv")
        write_csv_rows(long_path, LONG_FIELDS, long_rows)
        write_csv_rows(agg_path, AGG_FIELDS, agg_rows)
    return ExperimentResult(spec, long_rows, agg_rows, long_path, agg_path)


def agg_lookup(result: ExperimentResult, estimator: str, metric: str) -> dict:
    """Helper: map grid_index -> aggregated mean for one estimator/metric."""
    out = {}
    for row in result.agg_rows:
        if row["estimator"] == estimator and row["metric"] == metric:
            out[row["grid_index"]] = row["mean"]
    return out
