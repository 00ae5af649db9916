"""Command-line interface.

Subcommands:

* ``ghive fit``          fit the pipeline to CSV data, write a fit JSON
* ``ghive infer``        confidence interval for a contrast of a saved fit
* ``ghive simulate``     draw synthetic replicates and score estimators
* ``ghive fstar-oracle`` Monte-Carlo pseudo-true coefficient matrix
* ``ghive reproduce``    run one of the named simulation-study experiments

Exit codes: 0 success, 1 numerical failure, 2 usage or validation error.
Set GHIVE_THREADS to parallelise experiment replications.
"""

from __future__ import annotations

import argparse
import os
import re
import sys

import numpy as np

from . import experiments as experiments_mod
from .data_io import (
    load_dataset,
    load_matrix_csv,
    read_json,
    write_csv_rows,
    write_json_atomic,
)
from .errors import DataValidationError, GhiveError, NumericalError
from .families import family_from_name
from .inference import Contrast, confidence_interval, serialize_inference
from .pipeline import Mode, deserialize_fit, ghive_fit, serialize_fit
from .qml import DEFAULT_MAX_ITER, DEFAULT_TOL, fit_naive_mle
from .simulate import SimConfig, fstar_oracle, make_truth, metrics, sample_dataset

DEFAULT_SEED = 0  # used by `fit` when --seed is not given


def _add_sim_config_flags(sub):
    sub.add_argument("--config", help="simulation config JSON file")
    sub.add_argument("--family", choices=("gaussian", "bernoulli", "poisson"))
    sub.add_argument("--n", type=int, help="sample size per replicate")
    sub.add_argument("--p", type=int, help="number of covariates")
    sub.add_argument("--m", type=int, help="number of responses")
    sub.add_argument("--k-true", type=int, help="true factor count")
    sub.add_argument("--eta", type=float, help="confounding strength")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument(
        "--sigma-z-decay",
        choices=("negative", "positive"),
        default="negative",
        help="circulant covariance convention (default: negative)",
    )


def _sim_config_from_args(args, reps: int = 1) -> SimConfig:
    if args.config:
        doc = read_json(args.config)
        if not isinstance(doc, dict):
            raise DataValidationError(f"{args.config}: expected a JSON object")
        doc.setdefault("reps", reps)
        return SimConfig.from_json_dict(doc)
    missing = [
        flag
        for flag, val in (
            ("--family", args.family),
            ("--n", args.n),
            ("--p", args.p),
            ("--m", args.m),
            ("--k-true", args.k_true),
            ("--eta", args.eta),
        )
        if val is None
    ]
    if missing:
        raise DataValidationError(
            f"missing {' '.join(missing)} (or pass --config FILE)"
        )
    return SimConfig(
        n=args.n,
        p=args.p,
        m_dim=args.m,
        k=args.k_true,
        eta=args.eta,
        family=args.family,
        seed=args.seed,
        reps=reps,
        sigma_z_decay=args.sigma_z_decay,
    )


def _parse_direction(spec: str, dim: int, name: str) -> np.ndarray:
    """Parse a direction vector: ``e<i>`` shorthand (1-based) or a CSV path."""
    match = re.fullmatch(r"e(\d+)", spec.strip())
    if match:
        idx = int(match.group(1))
        if not 1 <= idx <= dim:
            raise DataValidationError(
                f"{name}={spec}: index must be between 1 and {dim}"
            )
        vec = np.zeros(dim)
        vec[idx - 1] = 1.0
        return vec
    vec = load_matrix_csv(spec).ravel()
    if vec.shape[0] != dim:
        raise DataValidationError(
            f"{name} vector from {spec} has length {vec.shape[0]}, expected {dim}"
        )
    return vec


def _resolve_mode(args, m_dim: int) -> Mode:
    if args.projector:
        projector = load_matrix_csv(args.projector)
        if projector.shape != (m_dim, m_dim):
            raise DataValidationError(
                f"projector from {args.projector} is {projector.shape[0]}x"
                f"{projector.shape[1]}, expected {m_dim}x{m_dim}"
            )
        return Mode.oracle_p(projector)
    k = args.k.strip().lower()
    if k == "auto":
        return Mode.data_driven()
    try:
        k_int = int(k)
    except ValueError:
        raise DataValidationError(
            f"--k must be 'auto' or a positive integer, got {args.k!r}"
        ) from None
    if k_int == 0:
        raise DataValidationError(
            "--k 0 removes no factors; pass --projector FILE to supply "
            "an explicit projector instead"
        )
    if k_int < 0:
        raise DataValidationError(f"--k must be positive, got {k_int}")
    return Mode.oracle_k(k_int)


def cmd_fit(args) -> int:
    family = family_from_name(args.family)
    data = load_dataset(args.x, args.y, family, center=args.center)
    mode = _resolve_mode(args, data.m_dim)
    fit = ghive_fit(
        data, family, seed=args.seed, mode=mode, tol=args.tol, max_iter=args.max_iter
    )
    doc = serialize_fit(fit)
    doc["center"] = bool(args.center)
    write_json_atomic(args.out, doc)
    n_conv = int(np.sum([d["converged"] for d in fit.diagnostics]))
    print(
        f"wrote {args.out} (k_hat={fit.spectral.k_hat}, "
        f"{n_conv}/{len(fit.diagnostics)} fold fits converged)"
    )
    return 0


def cmd_infer(args) -> int:
    doc = read_json(args.fit)
    fit = deserialize_fit(doc)
    data = load_dataset(args.x, args.y, fit.family, center=doc.get("center", False))
    if data.p != fit.p or data.m_dim != fit.m_dim:
        raise DataValidationError(
            f"data is (p={data.p}, M={data.m_dim}) but the fit from {args.fit} "
            f"was built for (p={fit.p}, M={fit.m_dim})"
        )
    contrast = Contrast(
        _parse_direction(args.u, fit.m_dim, "--u"),
        _parse_direction(args.v, fit.p, "--v"),
    )
    result = confidence_interval(data, fit.family, fit, contrast, alpha=args.alpha)
    write_json_atomic(args.out, serialize_inference(result, contrast))
    print(
        f"wrote {args.out} (estimate={result.estimate:.6g}, "
        f"ci=[{result.ci_lo:.6g}, {result.ci_hi:.6g}])"
    )
    return 0


def cmd_simulate(args) -> int:
    cfg = _sim_config_from_args(args, reps=args.reps)
    family = family_from_name(cfg.family)
    truth = make_truth(cfg)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for rep in range(cfg.reps):
        rep_seed = cfg.seed ^ rep
        data = sample_dataset(truth, cfg, rep_seed=rep_seed)
        fit = ghive_fit(data, family, seed=rep_seed)
        naive = fit_naive_mle(data, family)
        for estimator, met in (
            ("data-driven", metrics(fit.theta_hat, truth, p_perp_hat=fit.spectral.p_perp)),
            ("naive-mle", metrics(naive.values, truth)),
        ):
            for metric, value in met.as_rows().items():
                rows.append(
                    {"rep": rep, "estimator": estimator, "metric": metric, "value": value}
                )
        rows.append(
            {
                "rep": rep,
                "estimator": "data-driven",
                "metric": "k_hat",
                "value": float(fit.spectral.k_hat),
            }
        )
    metrics_path = os.path.join(args.out, "simulate_metrics.csv")
    write_csv_rows(metrics_path, ("rep", "estimator", "metric", "value"), rows)
    write_json_atomic(os.path.join(args.out, "simulate_config.json"), cfg.to_json_dict())
    print(f"wrote {metrics_path} ({cfg.reps} replicates)")
    return 0


def cmd_fstar_oracle(args) -> int:
    cfg = _sim_config_from_args(args)
    truth = make_truth(cfg)
    oracle = fstar_oracle(truth, cfg, n_mc=args.n_mc)
    met = metrics(None, truth, f_star=oracle)
    doc = {
        "config": cfg.to_json_dict(),
        "n_mc": args.n_mc,
        "f_star": {
            "dims": list(oracle.values.shape),
            "data": [[float(v) for v in row] for row in oracle.values],
        },
        "bias1": met.bias1,
        "bias2": met.bias2,
        "converged_fraction": float(np.mean(oracle.converged)),
    }
    write_json_atomic(args.out, doc)
    print(f"wrote {args.out} (bias1={met.bias1:.6g}, bias2={met.bias2:.6g})")
    return 0


def cmd_reproduce(args) -> int:
    spec = experiments_mod.experiment_spec(
        args.experiment, reps=args.reps, seed=args.seed, full_scale=args.full_scale
    )
    result = experiments_mod.run_experiment(spec, out_dir=args.out)
    print(f"wrote {result.long_path}")
    print(f"wrote {result.agg_path}")
    for row in result.agg_rows:
        if row["metric"] in ("frob_err", "bias1", "bias2", "covered"):
            print(
                f"  {row['estimator']:<13s} {row['metric']:<10s} "
                f"n={row['n']} p={row['p']} M={row['m_dim']} eta={row['eta']}: "
                f"{row['mean']:.4g}"
            )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ghive",
        description="Multivariate-response GLM estimation under hidden confounding.",
        epilog="Set GHIVE_THREADS=N to parallelise experiment replications.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit the pipeline to CSV data")
    fit.add_argument("--x", required=True, help="covariate CSV (n x p)")
    fit.add_argument("--y", required=True, help="response CSV (n x M)")
    fit.add_argument(
        "--family", required=True, choices=("gaussian", "bernoulli", "poisson")
    )
    fit.add_argument(
        "--k",
        default="auto",
        help="factor count: 'auto' (eigenvalue-ratio selection) or a positive integer",
    )
    fit.add_argument("--projector", help="CSV of an M x M complement projector")
    fit.add_argument("--seed", type=int, default=DEFAULT_SEED, help="split seed")
    fit.add_argument(
        "--center", action="store_true", help="standardise x columns before fitting"
    )
    fit.add_argument("--tol", type=float, default=DEFAULT_TOL)
    fit.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    fit.add_argument("--out", required=True, help="output fit JSON path")
    fit.set_defaults(func=cmd_fit)

    infer = sub.add_parser("infer", help="confidence interval from a saved fit")
    infer.add_argument("--fit", required=True, help="fit JSON from `ghive fit`")
    infer.add_argument("--x", required=True)
    infer.add_argument("--y", required=True)
    infer.add_argument(
        "--u", required=True, help="response direction: e<i> or a CSV vector file"
    )
    infer.add_argument(
        "--v", required=True, help="covariate direction: e<i> or a CSV vector file"
    )
    infer.add_argument("--alpha", type=float, default=0.05)
    infer.add_argument("--out", required=True, help="output JSON path")
    infer.set_defaults(func=cmd_infer)

    sim = sub.add_parser("simulate", help="score estimators on synthetic replicates")
    _add_sim_config_flags(sim)
    sim.add_argument("--reps", type=int, default=1)
    sim.add_argument("--out", required=True, help="output directory")
    sim.set_defaults(func=cmd_simulate)

    oracle = sub.add_parser(
        "fstar-oracle", help="Monte-Carlo pseudo-true coefficients for a config"
    )
    _add_sim_config_flags(oracle)
    oracle.add_argument("--n-mc", type=int, default=50_000)
    oracle.add_argument("--out", required=True, help="output JSON path")
    oracle.set_defaults(func=cmd_fstar_oracle)

    rep = sub.add_parser("reproduce", help="run a named simulation-study experiment")
    rep.add_argument("experiment", choices=experiments_mod.EXPERIMENT_NAMES)
    rep.add_argument("--reps", type=int, default=None)
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--out", required=True, help="output directory")
    rep.add_argument(
        "--full-scale",
        action="store_true",
        help="use the original protocol sizes instead of desk-scale defaults",
    )
    rep.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if code is not None else 0
    try:
        return int(args.func(args) or 0)
    except DataValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GhiveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
