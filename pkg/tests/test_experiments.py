"""Simulation-study harness: grids, replication, aggregation, file output."""

import dataclasses
import math

import numpy as np
import pytest
from scipy.stats import spearmanr

from ghive.experiments import (
    AGG_FIELDS,
    EXPERIMENT_NAMES,
    LONG_FIELDS,
    agg_lookup,
    aggregate_rows,
    experiment_spec,
    run_experiment,
    worker_count,
)


def test_experiment_catalog_grids():
    spec = experiment_spec("fig1-eta")
    assert tuple(c.eta for c in spec.grid) == (1.0, 2.0, 4.0, 6.0, 8.0)
    assert all(c.p == 4 and c.m_dim == 4 and c.n == 100 for c in spec.grid)
    assert spec.reps == 100
    spec = experiment_spec("fig2-n")
    assert tuple(c.n for c in spec.grid) == (100, 200, 300, 400)
    spec = experiment_spec("fig2-m")
    assert tuple(c.m_dim for c in spec.grid) == (4, 12, 20)
    spec = experiment_spec("fig1-bias")
    assert tuple(c.p for c in spec.grid) == (3, 6, 9, 12, 15)
    assert all(c.family == "gaussian" and c.m_dim == 3 == c.k for c in spec.grid)
    assert spec.estimators == ("fstar-oracle",)
    spec = experiment_spec("table1")
    assert spec.alpha == 0.05
    assert set(spec.estimators) == {"data-driven", "naive-mle"}
    assert tuple(c.n for c in spec.grid) == (70,)
    full = experiment_spec("table1", full_scale=True)
    assert tuple(c.n for c in full.grid) == (40, 70)
    with pytest.raises(ValueError):
        experiment_spec("fig9")
    assert set(EXPERIMENT_NAMES) == {
        "fig1-bias",
        "fig1-eta",
        "fig2-n",
        "fig2-m",
        "table1",
    }


def test_reps_override_shrinks_the_run():
    spec = experiment_spec("fig2-n", reps=3, seed=5)
    assert spec.reps == 3 and spec.seed == 5


def _tiny_spec():
    spec = experiment_spec("fig2-n", reps=2, seed=123)
    return dataclasses.replace(spec, grid=(spec.grid[0],))


def test_rerunning_an_experiment_writes_identical_files(tmp_path):
    d1, d2 = tmp_path / "a", tmp_path / "b"
    run_experiment(_tiny_spec(), out_dir=d1)
    run_experiment(_tiny_spec(), out_dir=d2)
    for name in ("fig2-n_long.csv", "fig2-n_agg.csv"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_long_rows_cover_every_estimator_and_rep():
    res = run_experiment(_tiny_spec())
    assert res.long_path is None and res.agg_path is None
    assert {r["estimator"] for r in res.long_rows} == {
        "oracle-p",
        "oracle-k",
        "data-driven",
        "naive-mle",
    }
    assert {r["rep"] for r in res.long_rows} == {0, 1}
    assert all(set(LONG_FIELDS) == set(r) for r in res.long_rows)
    assert all(set(AGG_FIELDS) == set(r) for r in res.agg_rows)


def test_aggregate_rows_hand_check():
    base = dict(
        experiment="x", grid_index=0, n=10, p=2, m_dim=2, k_true=1, eta=1.0,
        estimator="e", metric="m",
    )
    rows = [
        {**base, "rep": 0, "value": 1.0, "failed": 0},
        {**base, "rep": 1, "value": 3.0, "failed": 0},
        {**base, "rep": 2, "value": 99.0, "failed": 1},  # excluded
    ]
    (agg,) = aggregate_rows(rows)
    assert agg["mean"] == pytest.approx(2.0)
    assert agg["stderr"] == pytest.approx(np.std([1.0, 3.0], ddof=1) / np.sqrt(2))
    assert agg["n_used"] == 2
    all_failed = [{**base, "rep": 0, "value": 5.0, "failed": 1}]
    (empty,) = aggregate_rows(all_failed)
    assert math.isnan(empty["mean"]) and empty["n_used"] == 0


def test_reaggregating_the_long_rows_reproduces_the_aggregate(fig2_m_run):
    redone = aggregate_rows(fig2_m_run.long_rows)
    assert len(redone) == len(fig2_m_run.agg_rows)
    by_key = {
        (r["grid_index"], r["estimator"], r["metric"]): r for r in redone
    }
    for row in fig2_m_run.agg_rows:
        twin = by_key[(row["grid_index"], row["estimator"], row["metric"])]
        assert twin["mean"] == pytest.approx(row["mean"], nan_ok=True)
        assert twin["stderr"] == pytest.approx(row["stderr"], nan_ok=True)
        assert twin["n_used"] == row["n_used"]


def test_worker_count_env_parsing(monkeypatch):
    monkeypatch.delenv("GHIVE_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("GHIVE_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("GHIVE_THREADS", "zero")
    with pytest.warns(RuntimeWarning):
        assert worker_count() == 1


def test_coverage_rows_have_interval_structure():
    spec = experiment_spec("table1", reps=4, seed=15)
    res = run_experiment(spec)
    cov = [r for r in res.long_rows if r["metric"] == "covered"]
    assert cov and all(r["value"] in (0.0, 1.0) for r in cov)
    ses = {
        (r["estimator"], r["rep"]): r["value"]
        for r in res.long_rows
        if r["metric"] == "se"
    }
    lens = {
        (r["estimator"], r["rep"]): r["value"]
        for r in res.long_rows
        if r["metric"] == "ci_length"
    }
    assert ses, "expected per-replicate standard errors"
    for key, se in ses.items():
        assert se > 0
        assert lens[key] == pytest.approx(2 * 1.959963984540054 * se, rel=1e-9)


def test_estimator_ranking_under_growing_confounding(fig1_eta_run):
    # As the confounding strength rises, the baseline deteriorates in a
    # monotone way while the oracle-projected variants stay much flatter.
    etas = [c.eta for c in fig1_eta_run.spec.grid]
    naive = agg_lookup(fig1_eta_run, "naive-mle", "frob_err")
    naive_path = [naive[i] for i in range(len(etas))]
    rho = spearmanr(etas, naive_path).statistic
    assert rho > 0.8
    slope = np.polyfit(etas, naive_path, 1)[0]
    for estimator in ("oracle-p", "oracle-k"):
        other = agg_lookup(fig1_eta_run, estimator, "frob_err")
        other_slope = np.polyfit(etas, [other[i] for i in range(len(etas))], 1)[0]
        assert other_slope < slope
