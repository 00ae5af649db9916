"""Per-response quasi-likelihood and naive-MLE fitting."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import gaussian_design, small_sim_dataset
from ghive import BERNOULLI, GAUSSIAN, POISSON
from ghive.data_io import Dataset
from ghive.errors import DataValidationError
from ghive.qml import (
    DEFAULT_RADIUS,
    fit_naive_mle,
    fit_qml_all,
    fit_qml_one,
    loglik_gradient,
    loglik_objective,
    make_split,
    quasi_gradient,
    quasi_objective,
    weighted_gram,
)


@given(n=st.integers(2, 300), seed=st.integers(0, 2**32 - 1))
def test_make_split_is_a_sorted_half_partition(n, seed):
    split = make_split(n, seed)
    d1, d2 = np.asarray(split.d1), np.asarray(split.d2)
    assert len(d1) == (n + 1) // 2
    assert len(d1) + len(d2) == n
    assert np.array_equal(d1, np.sort(d1))
    assert np.array_equal(d2, np.sort(d2))
    assert np.array_equal(np.sort(np.concatenate([d1, d2])), np.arange(n))
    again = make_split(n, seed)
    assert np.array_equal(again.d1, split.d1) and np.array_equal(again.d2, split.d2)


def test_gaussian_qml_and_naive_mle_equal_least_squares():
    x, y, _ = gaussian_design(n=80, p=5, m_dim=3, seed=2)
    ols = np.linalg.lstsq(x, y, rcond=None)[0].T
    naive = fit_naive_mle(Dataset(x, y), GAUSSIAN)
    assert np.allclose(naive.values, ols, atol=1e-10)
    for m in range(y.shape[1]):
        one = fit_qml_one(x, y[:, m], GAUSSIAN, starts=[np.zeros(x.shape[1])])
        assert np.allclose(one.f_hat, ols[m], atol=1e-10)
        assert one.converged


def test_objective_path_is_monotone_nondecreasing():
    data, _, _ = small_sim_dataset(n=60, seed=8, rep_seed=1)
    fit = fit_qml_one(data.x, data.y[:, 0], BERNOULLI, starts=[np.zeros(data.p)])
    path = np.asarray(fit.objective_path)
    assert len(path) >= 1
    assert np.all(np.diff(path) >= -1e-12)
    assert fit.q_value == pytest.approx(path[-1])


def _num_grad(f, coef, h=1e-6):
    g = np.zeros_like(coef)
    for j in range(coef.size):
        e = np.zeros_like(coef)
        e[j] = h
        g[j] = (f(coef + e) - f(coef - e)) / (2.0 * h)
    return g


@pytest.mark.parametrize("family", [GAUSSIAN, BERNOULLI, POISSON])
def test_gradients_match_finite_differences(family):
    rng = np.random.default_rng(17)
    n, p = 50, 4
    x = 0.5 * rng.standard_normal((n, p))
    eta = x @ rng.uniform(-0.5, 0.5, size=p)
    if family.kind == "bernoulli":
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    elif family.kind == "poisson":
        y = rng.poisson(np.exp(eta)).astype(float)
    else:
        y = eta + rng.standard_normal(n)
    coef = rng.uniform(-0.3, 0.3, size=p)
    for obj, grad in (
        (quasi_objective, quasi_gradient),
        (loglik_objective, loglik_gradient),
    ):
        ana = grad(x, y, family, coef)
        num = _num_grad(lambda c: obj(x, y, family, c), coef)
        assert np.allclose(ana, num, rtol=1e-5, atol=1e-7)


def test_separated_bernoulli_fit_stays_inside_the_ball():
    # Perfectly separated data: the unconstrained maximizer runs to
    # infinity, so the radius constraint must bind instead.
    rng = np.random.default_rng(3)
    x = rng.standard_normal((60, 2))
    y = (x[:, 0] > 0).astype(float)
    fit = fit_qml_one(x, y, BERNOULLI, starts=[np.zeros(2)])
    assert np.linalg.norm(fit.f_hat) <= DEFAULT_RADIUS * (1 + 1e-12)
    small = fit_qml_one(x, y, BERNOULLI, starts=[np.zeros(2)], radius=5.0)
    norm = np.linalg.norm(small.f_hat)
    assert norm <= 5.0 * (1 + 1e-12)
    assert norm >= 5.0 - 1e-6  # the boundary is genuinely attained


def test_fit_qml_all_averages_the_fold_fits():
    data, _, _ = small_sim_dataset(n=50, seed=4, rep_seed=2)
    split = make_split(data.n, seed=21)
    fit1, fit2, avg = fit_qml_all(data, BERNOULLI, split)
    assert np.allclose(avg.values, 0.5 * (fit1.values + fit2.values), atol=1e-15)
    assert np.array_equal(avg.converged, fit1.converged & fit2.converged)
    assert np.allclose(avg.grad_norm, np.maximum(fit1.grad_norm, fit2.grad_norm))


def test_fold_smaller_than_covariate_count_is_rejected():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 4))
    y = (rng.random((5, 2)) < 0.5).astype(float)
    split = make_split(5, seed=1)
    with pytest.raises(DataValidationError):
        fit_qml_all(Dataset(x, y), BERNOULLI, split)


def test_poisson_naive_mle_recovers_coefficients():
    rng = np.random.default_rng(12)
    n, p = 4000, 3
    x = 0.6 * rng.standard_normal((n, p))
    coef = np.array([[0.5, -0.3, 0.2], [0.1, 0.4, -0.2]])
    y = rng.poisson(np.exp(x @ coef.T)).astype(float)
    fit = fit_naive_mle(Dataset(x, y), POISSON)
    assert np.all(fit.converged)
    assert np.allclose(fit.values, coef, atol=0.1)


def test_weighted_gram_matches_dense_product():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((12, 3))
    w = rng.uniform(0.1, 2.0, size=12)
    assert np.allclose(weighted_gram(x, w), x.T @ np.diag(w) @ x, atol=1e-12)


def test_multi_start_returns_the_better_optimum():
    # With a warm start at the solution and a cold start at zero, the
    # result must be at least as good as either single-start run.
    x, y, _ = gaussian_design(n=40, p=3, m_dim=1, seed=9)
    ols = np.linalg.lstsq(x, y[:, 0], rcond=None)[0]
    both = fit_qml_one(x, y[:, 0], GAUSSIAN, starts=[np.zeros(3), ols])
    cold = fit_qml_one(x, y[:, 0], GAUSSIAN, starts=[np.zeros(3)])
    assert both.q_value >= cold.q_value - 1e-12
    assert np.allclose(both.f_hat, ols, atol=1e-8)
