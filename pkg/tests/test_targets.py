import math

import numpy as np
import pytest
from scipy import special as sp
from scipy import stats as sps

from conftest import finite_diff_grad
from rehmc.targets import (
    GaussianSpec,
    ReturnsSeries,
    TargetError,
    build_logistic_design,
    make_gaussian,
    make_log_gamma,
    make_logistic_model,
    make_sv_model,
)


def test_diagonal_gaussian_frozen_values():
    t = make_gaussian(GaussianSpec.diagonal([1.0, 4.0]))
    v, g = t.value_and_grad(np.array([2.0, 2.0]))
    assert v == -2.5
    assert np.array_equal(g, np.array([-2.0, -0.5]))


def test_gaussian_value_and_grad_consistent_with_parts():
    t = make_gaussian(GaussianSpec.diagonal([2.0, 0.5, 1.0]))
    theta = np.array([0.3, -1.2, 2.0])
    v, g = t.value_and_grad(theta)
    assert v == t.log_density(theta)
    assert np.array_equal(g, t.grad_log_density(theta))


@pytest.mark.parametrize(
    "spec",
    [
        GaussianSpec.iid_standard(3),
        GaussianSpec.diagonal([0.5, 2.0, 9.0]),
        GaussianSpec.dense(np.array([[2.0, 1.2], [1.2, 1.5]])),
    ],
)
def test_gaussian_gradient_matches_finite_differences(spec):
    t = make_gaussian(spec)
    rng = np.random.default_rng(0)
    for _ in range(5):
        theta = rng.normal(size=t.dim)
        g = t.grad_log_density(theta)
        fd = finite_diff_grad(t.log_density, theta)
        assert np.allclose(g, fd, atol=1e-5)


def test_dense_gaussian_requires_spd():
    with pytest.raises(TargetError):
        GaussianSpec.dense(np.array([[1.0, 2.0], [2.0, 1.0]]))  # eigenvalues -1, 3


def test_gaussian_truth_accessors():
    var = np.array([1.0, 4.0, 9.0])
    spec = GaussianSpec.diagonal(var)
    assert np.array_equal(spec.marginal_variances(), var)
    assert np.array_equal(spec.mean(), np.zeros(3))
    q = spec.marginal_quantile(0.975)
    # Phi^{-1}(0.975), frozen
    z = 1.959963984540054
    assert np.allclose(q, z * np.sqrt(var), rtol=0, atol=1e-12)
    eigvals, eigvecs = spec.eigenpairs()
    assert np.array_equal(eigvals, np.array([9.0, 4.0, 1.0]))
    # columns are unit vectors aligned with coordinates for a diagonal spec
    assert np.allclose(np.abs(eigvecs.T @ eigvecs), np.eye(3), atol=1e-12)


def test_gaussian_sampling_moments():
    spec = GaussianSpec.dense(np.array([[2.0, 1.0], [1.0, 2.0]]))
    draws = spec.sample(np.random.default_rng(42), 200_000)
    assert np.allclose(draws.mean(axis=0), 0.0, atol=0.02)
    assert np.allclose(np.cov(draws.T), spec.covariance_matrix(), atol=0.04)


def test_log_gamma_truth_and_gradient():
    shape, rate = 2.5, 1.5
    t, truth = make_log_gamma(shape, rate)
    assert truth["mean"] == pytest.approx(sp.digamma(shape) - math.log(rate))
    assert truth["variance"] == pytest.approx(sp.polygamma(1, shape))
    rng = np.random.default_rng(1)
    for _ in range(5):
        theta = rng.normal(size=1)
        assert np.allclose(
            t.grad_log_density(theta), finite_diff_grad(t.log_density, theta), atol=1e-5
        )


def test_log_gamma_density_matches_transformed_gamma():
    shape, rate = 3.0, 2.0
    t, _ = make_log_gamma(shape, rate)
    # unnormalized log density should differ from the exact transformed pdf
    # by a constant in theta
    thetas = np.linspace(-2, 2, 9)
    exact = sps.gamma.logpdf(np.exp(thetas), shape, scale=1.0 / rate) + thetas
    ours = np.array([t.log_density(np.array([x])) for x in thetas])
    diffs = exact - ours
    assert np.allclose(diffs, diffs[0], atol=1e-10)


def test_logistic_design_dimensions():
    rng = np.random.default_rng(0)
    raw = rng.normal(size=(50, 3))
    labels = (rng.random(50) < 0.5).astype(float)
    data = build_logistic_design(raw, labels)
    # 3 standardized + 3 pairwise interactions + intercept = 7 columns;
    # the model adds one scale parameter for dimension 8
    assert data.design.shape == (50, 7)
    assert make_logistic_model(data).dim == 8

    raw24 = rng.normal(size=(40, 24))
    labels24 = (rng.random(40) < 0.5).astype(float)
    data24 = build_logistic_design(raw24, labels24)
    # 24 + 276 interactions + intercept = 301 columns, model dim 302
    assert data24.design.shape[1] == 301
    assert make_logistic_model(data24).dim == 302


def test_logistic_design_standardization():
    rng = np.random.default_rng(3)
    raw = rng.normal(loc=5.0, scale=3.0, size=(200, 2))
    labels = (rng.random(200) < 0.5).astype(float)
    data = build_logistic_design(raw, labels)
    cols = data.design[:, :2]
    assert np.allclose(cols.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(cols.std(axis=0), 1.0, atol=1e-12)
    assert np.allclose(data.design[:, -1], 1.0)


def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    raw = rng.normal(size=(30, 2))
    eta = raw @ np.array([1.0, -1.0])
    labels = (rng.random(30) < 1 / (1 + np.exp(-eta))).astype(float)
    t = make_logistic_model(build_logistic_design(raw, labels))
    for _ in range(3):
        theta = rng.normal(scale=0.5, size=t.dim)
        assert np.allclose(
            t.grad_log_density(theta),
            finite_diff_grad(t.log_density, theta),
            atol=1e-4,
        )


def test_returns_series_from_closes():
    closes = np.array([100.0, 110.0, 99.0])
    s = ReturnsSeries.from_closes(closes)
    assert np.allclose(s.log_returns, np.diff(np.log(closes)))
    with pytest.raises(TargetError):
        ReturnsSeries.from_closes([1.0])
    with pytest.raises(TargetError):
        ReturnsSeries.from_closes([1.0, -2.0, 3.0])


def test_sv_model_dimension_and_gradient():
    rng = np.random.default_rng(11)
    closes = 100.0 * np.exp(np.cumsum(rng.normal(scale=0.01, size=20)))
    series = ReturnsSeries.from_closes(closes)
    t = make_sv_model(series)
    # one log-volatility per closing value: n returns -> n + 1 parameters
    assert t.dim == len(closes)
    theta = np.full(t.dim, -4.0) + 0.1 * rng.normal(size=t.dim)
    assert np.allclose(
        t.grad_log_density(theta), finite_diff_grad(t.log_density, theta), atol=1e-4
    )


def test_sv_model_finite_at_moderate_values():
    closes = np.array([100.0, 101.0, 99.5, 100.2])
    t = make_sv_model(ReturnsSeries.from_closes(closes))
    v, g = t.value_and_grad(np.zeros(t.dim))
    assert math.isfinite(v)
    assert np.all(np.isfinite(g))
