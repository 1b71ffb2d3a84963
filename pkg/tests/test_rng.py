import math

import numpy as np
import pytest
from scipy import stats

from crossnet.rng import (RngStream, SamplingError, polya_gamma_mean, sample_categorical,
                          sample_categorical_log, sample_categorical_log_rows, sample_dirichlet,
                          sample_gamma, sample_gaussian, sample_gaussian_precision, sample_polya_gamma)

N = 100_000


def within(sample, target, k=4.0):
    sample = np.asarray(sample, dtype=float)
    se = sample.std(ddof=1) / math.sqrt(sample.size)
    return abs(sample.mean() - target) <= k * se


def var_within(sample, target, k=4.0):
    """Variance check with the delta-method standard error of the sample variance."""
    x = np.asarray(sample, dtype=float)
    d = (x - x.mean()) ** 2
    return within(d * x.size / (x.size - 1), target, k)


def test_streams_are_reproducible_and_distinct():
    a = RngStream(7, 3).generator().random(5)
    b = RngStream(7, 3).generator().random(5)
    c = RngStream(7, 4).generator().random(5)
    d = RngStream(7, (3, 1)).generator().random(5)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)


def test_pg_reproducible():
    x = sample_polya_gamma(2, np.linspace(-3, 3, 50), RngStream(1, 9))
    y = sample_polya_gamma(2, np.linspace(-3, 3, 50), RngStream(1, 9))
    assert np.array_equal(x, y)


@pytest.mark.parametrize("b,c,target", [(1, 0.0, 0.25), (2, 1.0, math.tanh(0.5))])
def test_pg_mean_examples(b, c, target):
    x = sample_polya_gamma(b, np.full(N, c), np.random.default_rng(11))
    assert within(x, target)
    assert float(polya_gamma_mean(b, c)) == pytest.approx(target)


def test_pg_symmetric_in_c():
    rng = np.random.default_rng(5)
    x = sample_polya_gamma(3, np.full(20_000, 1.7), rng)
    y = sample_polya_gamma(3, np.full(20_000, -1.7), rng)
    assert stats.ks_2samp(x, y).pvalue > 0.01


def test_pg_rejects_bad_shape():
    with pytest.raises(SamplingError):
        sample_polya_gamma(0, 1.0, np.random.default_rng(0))
    with pytest.raises(SamplingError):
        sample_polya_gamma(1.5, 1.0, np.random.default_rng(0))
    with pytest.raises(SamplingError):
        sample_polya_gamma(1, np.nan, np.random.default_rng(0))


def test_pg_scalar_returns_float():
    assert isinstance(sample_polya_gamma(1, 0.3, np.random.default_rng(0)), float)


@pytest.mark.parametrize("alpha,mean", [((1.0, 1.0), (0.5, 0.5)), ((2.0, 1.0, 1.0), (0.5, 0.25, 0.25))])
def test_dirichlet_mean(alpha, mean):
    x = sample_dirichlet(np.tile(alpha, (N, 1)), np.random.default_rng(3))
    assert np.allclose(x.sum(axis=1), 1.0, atol=1e-12) and np.all(x >= 0)
    for j, m in enumerate(mean):
        assert within(x[:, j], m)


def test_dirichlet_tiny_shapes_stay_positive():
    x = sample_dirichlet(np.full((2000, 15), 1 / 15), np.random.default_rng(0))
    assert np.all(x > 0) and np.allclose(x.sum(axis=1), 1.0, atol=1e-12)


def test_dirichlet_variance():
    a = np.array([2.0, 1.0, 1.0])
    x = sample_dirichlet(np.tile(a, (N, 1)), np.random.default_rng(4))
    a0 = a.sum()
    assert var_within(x[:, 0], a[0] * (a0 - a[0]) / (a0 ** 2 * (a0 + 1)))


def test_dirichlet_rejects_nonpositive():
    with pytest.raises(SamplingError):
        sample_dirichlet([1.0, 0.0], np.random.default_rng(0))


def test_categorical_examples():
    rng = np.random.default_rng(8)
    assert all(sample_categorical([0, 1, 0], rng) == 1 for _ in range(200))
    draws = np.array([sample_categorical([1, 1], rng) for _ in range(20_000)])
    assert within(draws, 0.5)
    draws = sample_categorical_log_rows(np.tile([0.0, math.log(3)], (N, 1)), rng)
    assert within(draws, 0.75)
    assert sample_categorical_log([-1e4, 0.0, -1e4], rng) == 1


def test_categorical_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(SamplingError):
        sample_categorical([0, 0], rng)
    with pytest.raises(SamplingError):
        sample_categorical([np.nan, 1], rng)
    with pytest.raises(SamplingError):
        sample_categorical_log([-np.inf, -np.inf], rng)


def test_categorical_log_handles_underflow():
    # weights like exp(-800) and exp(-801) underflow in linear space
    draws = sample_categorical_log_rows(np.tile([-800.0, -801.0], (N, 1)), np.random.default_rng(1))
    assert within(draws, 1 / (1 + math.e))


@pytest.mark.parametrize("shape,rate,mean,var", [(2.5, 1.0, 2.5, 2.5), (1.0, 1.0, 1.0, 1.0), (3.5, 2.0, 1.75, 0.875)])
def test_gamma_moments(shape, rate, mean, var):
    x = sample_gamma(shape, rate, np.random.default_rng(2), size=N)
    assert within(x, mean)
    assert var_within(x, var)


def test_gamma_rejects_nonpositive():
    with pytest.raises(SamplingError):
        sample_gamma(0.0, 1.0, np.random.default_rng(0))
    with pytest.raises(SamplingError):
        sample_gamma(1.0, -1.0, np.random.default_rng(0))


def test_gaussian_variance():
    x = sample_gaussian(0.0, 10.0, np.random.default_rng(6), size=N)
    assert within(x, 0.0) and var_within(x, 10.0)
    with pytest.raises(SamplingError):
        sample_gaussian(0.0, [1.0, 0.0], np.random.default_rng(0))


@pytest.mark.parametrize("P,cov", [(np.eye(3), np.eye(3)), (np.diag([4.0, 1.0]), np.diag([0.25, 1.0]))])
def test_gaussian_precision_covariance(P, cov):
    rng = np.random.default_rng(9)
    x = np.array([sample_gaussian_precision(P, np.zeros(P.shape[0]), rng) for _ in range(20_000)])
    for a in range(P.shape[0]):
        assert within(x[:, a], 0.0)
        for b in range(P.shape[0]):
            assert within(x[:, a] * x[:, b], cov[a, b])


def test_gaussian_precision_mean():
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    b = np.array([1.0, -1.0])
    x = np.array([sample_gaussian_precision(P, b, np.random.default_rng(s)) for s in range(5000)])
    target = np.linalg.solve(P, b)
    assert all(within(x[:, j], target[j]) for j in range(2))


def test_gaussian_precision_not_pd():
    with pytest.raises(np.linalg.LinAlgError):
        sample_gaussian_precision(np.array([[1.0, 2.0], [2.0, 1.0]]), np.zeros(2), np.random.default_rng(0))
