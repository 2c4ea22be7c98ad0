"""Kernel density estimators against an independent full-sum oracle."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from levelconf.density import (
    Bandwidths,
    DataFormatError,
    Dataset,
    DensityEstimator,
    bias_term,
    bootstrap_mean_eval,
    fit,
    read_dataset,
    sample_smoothed,
    sample_standard,
    write_dataset,
)
from levelconf.kernel import get_kernel

K2 = get_kernel("sim2d")
CK = 693 / 512
MU2 = 1 / 13


def _k(u, order=0):
    """Profile and derivatives written out by hand."""
    t = 1 - u**2
    inside = np.abs(u) <= 1
    if order == 0:
        v = CK * t**5
    elif order == 1:
        v = -10 * CK * u * t**4
    else:
        v = CK * (-10 * t**4 + 80 * u**2 * t**3)
    return np.where(inside, v, 0.0)


def oracle_kde(data, h, x, orders=(0, 0)):
    """Full double sum: 1/(n h1 h2) sum_i prod_j h_j^-o_j k^(o_j)((x_j - X_ij)/h_j)."""
    h = np.broadcast_to(h, (2,))
    u = (x[:, None, :] - data[None, :, :]) / h
    w = _k(u[..., 0], orders[0]) * _k(u[..., 1], orders[1])
    scale = 1 / (len(data) * h[0] * h[1] * h[0] ** orders[0] * h[1] ** orders[1])
    return scale * w.sum(axis=1)


@pytest.mark.parametrize("n", [200, 1000])
def test_pruned_equals_full_sum(n, rng):
    data = rng.normal(size=(n, 2)) * [1.0, 0.6]
    h = np.array([0.45, 0.3])
    x = rng.uniform(-3, 3, size=(100, 2))
    est = fit(data, K2, h)
    ref = oracle_kde(data, h, x)
    np.testing.assert_allclose(est(x), ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(fit(data, K2, h, prune=False)(x), ref, rtol=0, atol=1e-12)
    g = est.grad(x)
    np.testing.assert_allclose(g[:, 0], oracle_kde(data, h, x, (1, 0)), atol=1e-11)
    np.testing.assert_allclose(g[:, 1], oracle_kde(data, h, x, (0, 1)), atol=1e-11)
    H = est.hessian(x)
    np.testing.assert_allclose(H[:, 0, 0], oracle_kde(data, h, x, (2, 0)), atol=1e-10)
    np.testing.assert_allclose(H[:, 0, 1], oracle_kde(data, h, x, (1, 1)), atol=1e-10)
    np.testing.assert_allclose(H[:, 1, 1], oracle_kde(data, h, x, (0, 2)), atol=1e-10)


def test_bias_corrected_matches_formula(rng):
    data = rng.normal(size=(300, 2))
    h, l = np.array([0.5, 0.6]), np.array([0.8, 0.9])
    x = rng.uniform(-2, 2, size=(40, 2))
    est = fit(data, K2, h, "bias_corrected", l)
    bias = 0.5 * MU2 * (h[0] ** 2 * oracle_kde(data, l, x, (2, 0))
                        + h[1] ** 2 * oracle_kde(data, l, x, (0, 2)))
    np.testing.assert_allclose(est(x), oracle_kde(data, h, x) - bias, atol=1e-12)
    np.testing.assert_allclose(bias_term(data, K2, h, l, x), bias, atol=1e-12)


def test_bootstrap_mean_with_tiny_g_matches_plain(case1_sample):
    h = np.array([0.6, 0.6])
    x = np.random.default_rng(2).uniform(-2, 2, size=(60, 2))
    plain = fit(case1_sample, K2, h)(x)
    mean = bootstrap_mean_eval(case1_sample, K2, h, 1e-9 * h, x)
    np.testing.assert_allclose(mean, plain, atol=1e-4)


def test_bootstrap_mean_is_expected_resample_estimate(rng):
    # E* f*(x) = integral f_g(y) K_h(x - y) dy, checked by product quadrature.
    data = rng.normal(size=(12, 2))
    h, g = np.array([0.5, 0.4]), np.array([0.3, 0.35])
    x = np.array([[0.1, -0.2], [0.7, 0.4]])
    est = fit(data, K2, h, "bootstrap_mean", g)
    s = np.linspace(-1, 1, 4001)
    ds = s[1] - s[0]
    for xi, val in zip(x, est(x)):
        total = 0.0
        for p in data:
            prod = 1.0
            for j in range(2):
                # (k_h * k_g)(x_j - X_j) by a Riemann sum over the g-kernel variable
                y = p[j] + g[j] * s
                prod *= np.sum(_k(s) * _k((xi[j] - y) / h[j]) / h[j]) * ds
            total += prod
        assert val == pytest.approx(total / len(data), rel=1e-6)


def test_bootstrap_mean_gradient(rng):
    data = rng.normal(size=(50, 2))
    est = fit(data, K2, [0.5, 0.6], "bootstrap_mean", [0.4, 0.4])
    x = rng.uniform(-1, 1, size=(20, 2))
    step = 1e-6
    for a in range(2):
        e = np.zeros(2)
        e[a] = step
        fd = (est(x + e) - est(x - e)) / (2 * step)
        np.testing.assert_allclose(est.grad(x)[:, a], fd, rtol=1e-5, atol=1e-9)


@pytest.mark.parametrize("kind,aux", [("plain", None), ("bias_corrected", 0.9), ("bootstrap_mean", 0.3)])
def test_on_grid_matches_pointwise(kind, aux, rng):
    data = rng.normal(size=(150, 2))
    est = fit(data, K2, [0.5, 0.4], kind, aux)
    ax = [np.linspace(-2, 2, 17), np.linspace(-1.5, 2.5, 13)]
    X, Y = np.meshgrid(*ax, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    np.testing.assert_allclose(est.on_grid(ax).ravel(), est(pts), atol=1e-13)
    if kind != "bootstrap_mean":
        for deriv, ref in [((1, 0), est.grad(pts)[:, 0]), ((0, 1), est.grad(pts)[:, 1]),
                           ((1, 1), est.hessian(pts)[:, 0, 1])]:
            np.testing.assert_allclose(est.on_grid(ax, deriv=deriv).ravel(), ref, atol=1e-12)


def test_single_point_and_far_point(rng):
    data = rng.normal(size=(30, 2))
    est = fit(data, K2, 0.5)
    assert np.ndim(est(np.array([0.0, 0.0]))) == 0
    assert est(np.array([50.0, 50.0])) == 0.0
    assert est.grad(np.array([50.0, 50.0])).shape == (2,)


def test_integrates_to_one(rng):
    data = rng.normal(size=(80, 2))
    est = fit(data, K2, [0.5, 0.7])
    ax = [np.linspace(-6, 6, 601)] * 2
    cell = (ax[0][1] - ax[0][0]) ** 2
    assert est.on_grid(ax).sum() * cell == pytest.approx(1.0, abs=1e-6)


def test_one_dimensional_estimator(rng):
    data = rng.normal(size=(100, 1))
    est = fit(data, get_kernel("sim1d"), 0.4)
    x = np.linspace(-2, 2, 9)
    u = (x[:, None] - data[:, 0][None, :]) / 0.4
    np.testing.assert_allclose(est(x[:, None]), _k(u).sum(axis=1) / (100 * 0.4), atol=1e-14)


def test_errors(rng):
    data = rng.normal(size=(10, 2))
    with pytest.raises(ValueError):
        fit(data, K2, 0.0)
    with pytest.raises(ValueError):
        fit(data, K2, [0.5, -1.0])
    with pytest.raises(ValueError):
        fit(np.empty((0, 2)), K2, 0.5)
    with pytest.raises(ValueError):
        Dataset(np.array([[0.0, np.nan], [1.0, 1.0]]))
    with pytest.raises(ValueError):
        fit(data, K2, 0.5, "bias_corrected")
    with pytest.raises(ValueError):
        fit(data, K2, 0.5, "median")
    with pytest.raises(ValueError):
        fit(data, get_kernel("sim1d"), 0.5)


def test_dataset_round_trip(tmp_path, rng):
    data = rng.normal(size=(25, 2))
    write_dataset(data, tmp_path / "d.csv")
    back = read_dataset(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.points, data)
    (tmp_path / "bad.csv").write_text("1,2\n3,x\n")
    with pytest.raises(DataFormatError):
        read_dataset(tmp_path / "bad.csv")
    (tmp_path / "ragged.csv").write_text("1,2\n3\n")
    with pytest.raises(DataFormatError):
        read_dataset(tmp_path / "ragged.csv")


def test_bandwidths_scaling():
    bw = Bandwidths([1.0, 2.0], [3.0, 4.0], [0.5, 0.5])
    s = bw.scaled(0.7, "hg")
    np.testing.assert_allclose(s.h, [0.7, 1.4])
    np.testing.assert_allclose(s.l, [3.0, 4.0])
    np.testing.assert_allclose(s.g, [0.35, 0.35])
    assert bw.h_eff == pytest.approx(np.sqrt(2.0))


def test_smoothed_sample_moments():
    # f_g has mean mean(X) and per-axis variance var(X) + g^2 mu2.
    data = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]])
    g = np.array([0.5, 1.5])
    draws = sample_smoothed(data, K2, g, 400_000, np.random.default_rng(5))
    np.testing.assert_allclose(draws.mean(axis=0), data.mean(axis=0), atol=0.01)
    np.testing.assert_allclose(draws.var(axis=0), data.var(axis=0) + g**2 * MU2, rtol=0.01)


def test_smoothed_sample_distribution():
    # one observation: the draws follow the scaled kernel profile exactly
    draws = sample_smoothed(np.array([[0.0, 0.0], [0.0, 0.0]]), K2, 1.0, 20_000,
                            np.random.default_rng(9))
    grid = np.linspace(-1, 1, 20001)
    cdf = np.cumsum(_k(grid)) * (grid[1] - grid[0])
    res = stats.kstest(draws[:, 0], lambda t: np.interp(t, grid, cdf))
    assert res.pvalue > 1e-3


def test_standard_resample_draws_observations(rng):
    data = rng.normal(size=(20, 2))
    draws = sample_standard(data, 100, rng)
    assert all(any(np.array_equal(d, x) for x in data) for d in draws)


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_translation_equivariance(tx, ty):
    data = np.random.default_rng(3).normal(size=(40, 2))
    x = np.random.default_rng(4).uniform(-1, 1, size=(10, 2))
    t = np.array([tx, ty])
    a = fit(data, K2, [0.6, 0.5])(x)
    b = fit(data + t, K2, [0.6, 0.5])(x + t)
    np.testing.assert_allclose(a, b, atol=1e-12)


@given(st.floats(0.2, 3.0))
def test_nonnegative_and_bounded(h):
    data = np.random.default_rng(6).normal(size=(30, 2))
    x = np.random.default_rng(7).uniform(-3, 3, size=(50, 2))
    v = fit(data, K2, h)(x)
    assert np.all(v >= 0)
    assert np.all(v <= CK**2 / h**2 + 1e-12)


def test_estimator_dimensions(rng):
    est = DensityEstimator(rng.normal(size=(10, 2)), K2, 1.0)
    assert (est.n, est.d) == (10, 2)
