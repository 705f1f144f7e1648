import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hippo.config import Stage1Config
from hippo.data import Dataset
from hippo.stage1 import fit_stage1, penalty_level, weighted_lasso


def _lasso_obj(d, beta, pen):
    r = d.y - d.X @ beta
    return float(r @ r + np.sum(pen * np.abs(beta)))


def test_zero_response():
    rng = np.random.default_rng(0)
    d = Dataset.with_intercept(rng.standard_normal((30, 5)), np.zeros(30))
    res = fit_stage1(d)
    assert np.all(res.beta_hat == 0) and np.all(res.residuals == 0)


def test_single_coordinate_shrinkage():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(50)
    x = (x - x.mean()) / x.std()
    d = Dataset(x[:, None], 10 * x + rng.standard_normal(50))
    res = fit_stage1(d)
    ols = float(x @ d.y / (x @ x))
    bound = res.lam * res.loadings[0] / float(x @ x)
    assert abs(res.beta_hat[0] - ols) <= bound
    # the exact single-coordinate Lasso solution: soft threshold at half that bound
    assert res.beta_hat[0] == pytest.approx(np.sign(ols) * max(abs(ols) - bound / 2, 0.0), abs=1e-6)


def test_homoscedastic_loadings_estimate_unit_scale():
    rng = np.random.default_rng(2)
    n, p = 500, 50
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[:3] = [2.0, -1.5, 1.0]
    d = Dataset(X, X @ beta + rng.standard_normal(n))
    res = fit_stage1(d)
    ratio = res.loadings * np.sqrt(n) / d.col_norms
    assert np.all(np.abs(ratio - 1.0) < 0.2), ratio


def test_penalty_level_formula():
    cfg = Stage1Config()
    from scipy.stats import norm

    n, p = 400, 601
    gamma = 0.1 / np.log(601)
    assert penalty_level(n, p, cfg) == pytest.approx(1.1 * 2 * np.sqrt(n) * norm.ppf(1 - gamma / (2 * p)))


@pytest.mark.parametrize("seed", range(5))
def test_kkt_and_support_size(seed):
    rng = np.random.default_rng(10 + seed)
    n, p = 60, 120
    X = rng.standard_normal((n, p))
    y = X[:, :4] @ np.array([3.0, -2.0, 1.5, 1.0]) + np.exp(0.4 * X[:, 5]) * rng.standard_normal(n)
    d = Dataset.with_intercept(X, y)
    res = fit_stage1(d)
    assert res.converged
    w = res.penalty_weights
    score = d.X.T @ res.residuals
    active = res.beta_hat != 0
    inactive = ~active & d.penalized
    assert np.all(np.abs(score[inactive]) <= w[inactive] / 2 * (1 + 1e-6) + 1e-9)
    pen_act = active & d.penalized
    np.testing.assert_allclose(score[pen_act], np.sign(res.beta_hat[pen_act]) * w[pen_act] / 2, rtol=1e-6, atol=1e-6)
    assert abs(score[0]) < 1e-6 * n
    assert np.count_nonzero(res.beta_hat) <= min(n, p + 1)


def test_sweeps_non_increasing():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((40, 30))
    X[:, 1] = X[:, 0] + 0.1 * X[:, 1]
    d = Dataset(X, X[:, :3] @ np.array([1.0, 2.0, -1.0]) + rng.standard_normal(40))
    pen = np.full(30, 5.0)
    objs = [_lasso_obj(d, weighted_lasso(d, pen, max_iter=k, tol=1e-14)[0], pen) for k in range(1, 40)]
    assert np.all(np.diff(objs) <= 1e-10 * objs[0])


def test_config_validation():
    with pytest.raises(ValueError):
        Stage1Config(c_mult=1.0)
    with pytest.raises(ValueError):
        Stage1Config(gamma=1.5)
    with pytest.raises(ValueError):
        Stage1Config(tol=0.0)
    assert Stage1Config().resolve_gamma(400, 601) == pytest.approx(0.1 / np.log(601))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(5, 40), st.integers(1, 60))
def test_weighted_lasso_optimality(seed, n, p):
    rng = np.random.default_rng(seed)
    d = Dataset(rng.standard_normal((n, p)), rng.standard_normal(n))
    pen = rng.uniform(0.5, 5.0, p)
    beta, _, ok = weighted_lasso(d, pen, tol=1e-10, max_iter=100_000)
    assert ok
    g = 2 * d.X.T @ (d.y - d.X @ beta)
    zero = beta == 0
    assert np.all(np.abs(g[zero]) <= pen[zero] + 1e-6)
    np.testing.assert_allclose(g[~zero], np.sign(beta[~zero]) * pen[~zero], atol=1e-5)
