import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

import props
from hippo.data import Dataset
from hippo.oracle import (
    NewtonTrace,
    SingularSystemError,
    chol_solve,
    confidence_interval,
    kkt_check_beta,
    kkt_check_theta,
    oracle_mle_theta,
    oracle_wls,
)
from hippo.penalty import Penalty
from hippo.stage2 import Stage2Problem
from hippo.stage3 import Stage3Problem


def test_wls_examples():
    d = Dataset(np.ones((2, 1)), np.array([1.0, 3.0]))
    assert oracle_wls(d, [0], np.ones(2))[0] == pytest.approx(2.0)
    y1, y2 = 1.3, -4.0
    d2 = Dataset(np.ones((2, 1)), np.array([y1, y2]))
    assert oracle_wls(d2, [0], np.array([1.0, 10.0]))[0] == pytest.approx((y1 + 0.01 * y2) / 1.01)
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 4))
    d3 = Dataset(X, rng.standard_normal(30))
    np.testing.assert_allclose(oracle_wls(d3, range(4), np.ones(30)), np.linalg.lstsq(X, d3.y, rcond=None)[0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_wls_residual_orthogonality(seed):
    rng = np.random.default_rng(seed)
    n, p = 40, 10
    d = Dataset(rng.standard_normal((n, p)), rng.standard_normal(n) * 5)
    S = np.flatnonzero(rng.random(p) < 0.5)
    sig = np.exp(rng.normal(0, 0.7, n))
    b = oracle_wls(d, S, sig)
    assert np.all(b[np.setdiff1d(np.arange(p), S)] == 0)
    res = d.X[:, S].T @ ((d.y - d.X @ b) / sig**2)
    assert np.max(np.abs(res), initial=0.0) <= 1e-8 * np.linalg.norm(d.y)


def test_wls_errors():
    d = Dataset(np.column_stack([np.ones(5), np.ones(5), np.arange(5.0)]), np.ones(5))
    with pytest.raises(SingularSystemError, match="condition number"):
        oracle_wls(d, [0, 1], np.ones(5))
    with pytest.raises(IndexError):
        oracle_wls(d, [3], np.ones(5))
    with pytest.raises(ValueError):
        oracle_wls(Dataset(np.eye(2, 3) + 1, np.ones(2)), [0, 1, 2], np.ones(2))


def test_chol_solve_jitter_and_empty():
    assert chol_solve(np.zeros((0, 0)), np.zeros(0)).size == 0
    A = np.array([[4.0, 2.0], [2.0, 3.0]])
    np.testing.assert_allclose(A @ chol_solve(A, np.array([1.0, 2.0])), [1.0, 2.0])


def test_newton_examples():
    d = Dataset(np.column_stack([np.ones(500), np.random.default_rng(1).standard_normal(500)]), np.zeros(500))
    eta_sq = np.random.default_rng(2).exponential(2.0, 500)
    assert np.all(oracle_mle_theta(d, [], eta_sq) == 0)
    th = oracle_mle_theta(d, [0], eta_sq)
    assert th[0] == pytest.approx(math.log(eta_sq.mean()), abs=1e-8) and th[1] == 0


def test_newton_hessians_are_psd():
    d, _, theta = props.hetero_data(3, n=200, p=5)
    eta_sq = np.exp(d.X @ theta) * np.random.default_rng(3).standard_normal(200) ** 2
    trace = NewtonTrace()
    th = oracle_mle_theta(d, range(d.p), eta_sq, trace=trace)
    assert min(trace.min_hess_eig) >= -1e-10
    assert trace.grad_norm < 1e-8 * d.n
    lp = d.X @ th
    np.testing.assert_allclose(d.X.T @ (1 - eta_sq * np.exp(-lp)), 0, atol=1e-8 * d.n)


def test_newton_singular_hessian():
    d = Dataset(np.column_stack([np.ones(5), np.ones(5)]), np.zeros(5))
    with pytest.raises(SingularSystemError):
        oracle_mle_theta(d, [0, 1], np.ones(5) * 2)


def _fit(beta, sigma_hat):
    return SimpleNamespace(beta=np.asarray(beta, float), sigma_hat=np.asarray(sigma_hat, float))


def test_confidence_interval_examples():
    n = 64
    rng = np.random.default_rng(4)
    Q, _ = np.linalg.qr(rng.standard_normal((n, 3)))
    d = Dataset(Q * math.sqrt(n), rng.standard_normal(n))
    fit = _fit([1.0, -2.0, 0.0], np.ones(n))
    lo, hi = confidence_interval(d, fit, 1, 0.95)
    assert (hi - lo) / 2 == pytest.approx(norm.ppf(0.975) / math.sqrt(n))
    assert (lo + hi) / 2 == pytest.approx(-2.0)
    assert confidence_interval(d, fit, 0, 0.0) == (1.0, 1.0)
    with pytest.raises(ValueError, match="not in the selected support"):
        confidence_interval(d, fit, 2, 0.95)
    with pytest.raises(ValueError):
        confidence_interval(d, fit, 0, 1.0)


def test_confidence_interval_includes_intercept_in_design():
    rng = np.random.default_rng(5)
    d = Dataset.with_intercept(rng.standard_normal((50, 2)) + 3.0, rng.standard_normal(50))
    fit = _fit([0.0, 1.0, 0.0], np.ones(50))
    lo, hi = confidence_interval(d, fit, 1, 0.9)
    XS = d.X[:, :2]
    var = np.linalg.inv(XS.T @ XS / 50)[1, 1]
    assert (hi - lo) / 2 == pytest.approx(norm.ppf(0.95) * math.sqrt(var / 50))


def test_kkt_theta_constructed_cases():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((80, 4))
    theta = np.array([0.5, 0.0, -0.4, 0.0])
    d = Dataset(X, np.zeros(80))
    # exact variance fit at the origin: the gradient vanishes and every coordinate is inactive
    cert = kkt_check_theta(Stage2Problem(d, np.ones(80), 50.0, Penalty("scad")), np.zeros(4), 1e-4 * 80)
    assert cert.passed and cert.max_inactive_ratio == 0.0
    # exact fit with active coordinates beyond a * lambda_j, where the SCAD derivative is zero
    small = Stage2Problem(d, np.exp(X @ theta), 0.01, Penalty("scad"))
    assert kkt_check_theta(small, theta, 1e-4 * 80).passed
    # an inactive coordinate pushed to +1 under a tiny lambda is not stationary
    tiny = Stage2Problem(d, np.exp(X @ theta), 1e-6, Penalty("scad"))
    bad = theta.copy()
    bad[1] = 1.0
    assert not kkt_check_theta(tiny, bad, 1e-4 * 80).passed


def test_kkt_beta_constructed_cases():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((60, 5))
    b = np.array([1.0, 0.0, 0.0, -2.0, 0.0])
    d = Dataset(X, X @ b)
    assert kkt_check_beta(Stage3Problem(d, np.ones(60), 0.5), b, 1e-4 * 60).passed
    # the dense least-squares solution under a strong penalty violates stationarity
    noisy = Dataset(X, X @ b + rng.standard_normal(60))
    ols = np.linalg.lstsq(X, noisy.y, rcond=None)[0]
    cert = kkt_check_beta(Stage3Problem(noisy, np.ones(60), 5.0, Penalty("l1")), ols, 1e-4 * 60)
    assert not cert.passed and cert.max_active_violation > 1.0


def test_kkt_suite_on_solver_outputs():
    ok, detail = props.check_kkt_suite(seeds=range(4))
    assert ok, detail
