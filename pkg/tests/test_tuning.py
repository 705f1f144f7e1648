import math

import numpy as np
import pytest

import props
from hippo.config import HippoConfig
from hippo.data import Dataset
from hippo.penalty import Penalty
from hippo.stage2 import Stage2Problem, fit_stage2
from hippo.stage3 import Stage3Problem, fit_stage3
from hippo.tuning import (
    CriterionTable,
    TuningGrid,
    df_hat,
    fit_hippo,
    make_fit,
    run_grid,
    select,
)


@pytest.fixture(scope="module")
def small_problem():
    d, beta, theta = props.hetero_data(21, n=150, p=30)
    table = run_grid(d, TuningGrid(n_lambda=6))
    return d, table


def test_df_hat_examples():
    b = np.array([1.0, 0.0, 2.0, -3.0, 1e-9])
    t = np.array([0.0, 0.5, 0.0, 0.0, -0.2])
    assert df_hat(b, t) == 5
    mask = np.array([False, True, True, True, True])
    assert df_hat(b, t, mask) == 4


def test_grid_validation():
    g = TuningGrid(lambda_S_values=(0.1, 3.0, 1.0))
    assert g.lambda_S_values == (3.0, 1.0, 0.1)
    for bad in ((), (1.0, 0.0), (-1.0,)):
        with pytest.raises(ValueError):
            TuningGrid(lambda_T_values=bad)
    with pytest.raises(ValueError):
        TuningGrid(n_lambda=0)
    path = TuningGrid(n_lambda=30).path(10.0)
    assert path[0] == 10.0 and path[-1] == pytest.approx(0.1) and np.all(np.diff(path) < 0)


def test_table_identities(small_problem):
    d, table = small_problem
    assert table.fits and not table.errors
    for f in table.fits:
        assert f.aic == f.neg_loglik + 2 * f.df
        assert f.bic == f.neg_loglik + f.df * math.log(d.n)
        assert f.df == df_hat(f.beta, f.theta, d.penalized)


def test_aic_and_bic_share_fits(small_problem):
    d, table = small_problem
    a, b = table.best("aic"), table.best("bic")
    assert any(a is f for f in table.fits) and any(b is f for f in table.fits)
    assert b.df <= a.df
    rows = table.rows()
    assert len(rows) == len(table.fits)
    # the argmin is the only thing that differs
    assert a.aic == min(f.aic for f in table.fits if f.converged)
    assert b.bic == min(f.bic for f in table.fits if f.converged)


def test_single_point_grid():
    d, _, _ = props.hetero_data(22, n=100, p=10)
    best, table = select(d, TuningGrid(lambda_S_values=(0.7,), lambda_T_values=(0.4,)))
    assert len(table.fits) == 1 and best is table.fits[0]
    assert (best.lambda_S, best.lambda_T) == (0.7, 0.4)


def _stub(lam_S, lam_T, bic, converged=True):
    d = Dataset(np.eye(3) + 1, np.ones(3))
    f = make_fit(d, np.zeros(3), np.zeros(3), lam_S, lam_T)
    f.bic = bic
    f.aic = bic
    if not converged:
        f.stage2 = type("R", (), {"converged": False})()
    return f


def test_ties_go_to_larger_lambdas():
    table = CriterionTable(3, [_stub(1.0, 1.0, 5.0), _stub(2.0, 0.5, 5.0), _stub(2.0, 1.5, 5.0), _stub(3.0, 1.0, 6.0)])
    best = table.best("bic")
    assert (best.lambda_S, best.lambda_T) == (2.0, 1.5)


def test_unconverged_rows_are_not_selected():
    table = CriterionTable(3, [_stub(1.0, 1.0, 1.0, converged=False), _stub(2.0, 1.0, 5.0)])
    assert table.best("bic").lambda_S == 2.0
    only = CriterionTable(3, [_stub(1.0, 1.0, 1.0, converged=False)])
    assert only.best("bic").lambda_S == 1.0
    with pytest.raises(RuntimeError):
        CriterionTable(3).best("bic")


def test_warm_starts_agree_with_cold_starts(small_problem):
    d, table = small_problem
    rng = np.random.default_rng(0)
    cfg = HippoConfig()
    for i in rng.choice(len(table.fits), 5, replace=False):
        f = table.fits[i]
        eta_sq = (d.y - d.X @ f.beta_start) ** 2
        s2 = fit_stage2(Stage2Problem(d, eta_sq, f.lambda_T, cfg.penalty), cfg.stage2)
        s3 = fit_stage3(Stage3Problem(d, f.sigma_hat, f.lambda_S, cfg.penalty), cfg.stage3)
        np.testing.assert_allclose(s2.theta_hat, f.theta, atol=1e-5)
        np.testing.assert_allclose(s3.beta_hat, f.beta, atol=1e-5)


def test_csv_output(small_problem, tmp_path):
    _, table = small_problem
    path = tmp_path / "t.csv"
    table.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "lambda_S,lambda_T,df_hat,neg_loglik,aic,bic,converged"
    assert len(lines) == len(table.fits) + 1


def test_fit_hippo_two_passes():
    d, beta, theta = props.hetero_data(23, n=200, p=20)
    (f1, t1), (f2, t2) = fit_hippo(d, TuningGrid.fast(), iterations=2)
    assert f1.iteration == 1 and f2.iteration == 2
    np.testing.assert_array_equal(f2.beta_start, f1.beta)
    assert set(np.flatnonzero(beta[1:]) + 1) <= set(f2.support_beta(d.penalized).tolist())
    with pytest.raises(ValueError):
        fit_hippo(d, iterations=3)


def test_hhr_differs_only_in_penalty():
    a, b = HippoConfig(), HippoConfig().with_penalty(Penalty("l1"))
    da, db = a.to_dict(), b.to_dict()
    assert [k for k in da if da[k] != db[k]] == ["penalty"]


@pytest.mark.xfail(
    strict=True,
    reason=(
        "BIC as printed (df * log n, no high-dimensional correction) selects a nonempty model "
        "on about half of pure-noise seeds: with 2p candidate coefficients the largest "
        "likelihood gain routinely exceeds log n"
    ),
)
def test_pure_noise_bic_selects_empty_model():
    empty = 0
    for s in range(100):
        rng = np.random.default_rng(s)
        d = Dataset.with_intercept(rng.standard_normal((100, 10)), rng.standard_normal(100))
        best, _ = select(d, TuningGrid())
        empty += best.df == 0
    assert empty >= 90, f"df_hat = 0 in {empty} of 100 seeds"
