"""Initial mean estimate: Lasso with heteroscedasticity-adjusted penalty loadings."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import _kernels
from .config import Stage1Config
from .data import Dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Stage1Result:
    beta_hat: np.ndarray
    residuals: np.ndarray
    loadings: np.ndarray
    lam: float
    sweeps: int
    converged: bool

    @property
    def penalty_weights(self) -> np.ndarray:
        """Per-coordinate weight on |beta_j| in ``||y - X b||^2 + sum_j w_j |b_j|``."""
        return self.lam * self.loadings


def penalty_level(n: int, p: int, cfg: Stage1Config) -> float:
    gamma = cfg.resolve_gamma(n, p)
    return cfg.c_mult * 2.0 * np.sqrt(n) * norm.ppf(1.0 - gamma / (2.0 * p))


def loadings_from_residuals(d: Dataset, resid: np.ndarray) -> np.ndarray:
    ups = np.sqrt((d.X**2).T @ resid**2 / d.n)
    ups[~d.penalized] = 0.0
    return ups


def weighted_lasso(
    d: Dataset, pen: np.ndarray, beta0: np.ndarray | None = None, max_iter: int = 10_000, tol: float = 1e-7
) -> tuple[np.ndarray, int, bool]:
    """Solve ``min ||y - X b||^2 + sum_j pen_j |b_j|`` by coordinate descent."""
    beta = np.zeros(d.p) if beta0 is None else np.array(beta0, dtype=float)
    sweeps, ok = _kernels.lasso_cd(d.X, d.y, beta, np.asarray(pen, dtype=float), max_iter, tol)
    return beta, int(sweeps), bool(ok)


def fit_stage1(d: Dataset, cfg: Stage1Config | None = None) -> Stage1Result:
    """Iterated penalty-loading Lasso.

    Minimizes ``(1/n)||y - X b||^2 + (lam/n) sum_j U_j |b_j|`` where
    ``lam = c_mult * 2 sqrt(n) * Phi^{-1}(1 - gamma / (2p))`` and
    ``U_j = sqrt(mean_i x_ij^2 e_i^2)`` is recomputed from the residuals ``e``
    of the previous solve, starting from ``e = y - mean(y)``.
    """
    cfg = cfg or Stage1Config()
    lam = penalty_level(d.n, d.p, cfg)
    resid = d.y - d.y.mean()
    beta = np.zeros(d.p)
    total = 0
    ok = True
    for _ in range(cfg.loading_iters + 1):
        ups = loadings_from_residuals(d, resid)
        beta, sweeps, ok = weighted_lasso(d, lam * ups, beta, cfg.max_cd_iters, cfg.tol)
        total += sweeps
        resid = d.y - d.X @ beta
    if not ok:
        log.warning("stage 1 coordinate descent hit max_cd_iters=%d", cfg.max_cd_iters)
    return Stage1Result(beta, resid, ups, float(lam), total, ok)
