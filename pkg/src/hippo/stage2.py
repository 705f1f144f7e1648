"""Variance-parameter estimation by penalized pseudo-likelihood."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .config import SolverConfig
from .data import Dataset, clamp_lp, support, LPMAX
from .penalty import Penalty, value

log = logging.getLogger(__name__)


def theta_loadings(d: Dataset, lambda_T: float) -> np.ndarray:
    """Per-coordinate levels ``lambda_T * ||X_j|| / n`` (zero for the intercept)."""
    lam = lambda_T * d.col_norms / d.n
    lam[~d.penalized] = 0.0
    return lam


@dataclass(frozen=True)
class Stage2Problem:
    d: Dataset
    eta_sq: np.ndarray
    lambda_T: float
    penalty: Penalty = field(default_factory=Penalty)
    loadings: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        eta_sq = np.ascontiguousarray(self.eta_sq, dtype=float).ravel()
        if eta_sq.shape[0] != self.d.n:
            raise ValueError("eta_sq must have one entry per sample")
        if np.any(eta_sq < 0) or not np.all(np.isfinite(eta_sq)):
            raise ValueError("eta_sq must be finite and non-negative")
        if not self.lambda_T >= 0:
            raise ValueError("lambda_T must be non-negative")
        object.__setattr__(self, "eta_sq", eta_sq)
        object.__setattr__(self, "loadings", theta_loadings(self.d, self.lambda_T))

    @classmethod
    def from_residuals(cls, d: Dataset, resid: np.ndarray, lambda_T: float, penalty: Penalty | None = None):
        return cls(d, np.asarray(resid, dtype=float) ** 2, lambda_T, penalty or Penalty())


def _check_theta(prob: Stage2Problem, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (prob.d.p,):
        raise ValueError(f"theta must have shape ({prob.d.p},), got {theta.shape}")
    return theta


def fit_part_theta(prob: Stage2Problem, theta: np.ndarray) -> float:
    """Unpenalized part ``sum_i x_i'theta + eta_i^2 exp(-x_i'theta)``."""
    lp = prob.d.X @ _check_theta(prob, theta)
    return float(np.sum(lp) + np.sum(prob.eta_sq * np.exp(-clamp_lp(lp))))


def objective_theta(prob: Stage2Problem, theta: np.ndarray) -> float:
    """Full penalized objective, penalty scaled by ``4n``."""
    theta = _check_theta(prob, theta)
    pen = np.sum(value(prob.penalty, np.abs(theta), prob.loadings))
    return fit_part_theta(prob, theta) + 4.0 * prob.d.n * float(pen)


def grad_fit_theta(prob: Stage2Problem, theta: np.ndarray) -> np.ndarray:
    """Gradient ``sum_i (1 - eta_i^2 exp(-x_i'theta)) x_ij`` of the unpenalized part."""
    lp = prob.d.X @ _check_theta(prob, theta)
    inside = np.abs(lp) < LPMAX
    r = np.where(inside, prob.eta_sq * np.exp(-clamp_lp(lp)), 0.0)
    return prob.d.X.T @ (1.0 - r)


def lambda_T_max(d: Dataset, eta_sq: np.ndarray) -> float:
    """Smallest ``lambda_T`` whose solution has no penalized coordinate active."""
    theta0 = np.zeros(d.p)
    if d.has_intercept:
        theta0[0] = np.log(max(np.mean(eta_sq), 1e-300))
    prob = Stage2Problem(d, eta_sq, 0.0, Penalty("l1"))
    g = np.abs(grad_fit_theta(prob, theta0))
    scale = 4.0 * d.col_norms
    return float(np.max(g[d.penalized] / scale[d.penalized])) if d.penalized.any() else 0.0


@dataclass
class Stage2Result:
    theta_hat: np.ndarray
    objective: float
    support: np.ndarray
    outer_iters: int
    inner_iters_total: int
    converged: bool
    kkt: object = None
    objective_path: list[float] = field(default_factory=list)
    theta_l1: np.ndarray | None = None


def solve_weighted_l1_theta(
    prob: Stage2Problem, weights: np.ndarray, theta0: np.ndarray, cfg: SolverConfig
) -> tuple[np.ndarray, int, bool]:
    """Convex subproblem with ``4n * sum_j weights_j |theta_j|``."""
    theta = np.array(theta0, dtype=float)
    wpen = 4.0 * prob.d.n * np.asarray(weights, dtype=float)
    sweeps, ok = _kernels.theta_cd(prob.d.X, prob.eta_sq, theta, wpen, cfg.max_inner, cfg.inner_tol)
    return theta, int(sweeps), bool(ok)


def fit_stage2(
    prob: Stage2Problem,
    cfg: SolverConfig | None = None,
    theta_init: np.ndarray | None = None,
    kkt_tol: float | None = None,
) -> Stage2Result:
    """Local linear approximation loop around the weighted-L1 coordinate descent.

    The first solve uses the plain loadings (the L1 solution); later solves
    use the penalty derivative at the previous iterate. ``theta_init`` only
    warm-starts that first convex solve.
    """
    from .oracle import kkt_check_theta

    cfg = cfg or SolverConfig()
    p = prob.d.p
    start = np.zeros(p) if theta_init is None else _check_theta(prob, theta_init)
    theta, inner, ok = solve_weighted_l1_theta(prob, prob.loadings, start, cfg)
    theta_l1 = theta.copy()
    path = [objective_theta(prob, theta)]
    outer = 0
    if prob.penalty.family.value != "l1":
        for outer in range(1, cfg.max_outer + 1):
            w = prob.penalty.lla_weights(theta, prob.loadings)
            new, sweeps, ok_k = solve_weighted_l1_theta(prob, w, theta, cfg)
            inner += sweeps
            ok = ok and ok_k
            change = float(np.max(np.abs(new - theta))) if p else 0.0
            theta = new
            path.append(objective_theta(prob, theta))
            if change < cfg.tol:
                break
        else:
            # capped before reaching a fixed point: not a certified local minimizer
            ok = False
    obj = path[-1]
    if not np.isfinite(obj):
        raise FloatingPointError("stage 2 objective is not finite")
    kkt = kkt_check_theta(prob, theta, kkt_tol if kkt_tol is not None else 1e-4 * prob.d.n)
    return Stage2Result(
        theta_hat=theta,
        objective=obj,
        support=support(theta, prob.d.penalized),
        outer_iters=outer,
        inner_iters_total=inner,
        converged=ok,
        kkt=kkt,
        objective_path=path,
        theta_l1=theta_l1,
    )
