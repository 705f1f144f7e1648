"""Mean re-estimation by inverse-variance weighted penalized least squares."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import _kernels
from .config import SolverConfig
from .data import Dataset, support
from .penalty import Penalty, value

log = logging.getLogger(__name__)

POWER_ITERS = 50
LIPSCHITZ_SAFETY = 1.1


def beta_loadings(d: Dataset, sigma_hat: np.ndarray, lambda_S: float) -> np.ndarray:
    """Per-coordinate levels ``lambda_S / n * sqrt(sum_i x_ij^2 / sigma_i^2)``."""
    lam = lambda_S / d.n * np.sqrt((d.X**2).T @ (1.0 / np.asarray(sigma_hat) ** 2))
    lam[~d.penalized] = 0.0
    return lam


@dataclass(frozen=True)
class Stage3Problem:
    d: Dataset
    sigma_hat: np.ndarray
    lambda_S: float
    penalty: Penalty = field(default_factory=Penalty)
    loadings: np.ndarray = field(init=False)
    Xw: np.ndarray = field(init=False, repr=False)
    yw: np.ndarray = field(init=False, repr=False)
    col_norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        s = np.ascontiguousarray(self.sigma_hat, dtype=float).ravel()
        if s.shape[0] != self.d.n:
            raise ValueError("sigma_hat must have one entry per sample")
        if not (np.all(np.isfinite(s)) and np.all(s > 0)):
            raise ValueError("sigma_hat must be finite and positive")
        if not self.lambda_S >= 0:
            raise ValueError("lambda_S must be non-negative")
        object.__setattr__(self, "sigma_hat", s)
        object.__setattr__(self, "loadings", beta_loadings(self.d, s, self.lambda_S))
        object.__setattr__(self, "Xw", self.d.X / s[:, None])
        object.__setattr__(self, "col_norms", np.sqrt(np.einsum("ij,ij->j", self.Xw, self.Xw)))
        object.__setattr__(self, "yw", self.d.y / s)

    def with_lambda(self, lambda_S: float, penalty: Penalty | None = None) -> "Stage3Problem":
        return Stage3Problem(self.d, self.sigma_hat, lambda_S, penalty or self.penalty)


def _check_beta(prob: Stage3Problem, beta: np.ndarray) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (prob.d.p,):
        raise ValueError(f"beta must have shape ({prob.d.p},), got {beta.shape}")
    return beta


def fit_part_beta(prob: Stage3Problem, beta: np.ndarray) -> float:
    r = prob.yw - prob.Xw @ _check_beta(prob, beta)
    return float(r @ r)


def objective_beta(prob: Stage3Problem, beta: np.ndarray) -> float:
    """Weighted residual sum of squares plus ``2n`` times the penalty."""
    beta = _check_beta(prob, beta)
    pen = np.sum(value(prob.penalty, np.abs(beta), prob.loadings))
    return fit_part_beta(prob, beta) + 2.0 * prob.d.n * float(pen)


def grad_fit_beta(prob: Stage3Problem, beta: np.ndarray) -> np.ndarray:
    r = prob.yw - prob.Xw @ _check_beta(prob, beta)
    return -2.0 * (prob.Xw.T @ r)


def lambda_S_max(d: Dataset, sigma_hat: np.ndarray) -> float:
    """Smallest ``lambda_S`` whose solution has no penalized coordinate active."""
    w2 = 1.0 / sigma_hat**2
    r = d.y.copy()
    if d.has_intercept:
        r = r - np.sum(w2 * d.y) / np.sum(w2)
    corr = np.abs(d.X.T @ (w2 * r))
    scale = np.sqrt((d.X**2).T @ w2)
    return float(np.max(corr[d.penalized] / scale[d.penalized])) if d.penalized.any() else 0.0


def power_lipschitz(G: np.ndarray) -> float:
    """``2 * safety * lambda_max(G)`` from a fixed number of power iterations."""
    est = _kernels.power_max_eig(np.ascontiguousarray(G), POWER_ITERS)
    return 2.0 * LIPSCHITZ_SAFETY * est if est > 0 else 1.0


@dataclass
class Stage3Result:
    beta_hat: np.ndarray
    objective: float
    support: np.ndarray
    outer_iters: int
    inner_iters_total: int
    converged: bool
    kkt: object = None
    objective_path: list[float] = field(default_factory=list)
    beta_l1: np.ndarray | None = None


def solve_weighted_l1_beta(
    prob: Stage3Problem,
    weights: np.ndarray,
    beta0: np.ndarray,
    cfg: SolverConfig,
    max_rounds: int = 200,
) -> tuple[np.ndarray, int, bool]:
    """Convex subproblem with ``2n * sum_j weights_j |beta_j|``.

    FISTA runs on a working set of columns; columns violating the optimality
    bound are added until none remain, so the result solves the full problem.
    """
    p = prob.d.p
    wpen = 2.0 * prob.d.n * np.asarray(weights, dtype=float)
    beta = np.array(beta0, dtype=float)
    in_set = (beta != 0) | (wpen == 0)
    g = grad_fit_beta(prob, beta)
    viol = (~in_set) & (np.abs(g) > wpen)
    in_set |= _top(viol, np.abs(g) - wpen, max(10, int(in_set.sum())))
    iters = 0
    ok = True
    for _ in range(max_rounds):
        idx = np.flatnonzero(in_set)
        # unit-norm columns: same minimizer, far better conditioned Gram
        scale = prob.col_norms[idx]
        XA = prob.Xw[:, idx] / scale
        G = XA.T @ XA
        c = XA.T @ prob.yw
        sub = beta[idx] * scale
        if idx.size:
            it, ok_k = _fista_polished(G, c, wpen[idx] / scale, sub, cfg.max_inner, cfg.inner_tol * float(scale.min()))
            iters += it
            ok = ok_k
        beta = np.zeros(p)
        beta[idx] = sub / scale
        g = grad_fit_beta(prob, beta)
        slack = np.abs(g) - wpen * (1 + 1e-10) - 1e-10
        viol = (~in_set) & (slack > 0)
        if not viol.any():
            break
        in_set |= _top(viol, slack, max(10, idx.size))
    else:
        ok = False
    return beta, iters, ok


def _polish(G: np.ndarray, c: np.ndarray, wpen: np.ndarray, b: np.ndarray) -> np.ndarray | None:
    """Exact minimizer for the sign pattern of ``b``, or None if it is inconsistent."""
    act = (b != 0) | (wpen == 0)
    if not act.any():
        return None
    s = np.sign(b[act])
    GA = G[np.ix_(act, act)]
    try:
        cf = linalg.cho_factor(GA)
    except linalg.LinAlgError:
        return None
    bA = linalg.cho_solve(cf, c[act] - wpen[act] * s / 2.0)
    pen_act = wpen[act] > 0
    if np.any(np.sign(bA[pen_act]) != s[pen_act]):
        return None
    out = np.zeros_like(b)
    out[act] = bA
    g = 2.0 * (G @ out - c)
    if np.any(np.abs(g[~act]) > wpen[~act] * (1 + 1e-9) + 1e-12):
        return None
    return out


def _fista_polished(G, c, wpen, b, max_iter: int, tol: float, chunk: int = 200) -> tuple[int, bool]:
    """FISTA in chunks; after each chunk try the exact solve on the current sign pattern.

    The polished point is kept only if its signs are consistent and the
    zero coordinates satisfy the subgradient bound, i.e. it is optimal.
    """
    if b.any():
        # warm starts from the previous LLA iterate usually keep the sign pattern
        exact = _polish(G, c, wpen, b)
        if exact is not None:
            b[:] = exact
            return 0, True
    L = power_lipschitz(G)
    used = 0
    while used < max_iter:
        it, ok, _ = _kernels.fista_gram(G, c, wpen, b, L, min(chunk, max_iter - used), tol)
        used += int(it)
        exact = _polish(G, c, wpen, b)
        if exact is not None:
            b[:] = exact
            return used, True
        if ok:
            return used, True
        chunk *= 2
    return used, False


def _top(mask: np.ndarray, score: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(mask)
    cand = np.flatnonzero(mask)
    if cand.size > k:
        cand = cand[np.argsort(-score[cand], kind="stable")[:k]]
    out[cand] = True
    return out


def fit_stage3(
    prob: Stage3Problem,
    cfg: SolverConfig | None = None,
    beta_init: np.ndarray | None = None,
    kkt_tol: float | None = None,
) -> Stage3Result:
    """Local linear approximation loop around weighted-L1 FISTA solves."""
    from .oracle import kkt_check_beta

    cfg = cfg or SolverConfig()
    p = prob.d.p
    start = np.zeros(p) if beta_init is None else _check_beta(prob, beta_init)
    beta, inner, ok = solve_weighted_l1_beta(prob, prob.loadings, start, cfg)
    beta_l1 = beta.copy()
    path = [objective_beta(prob, beta)]
    outer = 0
    if prob.penalty.family.value != "l1":
        for outer in range(1, cfg.max_outer + 1):
            w = prob.penalty.lla_weights(beta, prob.loadings)
            new, it, ok_k = solve_weighted_l1_beta(prob, w, beta, cfg)
            inner += it
            ok = ok and ok_k
            change = float(np.max(np.abs(new - beta))) if p else 0.0
            beta = new
            path.append(objective_beta(prob, beta))
            if change < cfg.tol:
                break
        else:
            # capped before reaching a fixed point: not a certified local minimizer
            ok = False
    obj = path[-1]
    if not np.isfinite(obj):
        raise FloatingPointError("stage 3 objective is not finite")
    kkt = kkt_check_beta(prob, beta, kkt_tol if kkt_tol is not None else 1e-4 * prob.d.n)
    return Stage3Result(
        beta_hat=beta,
        objective=obj,
        support=support(beta, prob.d.penalized),
        outer_iters=outer,
        inner_iters_total=inner,
        converged=ok,
        kkt=kkt,
        objective_path=path,
        beta_l1=beta_l1,
    )
