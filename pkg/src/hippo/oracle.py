"""Oracle estimators, local-minimizer certificates and confidence intervals."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .data import LPMAX, SUPPORT_EPS, Dataset, clamp_lp

CHOL_JITTER = 1e-10
MAX_COND = 1e12


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class KktCertificate:
    """Zero-subgradient check at a candidate solution.

    ``max_active_violation`` is the largest stationarity residual over
    nonzero (and unpenalized) coordinates; ``max_inactive_ratio`` is the
    largest ``|g_j| / (scale * n * rho'(0+))`` over zero coordinates.
    """

    max_active_violation: float
    max_inactive_ratio: float
    passed: bool
    tol: float = field(default=0.0)

    def to_dict(self) -> dict:
        return asdict(self)


def _certify(g, coef, lam_j, deriv_active, scale_n, tol) -> KktCertificate:
    active = np.abs(coef) > SUPPORT_EPS
    unpen = lam_j == 0
    act_res = np.zeros_like(g)
    act_res[active] = g[active] + scale_n * np.sign(coef[active]) * deriv_active[active]
    act_res[unpen] = g[unpen]
    check_act = active | unpen
    max_act = float(np.max(np.abs(act_res[check_act]))) if check_act.any() else 0.0
    inactive = ~check_act
    if inactive.any():
        bound = scale_n * lam_j[inactive]
        max_ratio = float(np.max(np.abs(g[inactive]) / bound))
    else:
        max_ratio = 0.0
    return KktCertificate(max_act, max_ratio, bool(max_act <= tol and max_ratio < 1.0), float(tol))


def kkt_check_theta(prob, theta: np.ndarray, tol: float) -> KktCertificate:
    """Certificate for the variance problem (penalty scaled by ``4n``).

    Active: ``g_j + 4n sgn(theta_j) rho'(|theta_j|) = 0``; inactive:
    ``|g_j| < 4n lambda_j``. The intercept is checked for ``g_j = 0`` only.
    """
    from .stage2 import grad_fit_theta

    theta = np.asarray(theta, dtype=float)
    g = grad_fit_theta(prob, theta)
    dv = prob.penalty.deriv(np.abs(theta), prob.loadings)
    return _certify(g, theta, prob.loadings, np.atleast_1d(dv), 4.0 * prob.d.n, tol)


def kkt_check_beta(prob, beta: np.ndarray, tol: float) -> KktCertificate:
    """Certificate for the weighted least-squares problem (penalty scaled by ``2n``)."""
    from .stage3 import grad_fit_beta

    beta = np.asarray(beta, dtype=float)
    g = grad_fit_beta(prob, beta)
    dv = prob.penalty.deriv(np.abs(beta), prob.loadings)
    return _certify(g, beta, prob.loadings, np.atleast_1d(dv), 2.0 * prob.d.n, tol)


def chol_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Retries once with a ``1e-10`` diagonal jitter; raises on a condition
    number above ``1e12``.
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return np.zeros(0)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > MAX_COND:
        raise SingularSystemError(f"system is singular or ill-conditioned (condition number {cond:.3g})")
    try:
        c = linalg.cho_factor(A)
    except linalg.LinAlgError:
        try:
            c = linalg.cho_factor(A + CHOL_JITTER * np.eye(A.shape[0]))
        except linalg.LinAlgError:
            raise SingularSystemError(
                f"Cholesky failed after jitter (condition number {cond:.3g})"
            ) from None
    return linalg.cho_solve(c, b)


def _index(S, p: int) -> np.ndarray:
    idx = np.unique(np.asarray(list(S), dtype=int))
    if idx.size and (idx.min() < 0 or idx.max() >= p):
        raise IndexError("index set out of range")
    return idx


def oracle_wls(d: Dataset, S, sigma: np.ndarray) -> np.ndarray:
    """Weighted least squares restricted to the columns ``S``, zeros elsewhere."""
    idx = _index(S, d.p)
    if idx.size > d.n:
        raise ValueError(f"|S|={idx.size} exceeds n={d.n}")
    w2 = 1.0 / np.asarray(sigma, dtype=float) ** 2
    XS = d.X[:, idx]
    beta = np.zeros(d.p)
    beta[idx] = chol_solve(XS.T @ (w2[:, None] * XS), XS.T @ (w2 * d.y))
    return beta


@dataclass
class NewtonTrace:
    iters: int = 0
    min_hess_eig: list[float] = field(default_factory=list)
    grad_norm: float = np.inf


def oracle_mle_theta(
    d: Dataset, T, eta_sq: np.ndarray, max_iter: int = 100, trace: NewtonTrace | None = None
) -> np.ndarray:
    """Newton minimization of ``sum_i x_iT'th + eta_i^2 exp(-x_iT'th)`` over ``th`` on ``T``."""
    idx = _index(T, d.p)
    theta = np.zeros(d.p)
    if idx.size == 0:
        return theta
    eta_sq = np.asarray(eta_sq, dtype=float)
    XT = d.X[:, idx]
    th = np.zeros(idx.size)

    def f(t):
        lp = XT @ t
        return float(np.sum(lp) + np.sum(eta_sq * np.exp(-clamp_lp(lp))))

    fval = f(th)
    for it in range(max_iter + 1):
        lp = XT @ th
        r = np.where(np.abs(lp) < LPMAX, eta_sq * np.exp(-clamp_lp(lp)), 0.0)
        g = XT.T @ (1.0 - r)
        gnorm = float(np.linalg.norm(g))
        H = XT.T @ (r[:, None] * XT)
        if trace is not None:
            trace.iters = it
            trace.grad_norm = gnorm
            trace.min_hess_eig.append(float(np.linalg.eigvalsh(H)[0]))
        if gnorm < 1e-8 * d.n:
            theta[idx] = th
            return theta
        if it == max_iter:
            break
        step = chol_solve(H, g)
        t = 1.0
        while t > 1e-12:
            cand = th - t * step
            fc = f(cand)
            if fc <= fval - 1e-4 * t * float(g @ step):
                break
            t *= 0.5
        th, fval = cand, fc
    raise RuntimeError(f"Newton did not converge in {max_iter} steps (gradient norm {gnorm:.3g})")


def confidence_interval(d: Dataset, fit, j: int, level: float = 0.95) -> tuple[float, float]:
    """Normal-approximation interval for ``beta_j`` on the selected support.

    Uses ``beta_j +- z * sqrt([D^-1]_jj / n)`` with
    ``D = X_S' diag(sigma^-2) X_S / n`` over the selected columns (intercept
    included when present).
    """
    beta = np.asarray(fit.beta, dtype=float)
    sig = np.asarray(fit.sigma_hat, dtype=float)
    S = set(np.flatnonzero(np.abs(beta) > SUPPORT_EPS).tolist())
    if d.has_intercept:
        S.add(0)
    if j not in S:
        raise ValueError(f"coefficient {j} is not in the selected support")
    if not 0 <= level < 1:
        raise ValueError("level must lie in [0, 1)")
    idx = np.array(sorted(S))
    XS = d.X[:, idx]
    D = XS.T @ (XS / sig[:, None] ** 2) / d.n
    e = (idx == j).astype(float)
    var = float(chol_solve(D, e)[idx.tolist().index(j)])
    z = norm.ppf((1.0 + level) / 2.0)
    half = z * np.sqrt(var / d.n)
    return float(beta[j] - half), float(beta[j] + half)
