"""Three-stage fit over a (lambda_S, lambda_T) grid with AIC/BIC selection."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .config import HippoConfig
from .data import Dataset, ModelParams, neg_loglik, sigma_from_theta, support
from .stage1 import Stage1Result, fit_stage1
from .stage2 import Stage2Problem, Stage2Result, fit_stage2, lambda_T_max
from .stage3 import Stage3Problem, Stage3Result, fit_stage3, lambda_S_max

log = logging.getLogger(__name__)

DEFAULT_N_LAMBDA = 30
FAST_N_LAMBDA = 15
LAMBDA_MIN_RATIO = 0.01
SPAN_HI = 10.0


def noise_level_S(p: int) -> float:
    """lambda_S at which a pure-noise column enters at the usual sqrt(2 log p) level."""
    return math.sqrt(2.0 * math.log(max(p, 2)))


def noise_level_T(p: int) -> float:
    """Same for lambda_T: the score has sd sqrt(2)||X_j|| against a 4||X_j|| lambda_T bound."""
    return math.sqrt(2.0) / 4.0 * noise_level_S(p)


class Criterion(str, Enum):
    AIC = "aic"
    BIC = "bic"


@dataclass(frozen=True)
class TuningGrid:
    """Candidate tuning values; ``None`` means data-driven log-spaced defaults.

    ``max_support`` ends a lambda path early once the fitted support exceeds
    it (``None``: ``n // 4``).
    """

    lambda_S_values: tuple[float, ...] | None = None
    lambda_T_values: tuple[float, ...] | None = None
    criterion: Criterion = Criterion.BIC
    n_lambda: int = DEFAULT_N_LAMBDA
    min_ratio: float = LAMBDA_MIN_RATIO
    max_support: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "criterion", Criterion(self.criterion))
        for name in ("lambda_S_values", "lambda_T_values"):
            vals = getattr(self, name)
            if vals is None:
                continue
            vals = tuple(sorted((float(v) for v in np.atleast_1d(vals)), reverse=True))
            if not vals or min(vals) <= 0:
                raise ValueError(f"{name} must be nonempty and strictly positive")
            object.__setattr__(self, name, vals)
        if self.n_lambda < 1 or not 0 < self.min_ratio < 1:
            raise ValueError("n_lambda must be >= 1 and min_ratio in (0, 1)")

    @classmethod
    def fast(cls, **kw) -> "TuningGrid":
        return cls(n_lambda=FAST_N_LAMBDA, **kw)

    def path(self, lam_max: float, noise_level: float | None = None) -> np.ndarray:
        """Log-spaced values below ``lam_max``.

        Without ``noise_level`` the path runs from ``lam_max`` down to
        ``min_ratio * lam_max``. With it (the value at which pure-noise
        coordinates start to enter) the top is capped at
        ``SPAN_HI * noise_level`` and the bottom is ``min_ratio`` times that
        cap, so the path stays dense where selection happens however strong
        the signal is.
        """
        lam_max = max(lam_max, 1e-12)
        hi, lo = lam_max, lam_max * self.min_ratio
        if noise_level is not None:
            hi = min(lam_max, noise_level * SPAN_HI)
            lo = min(hi, noise_level * SPAN_HI * self.min_ratio)
        if self.n_lambda == 1:
            return np.array([hi])
        return np.geomspace(hi, lo, self.n_lambda)


def df_hat(beta_hat: np.ndarray, theta_hat: np.ndarray, penalized: np.ndarray | None = None) -> int:
    """Number of nonzero penalized coefficients in both parameter vectors."""
    return int(support(beta_hat, penalized).size + support(theta_hat, penalized).size)


@dataclass
class HippoFit:
    beta: np.ndarray
    theta: np.ndarray
    sigma_hat: np.ndarray
    lambda_S: float
    lambda_T: float
    df: int
    neg_loglik: float
    aic: float
    bic: float
    iteration: int = 1
    beta_start: np.ndarray | None = None
    stage1: Stage1Result | None = None
    stage2: Stage2Result | None = None
    stage3: Stage3Result | None = None

    @property
    def converged(self) -> bool:
        return all(s is None or s.converged for s in (self.stage2, self.stage3))

    def criterion(self, which: Criterion | str) -> float:
        return self.aic if Criterion(which) is Criterion.AIC else self.bic

    def support_beta(self, penalized: np.ndarray | None = None) -> np.ndarray:
        return support(self.beta, penalized)

    def support_theta(self, penalized: np.ndarray | None = None) -> np.ndarray:
        return support(self.theta, penalized)


def make_fit(d: Dataset, beta, theta, lambda_S, lambda_T, **kw) -> HippoFit:
    """Score a (beta, theta) pair with the likelihood, df and both criteria."""
    beta = np.asarray(beta, dtype=float)
    theta = np.asarray(theta, dtype=float)
    nll = neg_loglik(ModelParams(beta, theta), d)
    df = df_hat(beta, theta, d.penalized)
    return HippoFit(
        beta=beta,
        theta=theta,
        sigma_hat=sigma_from_theta(d.X, theta),
        lambda_S=float(lambda_S),
        lambda_T=float(lambda_T),
        df=df,
        neg_loglik=nll,
        aic=nll + 2.0 * df,
        bic=nll + df * math.log(d.n),
        **kw,
    )


@dataclass
class CriterionTable:
    """All grid fits; AIC and BIC share the fits and differ only in the argmin."""

    n: int
    fits: list[HippoFit] = field(default_factory=list)
    errors: list[tuple[float, float, str]] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [
            {
                "lambda_S": f.lambda_S,
                "lambda_T": f.lambda_T,
                "df_hat": f.df,
                "neg_loglik": f.neg_loglik,
                "aic": f.aic,
                "bic": f.bic,
                "converged": f.converged,
            }
            for f in self.fits
        ]

    def best(self, criterion: Criterion | str) -> HippoFit:
        """Argmin of the criterion; ties go to the larger (lambda_S, lambda_T)."""
        crit = Criterion(criterion)
        pool = [f for f in self.fits if f.converged]
        if not pool:
            if not self.fits:
                raise RuntimeError("no grid point produced a fit")
            log.warning("no converged grid point; selecting among unconverged fits")
            pool = self.fits
        return min(pool, key=lambda f: (f.criterion(crit), -f.lambda_S, -f.lambda_T))

    def write_csv(self, path) -> None:
        import csv

        rows = self.rows()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(
                fh, fieldnames=["lambda_S", "lambda_T", "df_hat", "neg_loglik", "aic", "bic", "converged"]
            )
            w.writeheader()
            for r in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def stage3_path(
    d: Dataset,
    sigma_hat: np.ndarray,
    lambda_S_values: Sequence[float],
    cfg: HippoConfig,
    max_support: int,
) -> list[tuple[float, Stage3Result | Exception]]:
    """Stage 3 along descending lambda_S, warm-starting each L1 solve from the previous one."""
    out = []
    warm = None
    for lam in sorted(lambda_S_values, reverse=True):
        prob = Stage3Problem(d, sigma_hat, lam, cfg.penalty)
        try:
            res = fit_stage3(prob, cfg.stage3, beta_init=warm)
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            out.append((lam, exc))
            continue
        warm = res.beta_l1
        out.append((lam, res))
        if res.support.size > max_support:
            break
    return out


def run_grid(
    d: Dataset,
    grid: TuningGrid,
    cfg: HippoConfig | None = None,
    beta_start: np.ndarray | None = None,
    sigma_fixed: np.ndarray | None = None,
    theta_fixed: np.ndarray | None = None,
    iteration: int = 1,
    beta_fixed: np.ndarray | None = None,
) -> CriterionTable:
    """Fit every grid point.

    ``beta_start`` replaces the stage-1 estimate (used for a second pass).
    ``beta_fixed`` treats the mean as known: stage 2 runs on its residuals
    and stage 3 is skipped, so each row is one lambda_T. ``sigma_fixed``
    with ``theta_fixed`` skips stages 1-2 entirely (known variance).
    """
    cfg = cfg or HippoConfig()
    max_support = grid.max_support if grid.max_support is not None else max(d.n // 4, 1)
    table = CriterionTable(d.n)
    s1 = None

    def add_stage3(theta, sig, lam_T, s2):
        lam_S_values = grid.lambda_S_values or tuple(grid.path(lambda_S_max(d, sig), noise_level_S(d.p)))
        for lam_S, res in stage3_path(d, sig, lam_S_values, cfg, max_support):
            if isinstance(res, Exception):
                table.errors.append((lam_S, lam_T, repr(res)))
                continue
            table.fits.append(
                make_fit(
                    d, res.beta_hat, theta, lam_S, lam_T,
                    iteration=iteration, beta_start=beta_start if beta_start is not None else (s1.beta_hat if s1 else None),
                    stage1=s1, stage2=s2, stage3=res,
                )
            )

    if sigma_fixed is not None:
        theta = np.zeros(d.p) if theta_fixed is None else np.asarray(theta_fixed, dtype=float)
        add_stage3(theta, np.asarray(sigma_fixed, dtype=float), 0.0, None)
        return table

    if beta_fixed is not None:
        beta_start = np.asarray(beta_fixed, dtype=float)
    if beta_start is None:
        s1 = fit_stage1(d, cfg.stage1)
        resid = s1.residuals
    else:
        resid = d.y - d.X @ np.asarray(beta_start, dtype=float)
    eta_sq = resid**2
    lam_T_values = grid.lambda_T_values or tuple(grid.path(lambda_T_max(d, eta_sq), noise_level_T(d.p)))
    warm = None
    for lam_T in lam_T_values:
        prob = Stage2Problem(d, eta_sq, lam_T, cfg.penalty)
        try:
            s2 = fit_stage2(prob, cfg.stage2, theta_init=warm)
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            table.errors.append((float("nan"), lam_T, repr(exc)))
            continue
        warm = s2.theta_l1
        if beta_fixed is not None:
            table.fits.append(
                make_fit(d, beta_start, s2.theta_hat, 0.0, lam_T, iteration=iteration, beta_start=beta_start, stage2=s2)
            )
        else:
            add_stage3(s2.theta_hat, sigma_from_theta(d.X, s2.theta_hat), lam_T, s2)
        if s2.support.size > max_support:
            break
    return table


def select(
    d: Dataset,
    grid: TuningGrid | None = None,
    cfg: HippoConfig | None = None,
    **kw,
) -> tuple[HippoFit, CriterionTable]:
    """Run the grid and return the fit minimizing ``grid.criterion`` with the full table."""
    grid = grid or TuningGrid()
    table = run_grid(d, grid, cfg, **kw)
    return table.best(grid.criterion), table


def fit_hippo(
    d: Dataset,
    grid: TuningGrid | None = None,
    cfg: HippoConfig | None = None,
    iterations: int = 1,
) -> list[tuple[HippoFit, CriterionTable]]:
    """Three stages, optionally followed by one more pass of stages 2-3.

    The second pass starts stage 2 from the residuals of the first pass's
    selected mean estimate. Returns one (fit, table) per pass.
    """
    if iterations not in (1, 2):
        raise ValueError("iterations must be 1 or 2")
    grid = grid or TuningGrid()
    out = [select(d, grid, cfg)]
    if iterations == 2:
        out.append(select(d, grid, cfg, beta_start=out[0][0].beta, iteration=2))
    return out
