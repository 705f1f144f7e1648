"""Simulation designs, support/error metrics and the Monte Carlo runner."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import HippoConfig
from .data import Dataset, ModelParams, sigma_from_theta, support
from .oracle import confidence_interval
from .penalty import Penalty
from .tuning import (
    Criterion,
    CriterionTable,
    HippoFit,
    TuningGrid,
    noise_level_S,
    noise_level_T,
    run_grid,
)

log = logging.getLogger(__name__)

SIM2_AR = 0.5
SIM2_BETA0 = 2.0
SIM2_THETA0 = 1.0
SIM2_BETA = (3, 3, 3, 1.5, 1.5, 1.5, 0, 0, 0, 2, 2, 2)
SIM2_THETA = (1, 1, 1, 0, 0, 0, 0.5, 0.5, 0.5, 0, 0, 0, 0.75, 0.75, 0.75)

STREAM_X = 0
STREAM_EPS = 1


class Study(str, Enum):
    SIM1 = "sim1"
    SIM2 = "sim2"
    CUSTOM = "custom"


class Method(str, Enum):
    HIPPO = "hippo"
    HHR = "hhr"
    ORACLE_MEAN = "oracle-mean"
    ORACLE_VARIANCE = "oracle-variance"


def rng_for(seed: int, replicate: int, stream: int) -> np.random.Generator:
    """Philox stream keyed by (seed, replicate, stream); independent of execution order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replicate, stream])))


@dataclass(frozen=True)
class SimulationSpec:
    """A data-generating design.

    ``beta_star`` and ``theta_star`` are in model coordinates: when
    ``has_intercept`` the first entry belongs to the all-ones column and
    ``2 log sigma = x' theta_star``. ``rho`` is the equicorrelation of the
    first three covariates for Sim1 and the AR decay of the covariates
    otherwise.
    """

    which: Study
    n: int
    p: int
    rho: float
    beta_star: np.ndarray
    theta_star: np.ndarray
    has_intercept: bool
    n_replicates: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "which", Study(self.which))
        beta = np.asarray(self.beta_star, dtype=float)
        theta = np.asarray(self.theta_star, dtype=float)
        dim = self.p + int(self.has_intercept)
        if beta.shape != (dim,) or theta.shape != (dim,):
            raise ValueError(f"beta_star and theta_star must have length {dim}")
        if self.n_replicates < 1 or not 0 <= self.rho < 1 or self.n < 2:
            raise ValueError("need n_replicates >= 1, rho in [0, 1) and n >= 2")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        beta.flags.writeable = False
        theta.flags.writeable = False
        object.__setattr__(self, "beta_star", beta)
        object.__setattr__(self, "theta_star", theta)

    @classmethod
    def sim1(cls, n: int = 200, p: int = 2000, rho: float = 0.0, n_replicates: int = 100, seed: int = 0):
        """``y = sigma(x) eps`` with ``log sigma^2 = x1 + x2 + x3`` and no mean."""
        theta = np.zeros(p)
        theta[:3] = 1.0
        return cls(Study.SIM1, n, p, rho, np.zeros(p), theta, False, n_replicates, seed)

    @classmethod
    def sim2(cls, n: int = 400, p: int = 600, n_replicates: int = 100, seed: int = 0):
        """AR(0.5) covariates, intercepts 2 (mean) and 1 (log variance)."""
        beta = np.zeros(p + 1)
        theta = np.zeros(p + 1)
        beta[0], theta[0] = SIM2_BETA0, SIM2_THETA0
        beta[1 : len(SIM2_BETA) + 1] = SIM2_BETA
        theta[1 : len(SIM2_THETA) + 1] = SIM2_THETA
        return cls(Study.SIM2, n, p, SIM2_AR, beta, theta, True, n_replicates, seed)

    @property
    def truth(self) -> ModelParams:
        return ModelParams(np.array(self.beta_star), np.array(self.theta_star))

    def with_replicates(self, n_replicates: int, seed: int | None = None) -> "SimulationSpec":
        return replace(self, n_replicates=n_replicates, seed=self.seed if seed is None else seed)


def _covariates(spec: SimulationSpec, rng: np.random.Generator) -> np.ndarray:
    Z = rng.standard_normal((spec.n, spec.p))
    if spec.which is Study.SIM1:
        k = min(3, spec.p)
        shared = rng.standard_normal(spec.n)
        Z[:, :k] = math.sqrt(1 - spec.rho) * Z[:, :k] + math.sqrt(spec.rho) * shared[:, None]
        return Z
    # AR(1) recursion gives cov(x_i, x_j) = rho^|i-j| with unit variances
    X = np.empty_like(Z)
    X[:, 0] = Z[:, 0]
    s = math.sqrt(1 - spec.rho**2)
    for j in range(1, spec.p):
        X[:, j] = spec.rho * X[:, j - 1] + s * Z[:, j]
    return X


def generate(spec: SimulationSpec, replicate: int) -> tuple[Dataset, ModelParams]:
    """Draw replicate ``replicate``: covariates, then ``y = x'beta + exp(x'theta/2) eps``."""
    if not 0 <= replicate < spec.n_replicates:
        raise ValueError(f"replicate must lie in [0, {spec.n_replicates})")
    X = _covariates(spec, rng_for(spec.seed, replicate, STREAM_X))
    if spec.has_intercept:
        X = np.column_stack([np.ones(spec.n), X])
    eps = rng_for(spec.seed, replicate, STREAM_EPS).standard_normal(spec.n)
    y = X @ spec.beta_star + sigma_from_theta(X, spec.theta_star) * eps
    return Dataset(X, y, spec.has_intercept), spec.truth


@dataclass(frozen=True)
class RunMetrics:
    l2_beta: float
    l2_theta: float
    pre_beta: float
    rec_beta: float
    pre_theta: float
    rec_theta: float


def _pre_rec(est: np.ndarray, true: np.ndarray) -> tuple[float, float]:
    hit = np.intersect1d(est, true).size
    pre = hit / est.size if est.size else 1.0
    rec = hit / true.size if true.size else 1.0
    return pre, rec


def score(truth: ModelParams, beta: np.ndarray, theta: np.ndarray, penalized: np.ndarray | None = None) -> RunMetrics:
    """Errors over all coordinates (intercepts included); supports over penalized ones."""
    pb, rb = _pre_rec(support(beta, penalized), support(truth.beta, penalized))
    pt, rt = _pre_rec(support(theta, penalized), support(truth.theta, penalized))
    return RunMetrics(
        float(np.linalg.norm(beta - truth.beta)),
        float(np.linalg.norm(theta - truth.theta)),
        pb, rb, pt, rt,
    )


def score_fit(truth: ModelParams, fit: HippoFit, penalized: np.ndarray | None = None) -> RunMetrics:
    return score(truth, fit.beta, fit.theta, penalized)


def method_config(method: Method | str, base: HippoConfig | None = None) -> HippoConfig:
    """HHR is the same pipeline with the L1 penalty; everything else keeps ``base``."""
    base = base or HippoConfig()
    return base.with_penalty(Penalty("l1")) if Method(method) is Method.HHR else base


def study_grid(spec: SimulationSpec, grid: TuningGrid) -> TuningGrid:
    """Pin data-driven paths to fixed values so per-lambda curves line up across replicates."""
    lam_S = grid.lambda_S_values or tuple(grid.path(math.inf, noise_level_S(spec.p)))
    lam_T = grid.lambda_T_values or tuple(grid.path(math.inf, noise_level_T(spec.p)))
    return replace(grid, lambda_S_values=lam_S, lambda_T_values=lam_T)


@dataclass(frozen=True)
class ReplicateResult:
    """Selected-model metrics per (criterion, iteration) plus per-lambda curve points."""

    replicate: int
    metrics: dict[tuple[str, int], RunMetrics]
    curves: list[dict]
    ci: dict[tuple[str, int], dict] = field(default_factory=dict)
    error: str | None = None


def _curve_points(table: CriterionTable, truth: ModelParams, penalized, label: str, iteration: int) -> list[dict]:
    out = []
    seen_T = set()
    for f in table.fits:
        if f.lambda_T not in seen_T:
            seen_T.add(f.lambda_T)
            m = score_fit(truth, f, penalized)
            out.append(dict(param="theta", criterion=label, iteration=iteration, lam=f.lambda_T,
                            precision=m.pre_theta, recall=m.rec_theta, l2=m.l2_theta))
    lam_T_sel = table.best(label).lambda_T if table.fits else None
    for f in table.fits:
        if f.lambda_T == lam_T_sel and f.stage3 is not None:
            m = score_fit(truth, f, penalized)
            out.append(dict(param="beta", criterion=label, iteration=iteration, lam=f.lambda_S,
                            precision=m.pre_beta, recall=m.rec_beta, l2=m.l2_beta))
    return out


def run_replicate(
    spec: SimulationSpec,
    replicate: int,
    method: Method | str,
    grid: TuningGrid,
    cfg: HippoConfig | None = None,
    iterations: int = 1,
    criteria: Sequence[str] = ("bic",),
    ci: tuple[int, float] | None = None,
) -> ReplicateResult:
    """One replicate of one method; failures are reported, not raised."""
    method = Method(method)
    criteria = [Criterion(c).value for c in criteria]
    try:
        d, truth = generate(spec, replicate)
        cfg = method_config(method, cfg)
        metrics: dict = {}
        curves: list = []
        cis: dict = {}

        def record(table: CriterionTable, crit: str, it: int) -> HippoFit:
            best = table.best(crit)
            metrics[(crit, it)] = score_fit(truth, best, d.penalized)
            curves.extend(_curve_points(table, truth, d.penalized, crit, it))
            if ci is not None:
                j, level = ci
                try:
                    lo, hi = confidence_interval(d, best, j, level)
                    cis[(crit, it)] = dict(lo=lo, hi=hi, covered=bool(lo <= truth.beta[j] <= hi), selected=True)
                except ValueError:
                    cis[(crit, it)] = dict(lo=math.nan, hi=math.nan, covered=False, selected=False)
            return best

        if method is Method.ORACLE_MEAN:
            table = run_grid(d, grid, cfg, beta_fixed=truth.beta)
            for crit in criteria:
                record(table, crit, 1)
        elif method is Method.ORACLE_VARIANCE:
            sig = sigma_from_theta(d.X, truth.theta)
            table = run_grid(d, grid, cfg, sigma_fixed=sig, theta_fixed=truth.theta)
            for crit in criteria:
                record(table, crit, 1)
        else:
            table = run_grid(d, grid, cfg)
            for crit in criteria:
                best = record(table, crit, 1)
                if iterations == 2:
                    t2 = run_grid(d, grid, cfg, beta_start=best.beta, iteration=2)
                    record(t2, crit, 2)
        return ReplicateResult(replicate, metrics, curves, cis)
    except Exception as exc:  # noqa: BLE001 - a failed replicate must not sink the study
        log.warning("replicate %d failed: %r", replicate, exc)
        return ReplicateResult(replicate, {}, [], {}, repr(exc))


def _run_one(args) -> ReplicateResult:
    return run_replicate(*args)


@dataclass
class StudyResult:
    spec: SimulationSpec
    method: Method
    replicates: list[ReplicateResult]

    @property
    def failures(self) -> list[ReplicateResult]:
        return [r for r in self.replicates if r.error is not None]

    def keys(self) -> list[tuple[str, int]]:
        ks: set = set()
        for r in self.replicates:
            ks.update(r.metrics)
        return sorted(ks)

    def metric_array(self, criterion: str, iteration: int, name: str) -> np.ndarray:
        key = (Criterion(criterion).value, iteration)
        return np.array([getattr(r.metrics[key], name) for r in self.replicates if key in r.metrics])

    def aggregate(self) -> list[dict]:
        """Mean and sd of every metric, one row per (criterion, iteration)."""
        rows = []
        names = [f.name for f in RunMetrics.__dataclass_fields__.values()]
        for crit, it in self.keys():
            row = dict(method=self.method.value, criterion=crit, iteration=it)
            vals = None
            for name in names:
                vals = self.metric_array(crit, it, name)
                row[f"{name}_mean"] = float(np.mean(vals))
                row[f"{name}_sd"] = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            row["n_ok"] = int(vals.size) if vals is not None else 0
            row["n_failed"] = len(self.failures)
            rows.append(row)
        return rows

    def curves(self) -> list[dict]:
        """Per-lambda precision, recall and l2 averaged over replicates."""
        acc: dict[tuple, list] = {}
        for r in self.replicates:
            for pt in r.curves:
                key = (pt["param"], pt["criterion"], pt["iteration"], pt["lam"])
                acc.setdefault(key, []).append((pt["precision"], pt["recall"], pt["l2"]))
        rows = []
        for (param, crit, it, lam), vals in sorted(acc.items(), key=lambda kv: (kv[0][:3], -kv[0][3])):
            v = np.array(vals)
            rows.append(dict(method=self.method.value, param=param, criterion=crit, iteration=it, lam=lam,
                             precision=float(v[:, 0].mean()), recall=float(v[:, 1].mean()),
                             l2=float(v[:, 2].mean()), count=len(vals)))
        return rows

    def coverage(self, criterion: str = "bic", iteration: int | None = None) -> tuple[float, int]:
        """Fraction of replicates whose interval covers the truth, and how many had one."""
        it = iteration or max(i for _, i in self.keys())
        key = (Criterion(criterion).value, it)
        flags = [r.ci[key]["covered"] for r in self.replicates if key in r.ci]
        return (float(np.mean(flags)) if flags else math.nan), len(flags)

    def write(self, out_dir: str | Path, stem: str) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{stem}_table.csv", out / f"{stem}_curves.csv", out / f"{stem}_replicates.csv"]
        _write_rows(paths[0], self.aggregate())
        _write_rows(paths[1], self.curves())
        per = []
        for r in self.replicates:
            if r.error is not None:
                per.append(dict(replicate=r.replicate, criterion="", iteration="", error=r.error))
            for (crit, it), m in sorted(r.metrics.items()):
                row = dict(replicate=r.replicate, criterion=crit, iteration=it, error="", **asdict(m))
                if (crit, it) in r.ci:
                    row.update({f"ci_{k}": v for k, v in r.ci[(crit, it)].items()})
                per.append(row)
        _write_rows(paths[2], per)
        return paths


def _write_rows(path: Path, rows: list[dict]) -> None:
    fields: list[str] = []
    for r in rows:
        fields.extend(k for k in r if k not in fields)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, restval="")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def run_study(
    spec: SimulationSpec,
    method: Method | str,
    grid: TuningGrid | None = None,
    iterations: int = 1,
    cfg: HippoConfig | None = None,
    criteria: Sequence[str] = ("bic",),
    threads: int = 1,
    ci: tuple[int, float] | None = None,
    replicates: Sequence[int] | None = None,
) -> StudyResult:
    """Run every replicate of ``spec`` with ``method``.

    Replicates run in a process pool when ``threads > 1``. Each replicate
    draws from its own keyed stream and results are gathered in replicate
    order, so the output does not depend on ``threads``.
    """
    if iterations not in (1, 2):
        raise ValueError("iterations must be 1 or 2")
    method = Method(method)
    grid = study_grid(spec, grid or TuningGrid())
    reps = list(range(spec.n_replicates)) if replicates is None else list(replicates)
    jobs = [(spec, r, method, grid, cfg, iterations, tuple(criteria), ci) for r in reps]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=1))
    else:
        results = [_run_one(j) for j in jobs]
    res = StudyResult(spec, method, results)
    if res.failures:
        log.warning("%d of %d replicates failed", len(res.failures), len(results))
    return res
