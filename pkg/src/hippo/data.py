"""Heteroscedastic linear model: data container, variances and likelihood."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# clamp on the variance linear predictor x'theta before exponentiation
LPMAX = 50.0
SUPPORT_EPS = 1e-8


@dataclass(frozen=True)
class Dataset:
    """Design ``X`` (n x p, rows are samples) and response ``y``.

    With ``has_intercept`` the first column must be all ones; that coordinate
    is never penalized and never counted in supports.
    """

    X: np.ndarray
    y: np.ndarray
    has_intercept: bool = False
    col_norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        X = np.ascontiguousarray(self.X, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float).ravel()
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        n, p = X.shape
        if n < 2 or p < 1:
            raise ValueError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if y.shape[0] != n:
            raise ValueError(f"y has length {y.shape[0]} but X has {n} rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("X and y must be finite")
        if self.has_intercept and not np.all(X[:, 0] == 1.0):
            raise ValueError("has_intercept requires the first column to be all ones")
        norms = np.sqrt(np.einsum("ij,ij->j", X, X))
        if np.any(norms == 0):
            bad = np.flatnonzero(norms == 0).tolist()
            raise ValueError(f"zero columns in X: {bad}")
        X.setflags(write=False)
        y.setflags(write=False)
        norms.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "col_norms", norms)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def penalized(self) -> np.ndarray:
        """Boolean mask of penalized coordinates."""
        mask = np.ones(self.p, dtype=bool)
        if self.has_intercept:
            mask[0] = False
        return mask

    @classmethod
    def with_intercept(cls, X: np.ndarray, y: np.ndarray) -> "Dataset":
        X = np.asarray(X, dtype=float)
        return cls(np.column_stack([np.ones(X.shape[0]), X]), y, has_intercept=True)


@dataclass(frozen=True)
class ModelParams:
    beta: np.ndarray
    theta: np.ndarray

    def __post_init__(self) -> None:
        beta = np.asarray(self.beta, dtype=float).ravel()
        theta = np.asarray(self.theta, dtype=float).ravel()
        if beta.shape != theta.shape:
            raise ValueError("beta and theta must have the same length")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "theta", theta)


def _check(params: ModelParams, d: Dataset) -> None:
    if params.beta.shape[0] != d.p:
        raise ValueError(f"parameter length {params.beta.shape[0]} does not match p={d.p}")


def clamp_lp(lp: np.ndarray) -> np.ndarray:
    return np.clip(lp, -LPMAX, LPMAX)


def sigma_from_theta(X: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return np.exp(clamp_lp(X @ theta) / 2.0)


def sigma(params: ModelParams, d: Dataset) -> np.ndarray:
    """Standard deviations ``exp(x_i'theta / 2)`` with the linear predictor clamped."""
    _check(params, d)
    return sigma_from_theta(d.X, params.theta)


def neg_loglik(params: ModelParams, d: Dataset) -> float:
    """Negative Gaussian log-likelihood without additive constants.

    ``sum_i (y_i - x_i'beta)^2 exp(-x_i'theta) + x_i'theta``
    """
    _check(params, d)
    lp = d.X @ params.theta
    resid = d.y - d.X @ params.beta
    return float(np.sum(resid**2 * np.exp(-clamp_lp(lp)) + lp))


def support(v: np.ndarray, penalized: np.ndarray | None = None) -> np.ndarray:
    """Indices of entries above ``SUPPORT_EPS`` in magnitude, restricted to ``penalized``."""
    mask = np.abs(v) > SUPPORT_EPS
    if penalized is not None:
        mask &= penalized
    return np.flatnonzero(mask)


class CsvParseError(ValueError):
    pass


def load_csv(path: str | Path, header: bool = False, intercept: bool = False) -> Dataset:
    """Read a CSV whose first column is ``y`` and remaining columns are ``X``.

    Parse errors report the offending 1-based line number.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise CsvParseError(f"{path}:{lineno}: {exc}") from None
            if len(rows[-1]) != len(rows[0]):
                raise CsvParseError(
                    f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(rows[-1])}"
                )
    if not rows:
        raise CsvParseError(f"{path}: no data rows")
    if len(rows[0]) < 2:
        raise CsvParseError(f"{path}: need a response column and at least one covariate")
    arr = np.array(rows)
    y, X = arr[:, 0], arr[:, 1:]
    if intercept:
        return Dataset.with_intercept(X, y)
    return Dataset(X, y)


def save_csv(path: str | Path, d: Dataset, header: bool = True) -> None:
    """Write ``d`` as ``y, x_1..x_p``; an intercept column is dropped (re-add with ``--intercept``)."""
    X = d.X[:, 1:] if d.has_intercept else d.X
    arr = np.column_stack([d.y, X])
    head = ",".join(["y"] + [f"x{j + 1}" for j in range(X.shape[1])]) if header else ""
    np.savetxt(path, arr, delimiter=",", header=head, comments="", fmt="%.17g")
