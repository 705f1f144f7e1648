"""Folded-concave (SCAD, MCP) and L1 penalties.

All functions take the magnitude ``beta >= 0`` and a level ``lam >= 0`` and
broadcast over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping

import numpy as np

DEFAULT_A = {"scad": 3.7, "mcp": 3.0}


class Family(str, Enum):
    SCAD = "scad"
    MCP = "mcp"
    L1 = "l1"


def _check_nonneg(name: str, x: np.ndarray) -> None:
    if np.any(x < 0) or np.any(~np.isfinite(x)):
        raise ValueError(f"{name} must be finite and non-negative")


@dataclass(frozen=True)
class Penalty:
    """A penalty family with its concavity parameter ``a``.

    ``a`` is ignored for L1. SCAD needs ``a > 2`` and MCP ``a > 0``.
    """

    family: Family = Family.SCAD
    a: float | None = None

    def __post_init__(self) -> None:
        family = Family(self.family)
        object.__setattr__(self, "family", family)
        if family is Family.L1:
            object.__setattr__(self, "a", None)
            return
        a = DEFAULT_A[family.value] if self.a is None else float(self.a)
        if family is Family.SCAD and not a > 2:
            raise ValueError(f"SCAD requires a > 2, got {a}")
        if family is Family.MCP and not a > 0:
            raise ValueError(f"MCP requires a > 0, got {a}")
        object.__setattr__(self, "a", a)

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any] | str) -> "Penalty":
        if isinstance(cfg, str):
            return cls(Family(cfg.lower()))
        return cls(Family(str(cfg.get("family", "scad")).lower()), cfg.get("a"))

    def to_config(self) -> dict[str, Any]:
        return {"family": self.family.value, "a": self.a}

    @property
    def b(self) -> float:
        """Threshold multiple beyond which the derivative vanishes (inf for L1)."""
        return np.inf if self.family is Family.L1 else float(self.a)

    def deriv(self, beta, lam):
        return deriv(self, beta, lam)

    def value(self, beta, lam):
        return value(self, beta, lam)

    def lla_weights(self, coeffs, lambdas):
        return lla_weights(self, coeffs, lambdas)


def deriv(p: Penalty, beta, lam):
    """Derivative of the penalty at ``beta``, with ``deriv(0) = lam``.

    At the breakpoints the closed (left) branch is used; the derivative is
    continuous there anyway.
    """
    beta = np.asarray(beta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    _check_nonneg("beta", beta)
    _check_nonneg("lambda", lam)
    if p.family is Family.L1:
        out = np.broadcast_to(lam, np.broadcast(beta, lam).shape).astype(float)
    elif p.family is Family.SCAD:
        a = p.a
        with np.errstate(divide="ignore", invalid="ignore"):
            tail = np.maximum(a * lam - beta, 0.0) / (a - 1.0)
        out = np.where(beta <= lam, lam, tail)
        out = np.where(lam == 0, 0.0, out)
    else:
        a = p.a
        out = np.maximum(a * lam - beta, 0.0) / a
    return out[()] if out.ndim == 0 else out


def value(p: Penalty, beta, lam):
    """Penalty value, the integral of :func:`deriv` from 0 to ``beta``."""
    beta = np.asarray(beta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    _check_nonneg("beta", beta)
    _check_nonneg("lambda", lam)
    if p.family is Family.L1:
        out = lam * beta
    elif p.family is Family.SCAD:
        a = p.a
        mid = (2.0 * a * lam * beta - beta**2 - lam**2) / (2.0 * (a - 1.0))
        flat = (a + 1.0) * lam**2 / 2.0
        out = np.where(beta <= lam, lam * beta, np.where(beta <= a * lam, mid, flat))
    else:
        a = p.a
        out = np.where(beta <= a * lam, lam * beta - beta**2 / (2.0 * a), a * lam**2 / 2.0)
    out = np.asarray(out, dtype=float)
    return out[()] if out.ndim == 0 else out


def lla_weights(p: Penalty, coeffs, lambdas) -> np.ndarray:
    """Per-coordinate weights ``deriv(|coeff_j|, lambda_j)`` for the next weighted-L1 solve."""
    coeffs = np.asarray(coeffs, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    if coeffs.shape != lambdas.shape:
        raise ValueError(
            f"coeffs and lambdas must have equal length, got {coeffs.shape} and {lambdas.shape}"
        )
    return np.atleast_1d(deriv(p, np.abs(coeffs), lambdas))
