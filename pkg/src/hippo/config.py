"""Solver configuration blocks and config-file loading (TOML or JSON)."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .penalty import Penalty


@dataclass(frozen=True)
class Stage1Config:
    """Iterated penalty-loading Lasso settings.

    ``gamma=None`` means ``0.1 / log(max(p, n))``, resolved per dataset.
    """

    c_mult: float = 1.1
    gamma: float | None = None
    loading_iters: int = 3
    max_cd_iters: int = 10_000
    tol: float = 1e-7

    def __post_init__(self) -> None:
        if not self.c_mult > 1:
            raise ValueError("c_mult must exceed 1")
        if self.gamma is not None and not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.loading_iters < 0 or self.max_cd_iters < 1:
            raise ValueError("iteration counts must be positive")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")

    def resolve_gamma(self, n: int, p: int) -> float:
        if self.gamma is not None:
            return self.gamma
        return 0.1 / math.log(max(p, n, 3))


@dataclass(frozen=True)
class SolverConfig:
    """LLA outer loop and inner-solver limits shared by stages 2 and 3."""

    tol: float = 1e-6
    max_outer: int = 50
    max_inner: int = 20_000
    inner_tol: float = 1e-9

    def __post_init__(self) -> None:
        if not (self.tol > 0 and self.inner_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_outer < 0 or self.max_inner < 1:
            raise ValueError("iteration limits must be positive")


@dataclass(frozen=True)
class HippoConfig:
    penalty: Penalty = Penalty()
    stage1: Stage1Config = Stage1Config()
    stage2: SolverConfig = SolverConfig()
    stage3: SolverConfig = SolverConfig()

    def with_penalty(self, penalty: Penalty) -> "HippoConfig":
        return replace(self, penalty=penalty)

    def to_dict(self) -> dict[str, Any]:
        return {
            "penalty": self.penalty.to_config(),
            "stage1": asdict(self.stage1),
            "stage2": asdict(self.stage2),
            "stage3": asdict(self.stage3),
        }


_STAGE1_ALIASES = {"loading_iters": "loading_iters", "n_loading_iters": "loading_iters"}


def _pick(cls, block: Mapping[str, Any], aliases: Mapping[str, str] | None = None):
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, val in block.items():
        key = (aliases or {}).get(key, key)
        if key not in names:
            raise ValueError(f"unknown key {key!r} for {cls.__name__}")
        kwargs[key] = val
    return cls(**kwargs)


def config_from_mapping(raw: Mapping[str, Any]) -> tuple[HippoConfig, dict[str, Any]]:
    """Build a :class:`HippoConfig`; unrecognized top-level blocks are returned as extras."""
    cfg = HippoConfig(
        penalty=Penalty.from_config(raw.get("penalty", {})),
        stage1=_pick(Stage1Config, raw.get("stage1", {}), _STAGE1_ALIASES),
        stage2=_pick(SolverConfig, raw.get("stage2", {})),
        stage3=_pick(SolverConfig, raw.get("stage3", {})),
    )
    extras = {k: v for k, v in raw.items() if k not in {"penalty", "stage1", "stage2", "stage3"}}
    return cfg, extras


def load_config(path: str | Path) -> tuple[HippoConfig, dict[str, Any]]:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        raw = json.loads(text)
    else:
        raw = tomllib.loads(text)
    return config_from_mapping(raw)
