"""Run configuration, loaded from a JSON file.

Unknown keys are rejected so that a typo in a threshold name cannot silently
fall back to a default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .loop import LoopConfig
from .model import SchemaError
from .telemetry import FreshnessPolicy, Tier
from .twin import TwinThresholds

KEYS = {"alpha", "cycle_seconds", "horizon_minutes", "budget_secs", "retry_limit",
        "smoothing", "freshness", "twin", "seeds"}


@dataclass(frozen=True)
class Config:
    alpha: float = 0.5
    cycle_seconds: float = 300.0
    horizon_minutes: float = 30.0  # forecast horizon for the estimate phase
    budget_secs: float = 300.0
    retry_limit: int = 5
    smoothing: float = 0.2
    freshness: FreshnessPolicy = field(default_factory=FreshnessPolicy)
    twin: TwinThresholds = field(default_factory=TwinThresholds)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise SchemaError("alpha", f"must lie in [0, 1], got {self.alpha:g}")
        if self.budget_secs <= 0:
            raise SchemaError("budget_secs", f"must be positive, got {self.budget_secs:g}")
        if self.cycle_seconds <= 0:
            raise SchemaError("cycle_seconds", f"must be positive, got {self.cycle_seconds:g}")
        if self.horizon_minutes < 0:
            raise SchemaError("horizon_minutes", "must be non-negative")
        if self.retry_limit < 0:
            raise SchemaError("retry_limit", "must be non-negative")
        if not 0.0 < self.smoothing <= 1.0:
            raise SchemaError("smoothing", "must lie in (0, 1]")
        if not self.seeds:
            raise SchemaError("seeds", "at least one seed required")

    def loop_config(self, **changes: Any) -> LoopConfig:
        policy = replace(self.freshness, cycle_seconds=self.cycle_seconds)
        base = LoopConfig(alpha=self.alpha, cycle_seconds=self.cycle_seconds,
                          horizon_minutes=self.horizon_minutes, budget_secs=self.budget_secs,
                          retry_limit=self.retry_limit, smoothing=self.smoothing,
                          policy=policy, thresholds=self.twin)
        return replace(base, **changes)

    def with_overrides(self, alpha: float | None = None, budget_secs: float | None = None,
                       seed: int | None = None) -> "Config":
        c = self
        if alpha is not None:
            c = replace(c, alpha=float(alpha))
        if budget_secs is not None:
            c = replace(c, budget_secs=float(budget_secs))
        if seed is not None:
            c = replace(c, seeds=(int(seed),))
        return c

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "cycle_seconds": self.cycle_seconds,
                "horizon_minutes": self.horizon_minutes, "budget_secs": self.budget_secs,
                "retry_limit": self.retry_limit, "smoothing": self.smoothing,
                "freshness": self.freshness.to_dict(), "twin": self.twin.to_dict(),
                "seeds": list(self.seeds)}

    @classmethod
    def from_dict(cls, d: Any, where: str = "config") -> "Config":
        if not isinstance(d, Mapping):
            raise SchemaError(where, "expected a JSON object")
        extra = sorted(set(d) - KEYS)
        if extra:
            raise SchemaError(f"{where}.{extra[0]}", "unknown key")
        kw: dict[str, Any] = {}
        for key in ("alpha", "cycle_seconds", "horizon_minutes", "budget_secs", "smoothing"):
            if key in d:
                kw[key] = _number(d[key], f"{where}.{key}")
        if "retry_limit" in d:
            v = d["retry_limit"]
            if isinstance(v, bool) or not isinstance(v, int):
                raise SchemaError(f"{where}.retry_limit", "expected an integer")
            kw["retry_limit"] = v
        if "seeds" in d:
            seeds = d["seeds"]
            if not isinstance(seeds, list) or not all(
                    isinstance(s, int) and not isinstance(s, bool) for s in seeds):
                raise SchemaError(f"{where}.seeds", "expected a list of integers")
            kw["seeds"] = tuple(seeds)
        if "freshness" in d:
            kw["freshness"] = _freshness(d["freshness"], f"{where}.freshness")
        if "twin" in d:
            kw["twin"] = _twin(d["twin"], f"{where}.twin")
        try:
            return cls(**kw)
        except SchemaError as e:
            raise SchemaError(f"{where}.{e.field}", e.message) from None


def _number(v: Any, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(where, "expected a number")
    return float(v)


def _freshness(d: Any, where: str) -> FreshnessPolicy:
    if not isinstance(d, Mapping):
        raise SchemaError(where, "expected a JSON object")
    for key in ("tau_max", "tier"):
        sub = d.get(key, {})
        if not isinstance(sub, Mapping):
            raise SchemaError(f"{where}.{key}", "expected a JSON object")
        for name, v in sub.items():
            if key == "tau_max" and _number(v, f"{where}.tau_max.{name}") <= 0:
                raise SchemaError(f"{where}.tau_max.{name}", "must be positive")
            if key == "tier" and v not in {t.value for t in Tier}:
                raise SchemaError(f"{where}.tier.{name}",
                                  f"unknown tier {v!r}; expected one of {[t.value for t in Tier]}")
    if "bound_window" in d and _number(d["bound_window"], f"{where}.bound_window") <= 0:
        raise SchemaError(f"{where}.bound_window", "must be positive")
    return FreshnessPolicy.from_dict(d)


def _twin(d: Any, where: str) -> TwinThresholds:
    if not isinstance(d, Mapping):
        raise SchemaError(where, "expected a JSON object")
    if "congestion" in d:
        c = _number(d["congestion"], f"{where}.congestion")
        if not 0.0 < c <= 1.0:
            raise SchemaError(f"{where}.congestion", "must lie in (0, 1]")
    for site, v in d.get("ambient_derating", {}).items():
        if _number(v, f"{where}.ambient_derating.{site}") <= 0:
            raise SchemaError(f"{where}.ambient_derating.{site}", "must be positive")
    for region, tags in d.get("region_allowances", {}).items():
        if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
            raise SchemaError(f"{where}.region_allowances.{region}", "expected a list of strings")
    return TwinThresholds.from_dict(d)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except OSError as e:
        raise SchemaError(str(p), f"cannot read: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise SchemaError(str(p), f"invalid JSON at line {e.lineno}: {e.msg}") from None
    return Config.from_dict(doc, where=p.name)
