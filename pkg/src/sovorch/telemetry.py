"""Synthetic telemetry streams, the ingestion pipeline and the state estimator.

Parameters are addressed by the ids of :meth:`TelemetrySnapshot.parameter_ids`
(``site/S1/carbon_intensity``, ``link/S1/S2/delay``). Ingestion aligns the
latest reading of every parameter to the cycle timestamp and applies the
freshness policy: a reading older than its ``tau_max`` is replaced according
to the parameter's tier.
"""

from __future__ import annotations

import bisect
import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .model import Confidence, SchemaError, TelemetrySnapshot

DAY_S = 86400.0
HOUR_S = 3600.0


class Domain(str, enum.Enum):
    POWER = "Power"
    CARBON = "Carbon"
    WATER = "Water"
    NETWORK = "Network"
    WORKLOAD = "Workload"


class Tier(str, enum.Enum):
    FORECAST_SUBSTITUTE = "ForecastSubstitute"
    CONSERVATIVE_BOUND = "ConservativeBound"
    HOLD = "Hold"


@dataclass(frozen=True, order=True)
class RawReading:
    timestamp: float
    parameter: str
    value: float
    domain: Domain = Domain.POWER
    source: str = ""

    def to_dict(self) -> dict:
        return {"domain": self.domain.value, "parameter": self.parameter,
                "value": self.value, "timestamp": self.timestamp, "source": self.source}

    @classmethod
    def from_dict(cls, d: Mapping, where: str = "reading") -> "RawReading":
        try:
            return cls(float(d["timestamp"]), str(d["parameter"]), float(d["value"]),
                       Domain(d.get("domain", "Power")), str(d.get("source", "")))
        except KeyError as exc:
            raise SchemaError(f"{where}.{exc.args[0]}", "missing field") from None
        except (TypeError, ValueError) as exc:
            raise SchemaError(where, str(exc)) from None


def field_name(pid: str) -> str:
    return pid.rsplit("/", 1)[-1]


# fields whose larger values hurt feasibility
ADVERSE_UP = frozenset({"carbon_intensity", "water_intensity", "delay", "utilization", "alarmed"})
SLOW_FIELDS = frozenset({"water_intensity", "delay"})
FAST_FIELDS = frozenset({"carbon_intensity", "power_cap"})

DOMAIN_OF = {
    "power_cap": Domain.POWER, "onsite_gen": Domain.POWER, "onsite_batt": Domain.POWER,
    "carbon_intensity": Domain.CARBON,
    "water_intensity": Domain.WATER, "water_permit": Domain.WATER,
    "capacity": Domain.NETWORK, "delay": Domain.NETWORK,
    "utilization": Domain.NETWORK, "alarmed": Domain.NETWORK,
}


@dataclass(frozen=True)
class ParameterPolicy:
    tau_max: float  # seconds
    tier: Tier

    def __post_init__(self) -> None:
        if not self.tau_max > 0:
            raise ValueError("tau_max must be > 0")


DEFAULT_POLICIES = {
    "power_cap": ParameterPolicy(120.0, Tier.CONSERVATIVE_BOUND),
    "onsite_gen": ParameterPolicy(120.0, Tier.CONSERVATIVE_BOUND),
    "onsite_batt": ParameterPolicy(120.0, Tier.CONSERVATIVE_BOUND),
    "carbon_intensity": ParameterPolicy(900.0, Tier.FORECAST_SUBSTITUTE),
    "water_intensity": ParameterPolicy(7200.0, Tier.FORECAST_SUBSTITUTE),
    "water_permit": ParameterPolicy(DAY_S, Tier.CONSERVATIVE_BOUND),
    "capacity": ParameterPolicy(300.0, Tier.CONSERVATIVE_BOUND),
    "delay": ParameterPolicy(DAY_S, Tier.FORECAST_SUBSTITUTE),
    "utilization": ParameterPolicy(300.0, Tier.CONSERVATIVE_BOUND),
    "alarmed": ParameterPolicy(120.0, Tier.HOLD),
}


@dataclass(frozen=True)
class FreshnessPolicy:
    by_field: Mapping[str, ParameterPolicy] = field(default_factory=lambda: dict(DEFAULT_POLICIES))
    bound_window: float = HOUR_S  # look-back for the conservative bound
    cycle_seconds: float = 300.0

    def for_param(self, pid: str) -> ParameterPolicy:
        return self.by_field.get(field_name(pid), ParameterPolicy(DAY_S, Tier.HOLD))

    def to_dict(self) -> dict:
        return {"tau_max": {k: v.tau_max for k, v in self.by_field.items()},
                "tier": {k: v.tier.value for k, v in self.by_field.items()},
                "bound_window": self.bound_window, "cycle_seconds": self.cycle_seconds}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FreshnessPolicy":
        pol = dict(DEFAULT_POLICIES)
        for k, tau in d.get("tau_max", {}).items():
            tier = Tier(d.get("tier", {}).get(k, pol.get(k, ParameterPolicy(1, Tier.HOLD)).tier))
            pol[k] = ParameterPolicy(float(tau), tier)
        for k, tier in d.get("tier", {}).items():
            if k not in d.get("tau_max", {}):
                pol[k] = ParameterPolicy(pol.get(k, ParameterPolicy(DAY_S, Tier.HOLD)).tau_max,
                                         Tier(tier))
        return cls(pol, float(d.get("bound_window", HOUR_S)),
                   float(d.get("cycle_seconds", 300.0)))


# --------------------------------------------------------------- storage


class ReadingIndex:
    """Per-parameter time-ordered readings with monotonicity enforcement."""

    def __init__(self, readings: Iterable[RawReading] = ()):
        self._ts: dict[str, list[float]] = {}
        self._vals: dict[str, list[float]] = {}
        self._last: dict[tuple[str, str], float] = {}
        for r in readings:
            self.add(r)

    def add(self, r: RawReading) -> None:
        key = (r.source, r.parameter)
        prev = self._last.get(key)
        if prev is not None and r.timestamp < prev:
            raise ValueError(
                f"reading for {r.parameter} from {r.source or 'unknown source'} goes back "
                f"in time ({r.timestamp} < {prev})")
        self._last[key] = r.timestamp
        ts = self._ts.setdefault(r.parameter, [])
        vals = self._vals.setdefault(r.parameter, [])
        i = bisect.bisect_right(ts, r.timestamp)
        ts.insert(i, r.timestamp)
        vals.insert(i, r.value)

    def parameters(self) -> list[str]:
        return sorted(self._ts)

    def latest(self, pid: str, t: float) -> tuple[float, float] | None:
        ts = self._ts.get(pid)
        if not ts:
            return None
        i = bisect.bisect_right(ts, t)
        if i == 0:
            return None
        return ts[i - 1], self._vals[pid][i - 1]

    def nearest(self, pid: str, t: float, tol: float) -> float | None:
        ts = self._ts.get(pid)
        if not ts:
            return None
        i = bisect.bisect_left(ts, t)
        best = min((k for k in (i - 1, i) if 0 <= k < len(ts)), key=lambda k: abs(ts[k] - t))
        return self._vals[pid][best] if abs(ts[best] - t) <= tol else None

    def window(self, pid: str, t0: float, t1: float) -> list[float]:
        ts = self._ts.get(pid)
        if not ts:
            return []
        i = bisect.bisect_left(ts, t0)
        j = bisect.bisect_right(ts, t1)
        return self._vals[pid][i:j]

    def history(self, pid: str, t: float) -> list[float]:
        return self.window(pid, -math.inf, t)


# -------------------------------------------------------------- ingestion


@dataclass
class IngestReport:
    snapshot: TelemetrySnapshot
    uncertainty: dict[str, float]  # widened half-width for substituted values
    stale: dict[str, str]  # parameter -> tier applied
    hold_reasons: list[str]


def forecast_value(index: ReadingIndex, pid: str, t: float, tol: float = 450.0) -> float | None:
    """Seasonal-naive: the reading a day earlier, else the last observed value."""
    near = index.nearest(pid, t - DAY_S, tol)
    if near is not None:
        return near
    last = index.latest(pid, t)
    return None if last is None else last[1]


def trailing_std(index: ReadingIndex, pid: str, t: float, span: float = DAY_S) -> float:
    vals = index.window(pid, t - span, t)
    return float(np.std(vals)) if len(vals) > 1 else 0.0


def ingest(
    readings: Iterable[RawReading] | ReadingIndex,
    cycle_time: float,
    policy: FreshnessPolicy,
    base: TelemetrySnapshot,
) -> TelemetrySnapshot:
    return ingest_report(readings, cycle_time, policy, base).snapshot


def ingest_report(
    readings: Iterable[RawReading] | ReadingIndex,
    cycle_time: float,
    policy: FreshnessPolicy,
    base: TelemetrySnapshot,
) -> IngestReport:
    """Align readings to ``cycle_time`` on top of ``base`` (topology and static fields)."""
    index = readings if isinstance(readings, ReadingIndex) else ReadingIndex(readings)
    t = float(cycle_time)
    values: dict[str, float] = {}
    conf: dict[str, Confidence] = {}
    unc: dict[str, float] = {}
    stale: dict[str, str] = {}
    holds: list[str] = []
    base_vals = base.param_values()
    for pid in base.parameter_ids():
        pol = policy.for_param(pid)
        last = index.latest(pid, t)
        if last is not None and t - last[0] <= pol.tau_max:
            values[pid] = last[1]
            age = t - last[0]
            conf[pid] = Confidence.FRESH if age <= policy.cycle_seconds else Confidence.INTERPOLATED
            continue
        if last is None:
            # not telemetered yet: static configuration value
            values[pid] = base_vals[pid]
            conf[pid] = Confidence.FRESH
            continue
        stale[pid] = pol.tier.value
        name = field_name(pid)
        if pol.tier is Tier.FORECAST_SUBSTITUTE:
            f = forecast_value(index, pid, t)
            if f is not None:
                values[pid] = f
                conf[pid] = Confidence.FORECAST_SUBSTITUTED
                unc[pid] = trailing_std(index, pid, t)
                continue
        if pol.tier in (Tier.FORECAST_SUBSTITUTE, Tier.CONSERVATIVE_BOUND):
            recent = index.window(pid, t - policy.bound_window, t) or index.history(pid, t)
            if recent:
                values[pid] = max(recent) if name in ADVERSE_UP else min(recent)
                conf[pid] = Confidence.CONSERVATIVE_BOUND
                continue
        values[pid] = last[1] if last is not None else base_vals[pid]
        conf[pid] = Confidence.HOLD
        holds.append(f"{pid} stale beyond {pol.tau_max:g} s with no admissible substitute")
    snap = base.with_params(values, timestamp=t, confidence=conf, hold=bool(holds))
    return IngestReport(snap, unc, stale, holds)


# -------------------------------------------------------------- estimator


class Estimator:
    """Incremental state estimator; ``estimate`` replays a history through one.

    Slow parameters are exponentially smoothed; fast ones pass through.
    Values tagged ForecastSubstituted are moved by their uncertainty in the
    adverse direction. Forecasts are seasonal-naive (same slot a day earlier)
    with persistence as the fallback.
    """

    def __init__(self, horizon_minutes: float = 0.0, cycle_seconds: float = 300.0,
                 smoothing: float = 0.2):
        if not 0.0 < smoothing <= 1.0:
            raise ValueError("smoothing must lie in (0, 1]")
        self.horizon_minutes = float(horizon_minutes)
        self.cycle = float(cycle_seconds)
        self.smoothing = smoothing
        self.smoothed: dict[str, float] = {}
        self._slots: dict[int, dict[str, float]] = {}

    def _slot(self, t: float) -> int:
        return int(round(t / self.cycle))

    def observe(self, snap: TelemetrySnapshot) -> dict[str, float]:
        vals = snap.param_values()
        a = self.smoothing
        for pid, v in vals.items():
            if field_name(pid) in SLOW_FIELDS:
                prev = self.smoothed.get(pid)
                self.smoothed[pid] = v if prev is None else a * v + (1 - a) * prev
        slot = self._slot(snap.timestamp)
        self._slots[slot] = {p: v for p, v in vals.items() if field_name(p) in FAST_FIELDS}
        keep = slot - self._slot(DAY_S) - 1
        for k in [k for k in self._slots if k < keep]:
            del self._slots[k]
        return vals

    def update(self, snap: TelemetrySnapshot,
               uncertainty: Mapping[str, float] | None = None) -> TelemetrySnapshot:
        cur = self.observe(snap)
        values = dict(cur)
        values.update({p: v for p, v in self.smoothed.items() if p in values})
        for pid, c in snap.confidence.items():
            if c is Confidence.FORECAST_SUBSTITUTED:
                w = (uncertainty or {}).get(pid, 0.0)
                values[pid] = (values[pid] + w if field_name(pid) in ADVERSE_UP
                               else max(0.0, values[pid] - w))
        steps = max(0, int(round(self.horizon_minutes * 60.0 / self.cycle)))
        forecasts: dict[str, tuple[float, ...]] = {}
        if steps:
            now = self._slot(snap.timestamp)
            day = self._slot(DAY_S)
            for pid in cur:
                if field_name(pid) not in FAST_FIELDS:
                    continue
                traj = []
                for h in range(1, steps + 1):
                    past = self._slots.get(now + h - day)
                    traj.append(past.get(pid, values[pid]) if past is not None else values[pid])
                forecasts[pid] = tuple(traj)
        return snap.with_params(values, horizon_minutes=self.horizon_minutes,
                                forecasts=forecasts)


def estimate(
    history: Sequence[TelemetrySnapshot],
    horizon_minutes: float,
    cycle_seconds: float = 300.0,
    smoothing: float = 0.2,
    uncertainty: Mapping[str, float] | None = None,
) -> TelemetrySnapshot:
    """Current-state estimate plus forecast trajectories over ``horizon_minutes``."""
    if not history:
        raise ValueError("estimate needs at least one snapshot")
    est = Estimator(horizon_minutes, cycle_seconds, smoothing)
    for snap in history[:-1]:
        est.observe(snap)
    return est.update(history[-1], uncertainty)


def worst_case(snapshot: TelemetrySnapshot) -> TelemetrySnapshot:
    """Snapshot with every forecast parameter at its least favourable value over the horizon."""
    vals = {}
    cur = snapshot.param_values()
    for pid, traj in snapshot.forecasts.items():
        if not traj:
            continue
        vals[pid] = max(cur[pid], *traj) if field_name(pid) in ADVERSE_UP else min(cur[pid], *traj)
    return snapshot.with_params(vals)


# -------------------------------------------------------------- generator


@dataclass(frozen=True)
class StressWindow:
    start: float  # seconds
    end: float
    water_mult: float = 1.0
    permit_mult: float = 1.0
    shape: str = "step"  # or "sine": half-sine peaking mid-window

    def active(self, t: float) -> bool:
        return self.start <= t < self.end

    def ramp(self, t: float) -> float:
        """Stress level in [0, 1]; 0 outside the window."""
        if not self.active(t):
            return 0.0
        if self.shape == "sine":
            return math.sin(math.pi * (t - self.start) / (self.end - self.start))
        return 1.0


@dataclass(frozen=True)
class SiteProfile:
    site: str
    carbon_mean: float
    carbon_amplitude: float = 0.0  # fraction of mean
    carbon_phase_h: float = 0.0
    carbon_noise: float = 0.0  # fraction of mean
    water_base: float = 1.0
    water_seasonal: float = 0.0  # fraction, one-year period
    permit_base: float = 1e9
    power_cap: float = 1000.0
    power_walk: float = 0.0  # step size as a fraction of the cap
    power_floor: float = 0.9  # fraction of cap
    stress: tuple[StressWindow, ...] = ()
    zone: str = ""  # sites sharing a zone share the carbon noise draw


@dataclass(frozen=True)
class LinkProfile:
    src: str
    dst: str
    capacity: float
    delay: float
    utilization: float = 0.0
    utilization_noise: float = 0.0
    alarms: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class StreamSpec:
    sites: tuple[SiteProfile, ...]
    links: tuple[LinkProfile, ...] = ()
    period: Mapping[str, float] = field(default_factory=lambda: {
        "Power": 60.0, "Carbon": 300.0, "Water": 900.0, "Network": 60.0})
    dropouts: tuple[tuple[str, float, float], ...] = ()  # (parameter prefix, start, end)


def generate_stream(
    spec: StreamSpec, horizon_s: float, cycle_s: float = 300.0, seed: int = 0,
    start: float = 0.0,
) -> list[RawReading]:
    """Deterministic readings over ``[start, start + horizon_s]``.

    ``cycle_s`` only caps the reporting period of every domain so each cycle
    sees at least one sample.
    """
    rng = np.random.default_rng(seed)
    out: list[RawReading] = []

    def times(domain: str) -> np.ndarray:
        p = min(spec.period.get(domain, cycle_s), cycle_s)
        return start + np.arange(0.0, horizon_s + 1e-9, p)

    def dropped(pid: str, t: float) -> bool:
        return any(pid.startswith(p) and a <= t < b for p, a, b in spec.dropouts)

    def emit(pid: str, t: float, v: float, dom: Domain, src: str) -> None:
        if not dropped(pid, t):
            out.append(RawReading(float(t), pid, float(v), dom, src))

    zone_noise: dict[tuple[str, float], float] = {}
    for sp in spec.sites:
        pre = f"site/{sp.site}/"
        for t in times("Carbon"):
            phase = 2 * math.pi * ((t / HOUR_S - sp.carbon_phase_h) / 24.0)
            v = sp.carbon_mean * (1 + sp.carbon_amplitude * math.sin(phase))
            if sp.carbon_noise:
                key = (sp.zone or sp.site, float(t))
                if key not in zone_noise:
                    zone_noise[key] = float(rng.standard_normal())
                v *= 1 + sp.carbon_noise * zone_noise[key]
            emit(pre + "carbon_intensity", t, round(max(0.0, v), 3), Domain.CARBON, "grid")
        for t in times("Water"):
            season = 1 + sp.water_seasonal * math.sin(2 * math.pi * t / (365 * DAY_S))
            w_mult = 1.0 + sum((s.water_mult - 1.0) * s.ramp(t) for s in sp.stress)
            p_mult = 1.0 + sum((s.permit_mult - 1.0) * s.ramp(t) for s in sp.stress)
            emit(pre + "water_intensity", t, round(sp.water_base * season * w_mult, 5),
                 Domain.WATER, "bms")
            emit(pre + "water_permit", t, round(sp.permit_base * p_mult, 3), Domain.WATER, "bms")
        level = sp.power_cap
        for t in times("Power"):
            if sp.power_walk:
                level += sp.power_walk * sp.power_cap * rng.standard_normal()
                level = min(sp.power_cap, max(sp.power_floor * sp.power_cap, level))
            emit(pre + "power_cap", t, round(level, 3), Domain.POWER, "redfish")
    for lp in spec.links:
        pre = f"link/{lp.src}/{lp.dst}/"
        for t in times("Network"):
            u = lp.utilization
            if lp.utilization_noise:
                u += lp.utilization_noise * rng.standard_normal()
            alarm = any(a <= t < b for a, b in lp.alarms)
            emit(pre + "capacity", t, lp.capacity, Domain.NETWORK, "gnmi")
            emit(pre + "delay", t, lp.delay, Domain.NETWORK, "gnmi")
            emit(pre + "utilization", t, round(min(1.0, max(0.0, u)), 5), Domain.NETWORK, "gnmi")
            emit(pre + "alarmed", t, 1.0 if alarm else 0.0, Domain.NETWORK, "gnmi")
    out.sort(key=lambda r: (r.timestamp, r.parameter))
    return out


# ------------------------------------------------------------------ NDJSON


def write_ndjson(readings: Iterable[RawReading], fh: IO[str]) -> None:
    for r in readings:
        fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_ndjson(fh: IO[str], name: str = "readings") -> Iterator[RawReading]:
    for n, line in enumerate(fh, 1):
        line = line.strip()
        if not line:
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{name}:{n}", f"invalid JSON ({exc.msg})") from None
        if not isinstance(d, dict):
            raise SchemaError(f"{name}:{n}", "expected an object")
        yield RawReading.from_dict(d, f"{name}:{n}")
