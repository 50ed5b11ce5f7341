"""Digital-twin checks and the simulated plant.

The twin consumes the same snapshot the optimizer saw. Its checks are
deliberately stricter than the MILP rows: cooling and UPS headroom are not
modelled by the formulation at all, and the congestion threshold sits below
the residual capacity the routing rows allow.
"""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .formulation import migration_carbon, path_energy_per_bit
from .model import Placement, TelemetrySnapshot, Workload
from .routing import Graph


class Check(str, enum.Enum):
    THERMAL = "ThermalMargin"
    POWER = "PowerStability"
    NETWORK = "NetworkCongestion"
    POLICY = "PolicyCompliance"


@dataclass(frozen=True)
class TwinThresholds:
    congestion: float = 0.9  # max post-placement link utilization
    ambient_derating: Mapping[str, float] = field(default_factory=dict)  # site -> factor
    region_allowances: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 < self.congestion <= 1.0:
            raise ValueError("congestion threshold must lie in (0, 1]")

    def allowed_tags(self, region: str) -> set[str]:
        if region in self.region_allowances:
            return set(self.region_allowances[region])
        return {region, f"{region}-only"} if region else set()

    def to_dict(self) -> dict:
        return {"congestion": self.congestion, "ambient_derating": dict(self.ambient_derating),
                "region_allowances": {k: list(v) for k, v in self.region_allowances.items()}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TwinThresholds":
        return cls(float(d.get("congestion", 0.9)),
                   {k: float(v) for k, v in d.get("ambient_derating", {}).items()},
                   {k: tuple(v) for k, v in d.get("region_allowances", {}).items()})


@dataclass(frozen=True)
class TwinVerdict:
    failures: Mapping[Check, tuple[str, ...]]
    # partial assignment patterns the loop turns into no-good cuts
    patterns: tuple[Mapping[str, str], ...] = ()

    def ok(self, check: Check) -> bool:
        return not self.failures.get(check)

    @property
    def passed(self) -> bool:
        return all(self.ok(c) for c in Check)

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "checks": {c.value: self.ok(c) for c in Check},
                "failing": {c.value: list(v) for c, v in self.failures.items() if v}}


def site_loads(placement: Placement, workloads: Sequence[Workload]) -> dict[str, float]:
    load: dict[str, float] = defaultdict(float)
    for w in workloads:
        sid = placement.assignment.get(w.id)
        if sid is not None:
            load[sid] += w.power
    return dict(load)


def link_utilization(placement: Placement, snapshot: TelemetrySnapshot) -> dict[tuple[str, str], float]:
    """Background plus placed traffic as a fraction of link capacity."""
    extra: dict[tuple[str, str], float] = defaultdict(float)
    for (a, b, _), v in placement.flows.items():
        extra[(a, b)] += v
    out = {}
    for l in snapshot.links:
        cap = l.capacity
        out[l.key] = (l.utilization * cap + extra.get(l.key, 0.0)) / cap if cap > 0 else 0.0
    return out


def validate(
    placement: Placement,
    snapshot: TelemetrySnapshot,
    workloads: Sequence[Workload],
    thresholds: TwinThresholds | None = None,
) -> TwinVerdict:
    th = thresholds or TwinThresholds()
    fails: dict[Check, list[str]] = {c: [] for c in Check}
    patterns: list[dict[str, str]] = []
    x = placement.assignment
    load = site_loads(placement, workloads)
    for s in snapshot.sites:
        p = load.get(s.id, 0.0)
        on_site = {w.id: s.id for w in workloads if x.get(w.id) == s.id}
        if s.thermal_cooling_cap is not None:
            limit = s.thermal_cooling_cap * th.ambient_derating.get(s.id, 1.0)
            if p > limit + 1e-9:
                fails[Check.THERMAL].append(f"{s.id}: {p:g} kW > cooling {limit:g} kW")
                patterns.append(on_site)
        if s.ups_headroom_frac > 0 and s.power_cap - p < s.ups_headroom_frac * s.power_cap - 1e-9:
            fails[Check.POWER].append(
                f"{s.id}: headroom {s.power_cap - p:g} kW < {s.ups_headroom_frac:g} x {s.power_cap:g}")
            patterns.append(on_site)
    for key, u in sorted(link_utilization(placement, snapshot).items()):
        if u > th.congestion + 1e-9:
            fails[Check.NETWORK].append(f"{key[0]}->{key[1]}: utilization {u:.3f} > {th.congestion:g}")
            patterns.append(dict(x))
    regions = {s.id: s.region_tag for s in snapshot.sites}
    for w in workloads:
        sid = x.get(w.id)
        if sid is None or not w.locality_tags:
            continue
        missing = set(w.locality_tags) - th.allowed_tags(regions.get(sid, ""))
        if missing:
            fails[Check.POLICY].append(
                f"{w.id} at {sid} (region '{regions.get(sid, '')}'): tags {sorted(missing)} not allowed")
            patterns.append({w.id: sid})
    uniq: list[dict[str, str]] = []
    for p in patterns:
        if p and p not in uniq:
            uniq.append(p)
    return TwinVerdict({c: tuple(v) for c, v in fails.items()}, tuple(uniq))


# ------------------------------------------------------------------ plant


@dataclass(frozen=True)
class PlantState:
    """What the simulated plant is running and what it has emitted so far.

    Instances are immutable, so ``execute`` swaps compute assignment and
    network flows in one step; no caller can observe a half-applied action.
    """

    placement: Placement | None = None
    power_draw: Mapping[str, float] = field(default_factory=dict)  # kW
    water_draw: Mapping[str, float] = field(default_factory=dict)  # L/h
    link_util: Mapping[tuple[str, str], float] = field(default_factory=dict)
    cumulative_carbon: float = 0.0  # g
    cumulative_water: float = 0.0  # L
    migration_carbon: float = 0.0  # g, included in cumulative_carbon

    @property
    def assignment(self) -> dict[str, str]:
        return dict(self.placement.assignment) if self.placement else {}


def measure(placement: Placement | None, snapshot: TelemetrySnapshot,
            workloads: Sequence[Workload]) -> tuple[dict, dict, dict, float, float]:
    """Power and water draw per site, link utilization, carbon rate g/h, water rate L/h."""
    if placement is None:
        return {}, {}, {}, 0.0, 0.0
    sites = {s.id: s for s in snapshot.sites}
    power = site_loads(placement, workloads)
    water = {sid: sites[sid].water_intensity * p for sid, p in power.items() if sid in sites}
    carbon_rate = sum(sites[sid].effective_carbon * p for sid, p in power.items() if sid in sites)
    return (power, water, link_utilization(placement, snapshot), carbon_rate,
            sum(water.values()))


def migration_grams(before: Mapping[str, str], after: Mapping[str, str],
                    snapshot: TelemetrySnapshot, workloads: Sequence[Workload]) -> float:
    graph = Graph.from_snapshot(snapshot)
    sites = {s.id: s for s in snapshot.sites}
    total = 0.0
    for w in workloads:
        a, b = before.get(w.id), after.get(w.id)
        if a is None or b is None or a == b or w.state_size <= 0 or a not in sites:
            continue
        total += migration_carbon(sites[a], path_energy_per_bit(graph, a, b), w.state_size)
    return total


def execute(placement: Placement, plant: PlantState, snapshot: TelemetrySnapshot,
            workloads: Sequence[Workload]) -> PlantState:
    """Apply a validated placement; migration carbon is charged once per move."""
    mig = migration_grams(plant.assignment, placement.assignment, snapshot, workloads)
    power, water, util, _, _ = measure(placement, snapshot, workloads)
    return replace(plant, placement=placement, power_draw=power, water_draw=water,
                   link_util=util, cumulative_carbon=plant.cumulative_carbon + mig,
                   migration_carbon=plant.migration_carbon + mig)


def advance(plant: PlantState, snapshot: TelemetrySnapshot, workloads: Sequence[Workload],
            seconds: float) -> tuple[PlantState, float, float]:
    """Run the current placement for ``seconds``; returns the state and the g/h, L/h rates."""
    power, water, util, c_rate, w_rate = measure(plant.placement, snapshot, workloads)
    hours = seconds / 3600.0
    return (replace(plant, power_draw=power, water_draw=water, link_util=util,
                    cumulative_carbon=plant.cumulative_carbon + c_rate * hours,
                    cumulative_water=plant.cumulative_water + w_rate * hours),
            c_rate, w_rate)
