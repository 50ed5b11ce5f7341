"""Scenarios A, B and C and the three-way configuration comparison.

Scenario parameters live in versioned JSON files under ``scenario_specs``.
Every random draw comes from one generator seeded by the scenario seed, so a
(spec, seed) pair always produces the same sites, workloads and telemetry.

Impact is the normalized objective integrated over the horizon:
``sum_k p_k * (alpha * gamma~ + (1 - alpha) * omega~)`` in kWh-equivalents,
with one normalization window per scenario run so configurations compare on
the same scale.
"""

from __future__ import annotations

import copy
import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Any, Mapping, Sequence

import numpy as np

from .formulation import ConstraintClass, FormulationOptions, NormalizationWindow
from .instances import fibre_delay_ms
from .loop import ControlLoop, CycleRecord, LoopConfig, Outcome
from .model import (Link, Placement, SchemaError, Site, TelemetrySnapshot, Workload,
                    WorkloadClass)
from .routing import Graph, path_delay, shortest_path
from .telemetry import (HOUR_S, LinkProfile, ReadingIndex, SiteProfile, StreamSpec,
                        StressWindow, generate_stream)

SCENARIO_IDS = ("A", "B", "C")
SITE_COUNTS = {"A": 5, "B": 8, "C": 6}


class Configuration(str, enum.Enum):
    BASELINE = "Baseline"
    COMPUTE_ONLY = "ComputeOnly"
    JOINT = "Joint"


def load_spec(scenario: str) -> dict:
    if scenario not in SCENARIO_IDS:
        raise SchemaError("scenario", f"unknown scenario {scenario!r}; expected A, B or C")
    text = resources.files("sovorch").joinpath(f"scenario_specs/{scenario}.json").read_text()
    return json.loads(text)


def check_spec(spec: Mapping[str, Any], where: str = "scenario") -> None:
    for key in ("id", "zones", "site_groups", "workloads", "network"):
        if key not in spec:
            raise SchemaError(f"{where}.{key}", "missing field")
    sid = spec["id"]
    if sid not in SCENARIO_IDS:
        raise SchemaError(f"{where}.id", f"unknown scenario {sid!r}")
    n = sum(int(g["count"]) for g in spec["site_groups"])
    if n != SITE_COUNTS[sid]:
        raise SchemaError(f"{where}.site_groups",
                          f"scenario {sid} needs {SITE_COUNTS[sid]} sites, got {n}")
    for i, g in enumerate(spec["site_groups"]):
        if g["zone"] not in spec["zones"]:
            raise SchemaError(f"{where}.site_groups[{i}].zone", f"unknown zone {g['zone']!r}")
    if float(spec.get("cycle_seconds", 300)) <= 0:
        raise SchemaError(f"{where}.cycle_seconds", "must be > 0")
    if not 0.0 <= float(spec.get("alpha", 0.5)) <= 1.0:
        raise SchemaError(f"{where}.alpha", "must lie in [0, 1]")


@dataclass
class Scenario:
    spec: dict
    seed: int
    base: TelemetrySnapshot
    workloads: list[Workload]
    stream: StreamSpec
    zone_of: dict[str, str]
    stressed: list[str]
    stress_windows: list[tuple[float, float]]  # seconds
    demand_center: str

    @property
    def id(self) -> str:
        return self.spec["id"]

    @property
    def cycle_seconds(self) -> float:
        return float(self.spec.get("cycle_seconds", 300))

    @property
    def horizon_seconds(self) -> float:
        return float(self.spec.get("horizon_hours", 168)) * HOUR_S

    @property
    def cycles(self) -> int:
        return int(self.horizon_seconds // self.cycle_seconds)

    def in_stress(self, t: float) -> bool:
        return any(a <= t < b for a, b in self.stress_windows)


def build_scenario(spec: Mapping[str, Any] | str, seed: int = 0,
                   horizon_hours: float | None = None,
                   cycle_seconds: float | None = None) -> Scenario:
    spec = copy.deepcopy(load_spec(spec) if isinstance(spec, str) else dict(spec))
    if horizon_hours is not None:
        spec["horizon_hours"] = float(horizon_hours)
    if cycle_seconds is not None:
        spec["cycle_seconds"] = float(cycle_seconds)
    check_spec(spec)
    rng = np.random.default_rng(seed)

    def u(lo_hi) -> float:
        lo, hi = lo_hi
        return float(rng.uniform(lo, hi)) if hi > lo else float(lo)

    center = np.asarray(spec.get("demand_center_km", [0, 0]), dtype=float)
    zones = spec["zones"]
    raw = []  # (pos, group)
    for g in spec["site_groups"]:
        for _ in range(int(g["count"])):
            r = u(g["radius_km"])
            a = float(rng.uniform(0, 2 * math.pi))
            raw.append((center + r * np.array([math.cos(a), math.sin(a)]), g))
    # renewable-backed sites go to the positions farthest from demand
    ren = spec.get("renewable", {})
    n_ren = int(ren.get("count", 0))
    dist = [float(np.hypot(*(p - center))) for p, _ in raw]
    far = set(np.argsort(dist)[::-1][:n_ren].tolist()) if n_ren else set()
    order = sorted(range(len(raw)), key=lambda i: dist[i])
    ids = {i: f"S{k + 1}" for k, i in enumerate(order)}

    sites: list[Site] = []
    profiles: list[SiteProfile] = []
    zone_of: dict[str, str] = {}
    stressed: list[str] = []
    pos: dict[str, np.ndarray] = {}
    windows = [(float(s["start_h"]) * HOUR_S, float(s["end_h"]) * HOUR_S)
               for s in spec.get("stress", [])]
    for i in order:
        p, g = raw[i]
        sid = ids[i]
        zname = ren["zone"] if i in far else g["zone"]
        z = zones[zname]
        zone_of[sid] = zname
        pos[sid] = p
        cap = round(u(g["power_cap"]), 1)
        cj = float(z.get("site_carbon_jitter", 0.0))
        wj = float(z.get("site_water_jitter", 0.0))
        c_mean = z["carbon_mean"] * (1 + cj * float(rng.uniform(-1, 1)))
        omega = z["water"] * (1 + wj * float(rng.uniform(-1, 1)))
        phase = z.get("carbon_phase_h", 0.0) + float(g.get("phase_jitter_h", 0.0)) * float(
            rng.uniform(-1, 1))
        permit = omega * cap * u(spec.get("permit_factor", [2, 2]))
        gen = cap * float(z.get("onsite_gen_frac", 0.0))
        is_stressed = bool(g.get("stressed", False)) and i not in far
        if is_stressed:
            stressed.append(sid)
        stress = tuple(StressWindow(float(s["start_h"]) * HOUR_S, float(s["end_h"]) * HOUR_S,
                                    float(s.get("water_mult", 1.0)),
                                    float(s.get("permit_mult", 1.0)),
                                    str(s.get("shape", "step")))
                       for s in spec.get("stress", []) if is_stressed)
        sites.append(Site(sid, cap, round(c_mean, 1), round(omega, 4),
                          float(spec.get("carbon_ceiling", 900)), round(permit, 1),
                          region_tag=z.get("region", ""), onsite_gen=round(gen, 1)))
        profiles.append(SiteProfile(
            sid, round(c_mean, 3), float(z.get("carbon_amplitude", 0.0)), phase,
            float(z.get("carbon_noise", 0.0)), round(omega, 5), 0.0, round(permit, 3), cap,
            float(spec.get("power_walk", 0.0)), 0.9, stress,
            zname if z.get("shared_noise", False) else ""))

    net = spec["network"]
    links: list[Link] = []
    lprof: list[LinkProfile] = []
    for a in sites:
        for b in sites:
            if a.id == b.id:
                continue
            km = float(np.hypot(*(pos[a.id] - pos[b.id]))) * float(net.get("stretch", 1.3))
            cap = round(u(net["capacity"]), 1)
            util = round(u(net.get("utilization", [0, 0])), 3)
            d = round(max(0.1, fibre_delay_ms(km)), 3)
            links.append(Link(a.id, b.id, cap, d, float(u(net.get("energy_per_bit", [0, 0]))),
                              util))
            lprof.append(LinkProfile(a.id, b.id, cap, d, util,
                                     float(net.get("utilization_noise", 0.0))))

    wspec = spec["workloads"]
    classes = [WorkloadClass(c) for c in wspec["mix"]]
    probs = np.array([float(wspec["mix"][c.value]) for c in classes])
    probs = probs / probs.sum()
    total_power = sum(s.power_cap for s in sites)
    count = int(wspec["count"])
    mean_power = float(wspec.get("load_factor", 0.3)) * total_power / max(1, count)
    spread = wspec.get("power_spread", [0.3, 1.7])
    if wspec.get("dest", "any") == "near":
        radius = float(wspec.get("dest_radius_km", 300))
        dests = [s.id for s in sites if float(np.hypot(*(pos[s.id] - center))) <= radius
                 and zone_of[s.id] != ren.get("zone")]
    else:
        dests = [s.id for s in sites]
    center_site = min(sites, key=lambda s: float(np.hypot(*(pos[s.id] - center)))).id
    # fixed class quota keeps every seed's mix close to the configured shares
    quota = np.floor(probs * count).astype(int)
    while quota.sum() < count:
        quota[int(np.argmax(probs * count - quota))] += 1
    draw = [c for c, q in zip(classes, quota) for _ in range(int(q))]
    rng.shuffle(draw)
    workloads: list[Workload] = []
    for k, cls in enumerate(draw):
        dest = dests[int(rng.integers(len(dests)))]
        power = round(mean_power * u(spread), 1)
        traffic = round(u(wspec["traffic"]), 2)
        state = round(u(wspec["state_gb"].get(cls.value, [0, 0])), 2)
        rh = round(u(wspec.get("rehydration_ms", [0, 0])), 2)
        if cls is WorkloadClass.INFERENCE:
            slo = round(u(wspec["inference_slo_ms"]), 2)
            workloads.append(Workload(f"w{k + 1}", power, slo, traffic, True, dest, cls,
                                      state, rh))
        else:
            workloads.append(Workload(f"w{k + 1}", power, None, traffic,
                                      cls is not WorkloadClass.TRAINING, dest, cls, state, rh))
    base = TelemetrySnapshot(0.0, tuple(sites), tuple(links))
    stream = StreamSpec(tuple(profiles), tuple(lprof))
    return Scenario(spec, seed, base, workloads, stream, zone_of, stressed, windows,
                    center_site)


# ------------------------------------------------------------ evaluation


def configuration_options(config: Configuration) -> tuple[FormulationOptions, bool]:
    """Formulation options and whether the twin loop is used."""
    if config is Configuration.BASELINE:
        return FormulationOptions(objective="latency", drop_classes=frozenset(
            {ConstraintClass.CARBON_GATE, ConstraintClass.WATER_CAP})), False
    if config is Configuration.COMPUTE_ONLY:
        return FormulationOptions(network_free=True), False
    return FormulationOptions(include_transport=True), True


def route_check(snapshot: TelemetrySnapshot, workloads: Sequence[Workload],
                placement: Placement | None, graph: Graph | None = None
                ) -> tuple[dict[str, float], list[str]]:
    """Latency per workload on the true graph and the workloads in SLO violation.

    Placements that carry path flows are measured on those paths; otherwise
    traffic follows the shortest-delay path, which is how a routing layer that
    treats paths as equivalent would carry it.
    """
    if placement is None:
        return {}, []
    graph = graph or Graph.from_snapshot(snapshot)
    lat: dict[str, float] = {}
    bad: set[str] = set()
    load: dict[tuple[str, str], float] = {}
    users: dict[tuple[str, str], list[str]] = {}
    for w in workloads:
        sid = placement.assignment.get(w.id)
        if sid is None:
            continue
        if sid == w.dest or w.traffic <= 0:
            lat[w.id] = 0.0
            continue
        paths = placement.path_flows.get(w.id)
        if not paths:
            p = shortest_path(graph, sid, w.dest)
            if p is None:
                lat[w.id] = math.inf
                bad.add(w.id)
                continue
            paths = ((tuple(p), w.traffic),)
        worst = 0.0
        for path, f in paths:
            try:
                worst = max(worst, path_delay(path, graph))
            except ValueError:
                worst = math.inf
            for e in zip(path, path[1:]):
                load[e] = load.get(e, 0.0) + f
                users.setdefault(e, []).append(w.id)
        lat[w.id] = worst
        if w.latency_slo is not None and worst > w.latency_slo + 1e-9:
            bad.add(w.id)
    for e, v in load.items():
        link = graph.edges.get(e)
        if link is None or v > link.residual_capacity + 1e-7:
            bad.update(users[e])
    return lat, sorted(bad)


def impact_rate(snapshot: TelemetrySnapshot, workloads: Sequence[Workload],
                assignment: Mapping[str, str], window: NormalizationWindow,
                alpha: float) -> float:
    sites = {s.id: s for s in snapshot.sites}
    total = 0.0
    for w in workloads:
        s = sites.get(assignment.get(w.id, ""))
        if s is not None:
            total += w.power * (alpha * window.gamma(s.effective_carbon)
                                + (1 - alpha) * window.omega(s.water_intensity))
    return total


def scenario_window(scn: Scenario, readings) -> NormalizationWindow:
    """Min/max of effective carbon and water intensity over the whole stream."""
    idx = readings if isinstance(readings, ReadingIndex) else ReadingIndex(readings)
    g, w = [], []
    for s in scn.base.sites:
        covered = max(0.0, 1.0 - (s.onsite_gen + s.onsite_batt) / s.power_cap)
        g += [v * covered for v in idx.history(f"site/{s.id}/carbon_intensity", math.inf)]
        w += idx.history(f"site/{s.id}/water_intensity", math.inf)
    if not g:
        return NormalizationWindow.from_sites(scn.base.sites)
    return NormalizationWindow(min(g), max(g), min(w), max(w))


@dataclass
class RunResult:
    scenario: str
    configuration: Configuration
    seed: int
    cumulative_carbon: float = 0.0
    cumulative_water: float = 0.0
    impact: float = 0.0
    slo_violations: int = 0
    infeasible_cycles: int = 0
    infeasible_in_stress: int = 0
    infeasible_outside_stress: int = 0
    hold_cycles: int = 0
    alert_cycles: int = 0
    certificates: list[dict] = field(default_factory=list)
    mean_latency: dict[str, float] = field(default_factory=dict)
    trace: list[dict] = field(default_factory=list)
    invariant_failures: list[str] = field(default_factory=list)

    def row(self) -> dict:
        return {
            "scenario": self.scenario, "configuration": self.configuration.value,
            "seed": self.seed, "cumulative_carbon_g": round(self.cumulative_carbon, 3),
            "cumulative_water_l": round(self.cumulative_water, 3),
            "impact": round(self.impact, 6), "slo_violations": self.slo_violations,
            "infeasible_cycles": self.infeasible_cycles,
            "infeasible_in_stress": self.infeasible_in_stress,
            "infeasible_outside_stress": self.infeasible_outside_stress,
            "hold_cycles": self.hold_cycles, "alert_cycles": self.alert_cycles,
            **{f"latency_{k}": round(v, 6) for k, v in sorted(self.mean_latency.items())},
        }


def run_configuration(
    scn: Scenario,
    config: Configuration,
    readings: ReadingIndex | None = None,
    window: NormalizationWindow | None = None,
    budget_secs: float = 300.0,
    certificates: bool = True,
    keep_trace: bool = True,
    log=None,
    on_certificate=None,
) -> RunResult:
    idx = readings or ReadingIndex(generate_stream(scn.stream, scn.horizon_seconds,
                                                   scn.cycle_seconds, scn.seed))
    window = window or scenario_window(scn, idx)
    alpha = float(scn.spec.get("alpha", 0.5))
    options, twin = configuration_options(config)
    cfg = LoopConfig(alpha=alpha, cycle_seconds=scn.cycle_seconds, budget_secs=budget_secs,
                     options=options, window=window, twin=twin,
                     certificates=certificates and config is Configuration.JOINT)
    loop = ControlLoop(scn.base, scn.workloads, idx, cfg, log=log, alerts=None,
                       on_certificate=on_certificate)
    res = RunResult(scn.id, config, scn.seed)
    lat_sum: dict[str, float] = {}
    lat_n: dict[str, int] = {}
    hours = scn.cycle_seconds / HOUR_S
    cls_of = {w.id: w.cls.value for w in scn.workloads}
    for k in range(scn.cycles):
        t = k * scn.cycle_seconds
        rec = loop.run_cycle(t)
        snap = loop.last_snapshot
        placement = loop.plant.placement
        lat, bad = route_check(snap, scn.workloads, placement)
        res.slo_violations += len(bad)
        rate = impact_rate(snap, scn.workloads, loop.plant.assignment, window, alpha)
        res.impact += rate * hours
        for wid, v in lat.items():
            c = cls_of[wid]
            lat_sum[c] = lat_sum.get(c, 0.0) + v
            lat_n[c] = lat_n.get(c, 0) + 1
        if rec.outcome is Outcome.RETAINED_WITH_CERTIFICATE:
            res.infeasible_cycles += 1
            if scn.in_stress(t):
                res.infeasible_in_stress += 1
            else:
                res.infeasible_outside_stress += 1
            if rec.certificate is not None:
                res.certificates.append(rec.certificate)
        elif rec.outcome is Outcome.HOLD:
            res.hold_cycles += 1
        elif rec.outcome is Outcome.RETAINED_WITH_ALERT:
            res.alert_cycles += 1
        if keep_trace:
            res.trace.append({
                "scenario": scn.id, "configuration": config.value, "seed": scn.seed,
                "cycle": k, "timestamp": t, "outcome": rec.outcome.value,
                "carbon_rate": round(rec.carbon_rate, 6), "water_rate": round(rec.water_rate, 6),
                "impact_rate": round(rate, 9), "slo_violations": len(bad),
                "in_stress": scn.in_stress(t),
            })
    res.cumulative_carbon = loop.plant.cumulative_carbon
    res.cumulative_water = loop.plant.cumulative_water
    res.mean_latency = {c: lat_sum[c] / lat_n[c] for c in sorted(lat_sum)}
    return res


@dataclass
class ComparativeReport:
    results: list[RunResult]

    def sorted(self) -> list[RunResult]:
        order = {c: i for i, c in enumerate(Configuration)}
        return sorted(self.results, key=lambda r: (r.scenario, order[r.configuration], r.seed))

    def get(self, scenario: str, config: Configuration, seed: int) -> RunResult:
        for r in self.results:
            if r.scenario == scenario and r.configuration is config and r.seed == seed:
                return r
        raise KeyError((scenario, config, seed))

    def to_csv(self) -> str:
        rows = [r.row() for r in self.sorted()]
        cols: list[str] = []
        for r in rows:
            cols += [k for k in r if k not in cols]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"runs": [dict(r.row(), certificates=r.certificates,
                              invariant_failures=r.invariant_failures) for r in self.sorted()],
                "orderings": orderings(self)}

    def plot_data(self) -> str:
        rows = [row for r in self.sorted() for row in r.trace]
        if not rows:
            return ""
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()


def run_scenario(scenario: str | Mapping[str, Any], seeds: Sequence[int] = (0,),
                 configurations: Sequence[Configuration] = tuple(Configuration),
                 horizon_hours: float | None = None, cycle_seconds: float | None = None,
                 budget_secs: float = 300.0, keep_trace: bool = True,
                 on_certificate=None) -> ComparativeReport:
    results = []
    for seed in seeds:
        scn = build_scenario(scenario, seed, horizon_hours, cycle_seconds)
        idx = ReadingIndex(generate_stream(scn.stream, scn.horizon_seconds, scn.cycle_seconds,
                                           seed))
        window = scenario_window(scn, idx)
        for config in configurations:
            results.append(run_configuration(scn, config, idx, window, budget_secs,
                                             keep_trace=keep_trace,
                                             on_certificate=on_certificate))
    return ComparativeReport(results)


def orderings(report: ComparativeReport, tolerance: float = 0.05) -> dict[str, dict]:
    """The qualitative orderings each scenario must show, per seed."""
    out: dict[str, dict] = {}
    by = {(r.scenario, r.configuration, r.seed): r for r in report.results}
    seeds = sorted({r.seed for r in report.results})
    for scn in sorted({r.scenario for r in report.results}):
        checks: dict[str, list[bool]] = {}

        def add(name: str, ok: bool) -> None:
            checks.setdefault(name, []).append(bool(ok))

        for s in seeds:
            j = by.get((scn, Configuration.JOINT, s))
            c = by.get((scn, Configuration.COMPUTE_ONLY, s))
            b = by.get((scn, Configuration.BASELINE, s))
            if j is not None:
                add("joint_zero_slo_violations", j.slo_violations == 0)
            if j is not None and b is not None:
                add("joint_impact_le_baseline", j.impact <= b.impact * (1 + 1e-9))
            if scn == "B" and j is not None and b is not None:
                add("inference_latency_not_worse",
                    j.mean_latency.get("Inference", 0.0)
                    <= b.mean_latency.get("Inference", 0.0) + 1e-9)
            if scn == "A" and j is not None and c is not None:
                rel = abs(j.impact - c.impact) / max(abs(c.impact), 1e-12)
                add("joint_compute_only_within_tolerance", rel <= tolerance)
            if scn == "B" and j is not None and c is not None and b is not None:
                add("compute_only_slo_violations", c.slo_violations >= 1)
                add("joint_impact_lt_baseline", j.impact < b.impact)
            if scn == "C" and j is not None:
                add("infeasible_inside_stress", j.infeasible_in_stress >= 1)
                add("feasible_outside_stress", j.infeasible_outside_stress == 0)
                add("certificates_name_water",
                    bool(j.certificates) and all(
                        any(g["class"] == "WaterCap" for g in cert["groups"])
                        for cert in j.certificates))
        out[scn] = {k: {"passed": all(v), "per_seed": v} for k, v in checks.items()}
    return out
