"""Domain types shared by every other module.

All types are frozen dataclasses. JSON field names follow the on-disk schema
documented in ``docs/schema.md``; a latency SLO without a bound is stored as
``None`` in memory and as the string ``"unbounded"`` on disk.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

UNBOUNDED = "unbounded"

SITE_PARAMS = (
    "power_cap",
    "carbon_intensity",
    "water_intensity",
    "water_permit",
    "onsite_gen",
    "onsite_batt",
)
LINK_PARAMS = ("capacity", "delay", "utilization", "alarmed")


class SchemaError(ValueError):
    """Malformed input document; ``field`` names the offending path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class WorkloadClass(str, enum.Enum):
    TRAINING = "Training"
    INFERENCE = "Inference"
    BATCH = "Batch"


class Confidence(str, enum.Enum):
    FRESH = "Fresh"
    INTERPOLATED = "Interpolated"
    FORECAST_SUBSTITUTED = "ForecastSubstituted"
    CONSERVATIVE_BOUND = "ConservativeBound"
    HOLD = "Hold"


@dataclass(frozen=True)
class Site:
    id: str
    power_cap: float  # kW
    carbon_intensity: float  # gCO2eq/kWh
    water_intensity: float  # L/kWh
    carbon_ceiling: float  # gCO2eq/kWh
    water_permit: float  # L/h
    thermal_cooling_cap: float | None = None  # kW, None = no limit
    ups_headroom_frac: float = 0.0
    region_tag: str = ""
    onsite_gen: float = 0.0  # kW
    onsite_batt: float = 0.0  # kW

    @property
    def effective_carbon(self) -> float:
        """Grid intensity prorated by the share of power covered on site."""
        if self.power_cap <= 0:
            return self.carbon_intensity
        covered = (self.onsite_gen + self.onsite_batt) / self.power_cap
        return self.carbon_intensity * max(0.0, 1.0 - covered)


@dataclass(frozen=True)
class Link:
    src: str
    dst: str
    capacity: float  # Gbps
    delay: float  # ms, one way
    energy_per_bit: float = 0.0  # J/bit
    utilization: float = 0.0  # background load fraction
    alarmed: bool = False

    @property
    def key(self) -> tuple[str, str]:
        return (self.src, self.dst)

    @property
    def residual_capacity(self) -> float:
        return self.capacity * (1.0 - self.utilization)


@dataclass(frozen=True)
class Workload:
    id: str
    power: float  # kW
    latency_slo: float | None  # ms one way; None = unbounded
    traffic: float  # Gbps
    portable: bool
    dest: str
    cls: WorkloadClass = WorkloadClass.BATCH
    state_size: float = 0.0  # GB
    rehydration: float = 0.0  # ms
    rehydration_by_site: tuple[tuple[str, float], ...] = ()
    locality_tags: tuple[str, ...] = ()

    @property
    def bounded(self) -> bool:
        return self.latency_slo is not None

    def rehydration_at(self, site_id: str) -> float:
        for sid, ms in self.rehydration_by_site:
            if sid == site_id:
                return ms
        return self.rehydration


def site_param(site_id: str, name: str) -> str:
    return f"site/{site_id}/{name}"


def link_param(src: str, dst: str, name: str) -> str:
    return f"link/{src}/{dst}/{name}"


@dataclass(frozen=True)
class TelemetrySnapshot:
    """Parameter vector for one control cycle.

    ``confidence`` holds one tag per telemetry parameter; missing tags are
    filled with ``Fresh`` on construction. ``forecasts`` maps a parameter id to
    its predicted trajectory over the next ``horizon_minutes``.
    """

    timestamp: float
    sites: tuple[Site, ...]
    links: tuple[Link, ...] = ()
    confidence: Mapping[str, Confidence] = field(default_factory=dict)
    horizon_minutes: float = 0.0
    forecasts: Mapping[str, tuple[float, ...]] = field(default_factory=dict)
    hold: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "sites", tuple(self.sites))
        object.__setattr__(self, "links", tuple(self.links))
        conf = {p: Confidence.FRESH for p in self.parameter_ids()}
        conf.update({k: Confidence(v) for k, v in dict(self.confidence).items()})
        object.__setattr__(self, "confidence", conf)
        object.__setattr__(
            self, "forecasts", {k: tuple(v) for k, v in dict(self.forecasts).items()}
        )

    def site(self, site_id: str) -> Site:
        for s in self.sites:
            if s.id == site_id:
                return s
        raise KeyError(site_id)

    @property
    def site_ids(self) -> list[str]:
        return [s.id for s in self.sites]

    def link(self, src: str, dst: str) -> Link | None:
        for l in self.links:
            if l.src == src and l.dst == dst:
                return l
        return None

    def parameter_ids(self) -> list[str]:
        ids = [site_param(s.id, n) for s in self.sites for n in SITE_PARAMS]
        ids += [link_param(l.src, l.dst, n) for l in self.links for n in LINK_PARAMS]
        return ids

    def param_values(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for s in self.sites:
            for n in SITE_PARAMS:
                out[site_param(s.id, n)] = float(getattr(s, n))
        for l in self.links:
            for n in LINK_PARAMS:
                out[link_param(l.src, l.dst, n)] = float(getattr(l, n))
        return out

    def with_params(self, values: Mapping[str, float], **changes: Any) -> "TelemetrySnapshot":
        """Copy with telemetry parameters overwritten by ``values``."""
        site_upd: dict[str, dict[str, float]] = {}
        link_upd: dict[tuple[str, str], dict[str, Any]] = {}
        for pid, v in values.items():
            parts = pid.split("/")
            if parts[0] == "site":
                site_upd.setdefault(parts[1], {})[parts[2]] = float(v)
            elif parts[0] == "link":
                name = parts[3]
                link_upd.setdefault((parts[1], parts[2]), {})[name] = (
                    bool(v) if name == "alarmed" else float(v)
                )
        sites = tuple(replace(s, **site_upd[s.id]) if s.id in site_upd else s for s in self.sites)
        links = tuple(replace(l, **link_upd[l.key]) if l.key in link_upd else l for l in self.links)
        return replace(self, sites=sites, links=links, **changes)


@dataclass(frozen=True)
class Placement:
    """A certified placement and routing.

    ``flows`` maps ``(src, dst, workload)`` to Gbps; ``path_flows`` keeps the
    per-path split the solver chose.
    """

    assignment: Mapping[str, str]
    flows: Mapping[tuple[str, str, str], float] = field(default_factory=dict)
    path_flows: Mapping[str, tuple[tuple[tuple[str, ...], float], ...]] = field(
        default_factory=dict
    )
    objective: float = 0.0
    carbon_rate: float = 0.0  # gCO2eq/h
    water_rate: float = 0.0  # L/h


# ---------------------------------------------------------------- validation


def validate_snapshot(
    snapshot: TelemetrySnapshot, workloads: Iterable[Workload] = ()
) -> list[str]:
    """Return one human-readable line per violated type invariant."""
    out: list[str] = []
    ids = [s.id for s in snapshot.sites]
    known = set(ids)
    if len(known) != len(ids):
        out.append("duplicate site ids")
    for s in snapshot.sites:
        for name in ("power_cap", "carbon_intensity", "water_intensity", "water_permit",
                     "onsite_gen", "onsite_batt"):
            v = getattr(s, name)
            if not (v >= 0) or math.isinf(v):
                out.append(f"site {s.id}: {name} must be finite and >= 0 (got {v})")
        if not (s.carbon_ceiling > 0):
            out.append(f"site {s.id}: carbon_ceiling must be > 0 (got {s.carbon_ceiling})")
        if s.thermal_cooling_cap is not None and not (s.thermal_cooling_cap >= 0):
            out.append(f"site {s.id}: thermal_cooling_cap must be >= 0")
        if not (0.0 <= s.ups_headroom_frac <= 1.0):
            out.append(f"site {s.id}: ups_headroom_frac must lie in [0, 1]")
    seen_links: set[tuple[str, str]] = set()
    for l in snapshot.links:
        tag = f"link {l.src}->{l.dst}"
        if l.src == l.dst:
            out.append(f"{tag}: endpoints must differ")
        if l.src not in known or l.dst not in known:
            out.append(f"{tag}: unknown endpoint")
        if l.key in seen_links:
            out.append(f"{tag}: duplicate link")
        seen_links.add(l.key)
        if not (l.capacity >= 0):
            out.append(f"{tag}: capacity must be >= 0")
        if l.src != l.dst and not (l.delay > 0):
            out.append(f"{tag}: delay must be > 0 between distinct sites (got {l.delay})")
        if not (l.energy_per_bit >= 0):
            out.append(f"{tag}: energy_per_bit must be >= 0")
        if not (0.0 <= l.utilization <= 1.0):
            out.append(f"{tag}: utilization must lie in [0, 1]")
    params = set(snapshot.parameter_ids())
    for pid in snapshot.confidence:
        if pid not in params:
            out.append(f"confidence tag for unknown parameter {pid}")
    wids: set[str] = set()
    for w in workloads:
        tag = f"workload {w.id}"
        if w.id in wids:
            out.append(f"{tag}: duplicate id")
        wids.add(w.id)
        if not (w.power > 0):
            out.append(f"{tag}: power must be > 0")
        if not (w.traffic >= 0):
            out.append(f"{tag}: traffic must be >= 0")
        if w.latency_slo is not None and not (w.latency_slo > 0):
            out.append(f"{tag}: latency_slo must be > 0 or unbounded")
        if not (w.state_size >= 0):
            out.append(f"{tag}: state_size must be >= 0")
        if w.cls is WorkloadClass.TRAINING and w.portable:
            out.append(f"{tag}: Training workloads cannot be portable")
        if w.dest not in known:
            out.append(f"{tag}: unknown dest site {w.dest}")
        for sid, _ in w.rehydration_by_site:
            if sid not in known:
                out.append(f"{tag}: rehydration override for unknown site {sid}")
    return out


# ---------------------------------------------------------------- JSON codec


def _num(d: Mapping[str, Any], key: str, where: str, default: Any = ...) -> Any:
    if key not in d:
        if default is ...:
            raise SchemaError(f"{where}.{key}", "missing field")
        return default
    v = d[key]
    if v is None and default is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{where}.{key}", f"expected a number, got {v!r}")
    return float(v)


def _str(d: Mapping[str, Any], key: str, where: str, default: Any = ...) -> str:
    if key not in d:
        if default is ...:
            raise SchemaError(f"{where}.{key}", "missing field")
        return default
    v = d[key]
    if not isinstance(v, str):
        raise SchemaError(f"{where}.{key}", f"expected a string, got {v!r}")
    return v


def _obj(d: Any, where: str) -> Mapping[str, Any]:
    if not isinstance(d, Mapping):
        raise SchemaError(where, "expected an object")
    return d


def site_to_dict(s: Site) -> dict[str, Any]:
    return {
        "id": s.id,
        "power_cap": s.power_cap,
        "carbon_intensity": s.carbon_intensity,
        "water_intensity": s.water_intensity,
        "carbon_ceiling": s.carbon_ceiling,
        "water_permit": s.water_permit,
        "thermal_cooling_cap": s.thermal_cooling_cap,
        "ups_headroom_frac": s.ups_headroom_frac,
        "region_tag": s.region_tag,
        "onsite_gen": s.onsite_gen,
        "onsite_batt": s.onsite_batt,
    }


def site_from_dict(d: Any, where: str = "site") -> Site:
    d = _obj(d, where)
    return Site(
        id=_str(d, "id", where),
        power_cap=_num(d, "power_cap", where),
        carbon_intensity=_num(d, "carbon_intensity", where),
        water_intensity=_num(d, "water_intensity", where),
        carbon_ceiling=_num(d, "carbon_ceiling", where),
        water_permit=_num(d, "water_permit", where),
        thermal_cooling_cap=_num(d, "thermal_cooling_cap", where, None),
        ups_headroom_frac=_num(d, "ups_headroom_frac", where, 0.0),
        region_tag=_str(d, "region_tag", where, ""),
        onsite_gen=_num(d, "onsite_gen", where, 0.0),
        onsite_batt=_num(d, "onsite_batt", where, 0.0),
    )


def link_to_dict(l: Link) -> dict[str, Any]:
    return {
        "from": l.src,
        "to": l.dst,
        "capacity": l.capacity,
        "delay": l.delay,
        "energy_per_bit": l.energy_per_bit,
        "utilization": l.utilization,
        "alarmed": l.alarmed,
    }


def link_from_dict(d: Any, where: str = "link") -> Link:
    d = _obj(d, where)
    alarmed = d.get("alarmed", False)
    if not isinstance(alarmed, bool):
        raise SchemaError(f"{where}.alarmed", f"expected a boolean, got {alarmed!r}")
    return Link(
        src=_str(d, "from", where),
        dst=_str(d, "to", where),
        capacity=_num(d, "capacity", where),
        delay=_num(d, "delay", where),
        energy_per_bit=_num(d, "energy_per_bit", where, 0.0),
        utilization=_num(d, "utilization", where, 0.0),
        alarmed=alarmed,
    )


def workload_to_dict(w: Workload) -> dict[str, Any]:
    return {
        "id": w.id,
        "power": w.power,
        "latency_slo": UNBOUNDED if w.latency_slo is None else w.latency_slo,
        "traffic": w.traffic,
        "portable": w.portable,
        "state_size": w.state_size,
        "rehydration": w.rehydration,
        "rehydration_by_site": dict(w.rehydration_by_site),
        "class": w.cls.value,
        "dest": w.dest,
        "locality_tags": list(w.locality_tags),
    }


def workload_from_dict(d: Any, where: str = "workload") -> Workload:
    d = _obj(d, where)
    slo = d.get("latency_slo", UNBOUNDED)
    if slo == UNBOUNDED or slo is None:
        slo_v = None
    else:
        slo_v = _num(d, "latency_slo", where)
    portable = d.get("portable")
    if not isinstance(portable, bool):
        raise SchemaError(f"{where}.portable", f"expected a boolean, got {portable!r}")
    try:
        cls = WorkloadClass(d.get("class", "Batch"))
    except ValueError:
        raise SchemaError(f"{where}.class", f"unknown workload class {d.get('class')!r}") from None
    rh = d.get("rehydration_by_site", {}) or {}
    if not isinstance(rh, Mapping):
        raise SchemaError(f"{where}.rehydration_by_site", "expected an object")
    tags = d.get("locality_tags", []) or []
    if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
        raise SchemaError(f"{where}.locality_tags", "expected a list of strings")
    return Workload(
        id=_str(d, "id", where),
        power=_num(d, "power", where),
        latency_slo=slo_v,
        traffic=_num(d, "traffic", where),
        portable=portable,
        dest=_str(d, "dest", where),
        cls=cls,
        state_size=_num(d, "state_size", where, 0.0),
        rehydration=_num(d, "rehydration", where, 0.0),
        rehydration_by_site=tuple(sorted((str(k), float(v)) for k, v in rh.items())),
        locality_tags=tuple(tags),
    )


def snapshot_to_dict(s: TelemetrySnapshot) -> dict[str, Any]:
    return {
        "timestamp": s.timestamp,
        "sites": [site_to_dict(x) for x in s.sites],
        "links": [link_to_dict(x) for x in s.links],
        "confidence": {k: v.value for k, v in s.confidence.items()},
        "horizon_minutes": s.horizon_minutes,
        "forecasts": {k: list(v) for k, v in s.forecasts.items()},
        "hold": s.hold,
    }


def snapshot_from_dict(d: Any, where: str = "snapshot") -> TelemetrySnapshot:
    d = _obj(d, where)
    sites = d.get("sites")
    if not isinstance(sites, list):
        raise SchemaError(f"{where}.sites", "expected a list")
    links = d.get("links", [])
    if not isinstance(links, list):
        raise SchemaError(f"{where}.links", "expected a list")
    conf = d.get("confidence", {}) or {}
    try:
        conf = {str(k): Confidence(v) for k, v in _obj(conf, f"{where}.confidence").items()}
    except ValueError as exc:
        raise SchemaError(f"{where}.confidence", str(exc)) from None
    fc = _obj(d.get("forecasts", {}) or {}, f"{where}.forecasts")
    return TelemetrySnapshot(
        timestamp=_num(d, "timestamp", where, 0.0),
        sites=tuple(site_from_dict(x, f"{where}.sites[{i}]") for i, x in enumerate(sites)),
        links=tuple(link_from_dict(x, f"{where}.links[{i}]") for i, x in enumerate(links)),
        confidence=conf,
        horizon_minutes=_num(d, "horizon_minutes", where, 0.0),
        forecasts={str(k): tuple(float(x) for x in v) for k, v in fc.items()},
        hold=bool(d.get("hold", False)),
    )


def workloads_from_json(d: Any, where: str = "workloads") -> list[Workload]:
    """Accept either a bare list or ``{"workloads": [...]}``."""
    if isinstance(d, Mapping):
        d = d.get("workloads")
    if not isinstance(d, list):
        raise SchemaError(where, "expected a list of workloads")
    return [workload_from_dict(x, f"{where}[{i}]") for i, x in enumerate(d)]


def workloads_to_json(ws: Iterable[Workload]) -> dict[str, Any]:
    return {"workloads": [workload_to_dict(w) for w in ws]}


def links_from_json(d: Any, where: str = "network") -> list[Link]:
    if isinstance(d, Mapping):
        d = d.get("links")
    if not isinstance(d, list):
        raise SchemaError(where, "expected a list of links")
    return [link_from_dict(x, f"{where}.links[{i}]") for i, x in enumerate(d)]


def placement_to_dict(p: Placement) -> dict[str, Any]:
    return {
        "assignment": dict(p.assignment),
        "flows": [
            {"from": a, "to": b, "workload": k, "gbps": v}
            for (a, b, k), v in sorted(p.flows.items())
        ],
        "path_flows": {
            k: [{"path": list(path), "gbps": w} for path, w in v]
            for k, v in p.path_flows.items()
        },
        "objective": p.objective,
        "carbon_rate": p.carbon_rate,
        "water_rate": p.water_rate,
    }


def placement_from_dict(d: Any, where: str = "placement") -> Placement:
    d = _obj(d, where)
    assignment = _obj(d.get("assignment", {}), f"{where}.assignment")
    flows = {}
    for i, f in enumerate(d.get("flows", [])):
        f = _obj(f, f"{where}.flows[{i}]")
        flows[(f["from"], f["to"], f["workload"])] = float(f["gbps"])
    pf = {
        k: tuple((tuple(e["path"]), float(e["gbps"])) for e in v)
        for k, v in (d.get("path_flows", {}) or {}).items()
    }
    return Placement(
        assignment=dict(assignment),
        flows=flows,
        path_flows=pf,
        objective=float(d.get("objective", 0.0)),
        carbon_rate=float(d.get("carbon_rate", 0.0)),
        water_rate=float(d.get("water_rate", 0.0)),
    )


def render_snapshot(s: TelemetrySnapshot) -> str:
    return json.dumps(snapshot_to_dict(s), sort_keys=True)


def parse_snapshot(text: str) -> TelemetrySnapshot:
    return snapshot_from_dict(json.loads(text))
