"""MILP construction: preprocessing gates, normalization, migration tightening
and the labeled constraint rows.

Routing is path based: every admissible path of a workload carries its own
weight variable and satisfies the latency budget on its own, so fractional
splitting never hides a latency violation. Arc flows are reconstructed from
path weights for reporting and for variable-count accounting.
"""

from __future__ import annotations

import enum
import functools
import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .lp import LpProblem
from .model import Site, TelemetrySnapshot, Workload
from .routing import (
    DelayMatrix,
    Graph,
    Path,
    enumerate_admissible_paths,
    shortest_delays,
    shortest_path,
)

BITS_PER_GB = 8e9
JOULES_PER_KWH = 3.6e6


class FormulationError(ValueError):
    pass


class MigrationError(FormulationError):
    pass


class ConstraintClass(str, enum.Enum):
    CARBON_GATE = "CarbonGate"
    WATER_CAP = "WaterCap"
    POWER_CAP = "PowerCap"
    ASSIGNMENT = "Assignment"
    LATENCY_GATE = "LatencyGate"
    LINK_CAP = "LinkCap"
    FLOW_BALANCE = "FlowBalance"
    NO_GOOD = "NoGood"


# groups of these classes are never relaxed during infeasibility analysis
STRUCTURAL = frozenset({ConstraintClass.FLOW_BALANCE, ConstraintClass.NO_GOOD})

_PREFIX = {
    ConstraintClass.CARBON_GATE: "carbon",
    ConstraintClass.WATER_CAP: "water",
    ConstraintClass.POWER_CAP: "power",
    ConstraintClass.ASSIGNMENT: "assign",
    ConstraintClass.LATENCY_GATE: "latency",
    ConstraintClass.LINK_CAP: "link",
    ConstraintClass.FLOW_BALANCE: "flow",
    ConstraintClass.NO_GOOD: "nogood",
}


@functools.lru_cache(maxsize=65536)
def lp_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.]", "_", text)


@dataclass(frozen=True, order=True)
class Group:
    cls: ConstraintClass
    index: tuple[str, ...]

    @property
    def label(self) -> str:
        return lp_name("_".join((_PREFIX[self.cls],) + self.index))

    def to_dict(self) -> dict:
        return {"class": self.cls.value, "index": list(self.index), "label": self.label}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Group":
        return cls(ConstraintClass(d["class"]), tuple(d["index"]))


@dataclass(frozen=True)
class Row:
    group: Group
    name: str
    coeffs: tuple[tuple[int, float], ...]
    sense: str
    rhs: float


@dataclass(frozen=True)
class GateFix:
    """One ``x[site, workload] = 0`` fixing; ``group`` is None for structural fixes."""

    site: str
    workload: str
    reason: str
    group: Group | None


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str  # "x" or "w"
    site: str
    workload: str
    path: Path = ()
    delay: float = 0.0


@dataclass(frozen=True)
class NormalizationWindow:
    gamma_min: float
    gamma_max: float
    omega_min: float
    omega_max: float

    def __post_init__(self) -> None:
        if self.gamma_max < self.gamma_min or self.omega_max < self.omega_min:
            raise FormulationError("normalization window max below min")

    @classmethod
    def from_sites(cls, sites: Iterable[Site]) -> "NormalizationWindow":
        sites = list(sites)
        if not sites:
            return cls(0.0, 0.0, 0.0, 0.0)
        g = [s.effective_carbon for s in sites]
        w = [s.water_intensity for s in sites]
        return cls(min(g), max(g), min(w), max(w))

    @classmethod
    def from_snapshots(cls, snaps: Iterable[TelemetrySnapshot]) -> "NormalizationWindow":
        sites = [s for snap in snaps for s in snap.sites]
        return cls.from_sites(sites)

    def gamma(self, v: float) -> float:
        return _scale(v, self.gamma_min, self.gamma_max)

    def omega(self, v: float) -> float:
        return _scale(v, self.omega_min, self.omega_max)


def _scale(v: float, lo: float, hi: float) -> float:
    if hi <= lo:
        return 0.0
    return min(1.0, max(0.0, (v - lo) / (hi - lo)))


@dataclass(frozen=True)
class FormulationOptions:
    hop_limit: int = 3
    objective: str = "impact"  # or "latency"
    include_transport: bool = False
    network_free: bool = False  # paths treated as zero-delay, uncapacitated
    drop_classes: frozenset[ConstraintClass] = frozenset()
    singleton_fixes: bool = True
    # keep one path per pair when no link can ever saturate (exact)
    prune_paths: bool = True


# ------------------------------------------------------------------ gates


def carbon_gated(site: Site) -> bool:
    return site.effective_carbon > site.carbon_ceiling


def apply_carbon_gate(
    snapshot: TelemetrySnapshot, workloads: Sequence[Workload]
) -> list[GateFix]:
    out = []
    for s in snapshot.sites:
        if carbon_gated(s):
            g = Group(ConstraintClass.CARBON_GATE, (s.id,))
            detail = f"carbon {s.effective_carbon:g} > ceiling {s.carbon_ceiling:g}"
            out += [GateFix(s.id, w.id, detail, g) for w in workloads]
    return out


def all_sites_gated(snapshot: TelemetrySnapshot) -> bool:
    return all(carbon_gated(s) for s in snapshot.sites)


def singleton_feasibility_fixes(
    snapshot: TelemetrySnapshot, workloads: Sequence[Workload]
) -> list[GateFix]:
    """Pairs ruled out by a single workload exceeding a site's power or water cap."""
    out = []
    for s in snapshot.sites:
        for w in workloads:
            if w.power > s.power_cap:
                out.append(GateFix(s.id, w.id, f"power {w.power:g} > cap {s.power_cap:g}",
                                   Group(ConstraintClass.POWER_CAP, (s.id,))))
            elif s.water_intensity * w.power > s.water_permit:
                out.append(GateFix(
                    s.id, w.id,
                    f"water {s.water_intensity * w.power:g} > permit {s.water_permit:g}",
                    Group(ConstraintClass.WATER_CAP, (s.id,))))
    return out


def transfer_bandwidth(graph: Graph, src: str, dst: str) -> float:
    """Residual capacity of the direct link, else the bottleneck of the
    minimum-delay path; 0 when unreachable."""
    link = graph.edges.get((src, dst))
    if link is not None:
        return link.residual_capacity
    path = shortest_path(graph, src, dst)
    if path is None:
        return 0.0
    return min(graph.edges[e].residual_capacity for e in zip(path, path[1:]))


def path_energy_per_bit(graph: Graph, src: str, dst: str) -> float:
    path = shortest_path(graph, src, dst)
    if path is None:
        return 0.0
    return sum(graph.edges[e].energy_per_bit for e in zip(path, path[1:]))


def transfer_delay_ms(state_size_gb: float, bandwidth_gbps: float) -> float:
    if state_size_gb <= 0:
        return 0.0
    if bandwidth_gbps <= 0:
        return math.inf
    return 8.0 * state_size_gb / bandwidth_gbps * 1000.0


def effective_latency_budget(
    workload: Workload,
    source: str | None,
    candidate: str,
    snapshot: TelemetrySnapshot,
    graph: Graph | None = None,
    bandwidth: float | None = None,
) -> float | None:
    """Latency budget in ms left for propagation at ``candidate``.

    A move from ``source`` tightens the budget by the state transfer delay and
    the rehydration latency. ``None`` means unbounded.
    """
    if source is None or source == candidate:
        return workload.latency_slo
    if not workload.portable:
        raise MigrationError(f"workload {workload.id} is not portable")
    if workload.latency_slo is None:
        return None
    if bandwidth is None:
        graph = graph or Graph.from_snapshot(snapshot)
        bandwidth = transfer_bandwidth(graph, source, candidate)
    tx = transfer_delay_ms(workload.state_size, bandwidth)
    return workload.latency_slo - tx - workload.rehydration_at(candidate)


def migration_carbon(source: Site, energy_per_bit: float, state_size_gb: float) -> float:
    """gCO2eq to ship ``state_size_gb`` out of ``source`` at ``energy_per_bit`` J/bit."""
    joules = energy_per_bit * state_size_gb * BITS_PER_GB
    return source.carbon_intensity * joules / JOULES_PER_KWH


def apply_latency_gate(
    snapshot: TelemetrySnapshot,
    workloads: Sequence[Workload],
    delays: DelayMatrix,
    incumbent: Mapping[str, str] | None = None,
    graph: Graph | None = None,
) -> list[GateFix]:
    """Pairs whose shortest one-way delay exceeds the effective budget."""
    graph = graph or Graph.from_snapshot(snapshot)
    incumbent = incumbent or {}
    out = []
    for w in workloads:
        g = Group(ConstraintClass.LATENCY_GATE, (w.id,))
        src = incumbent.get(w.id)
        for s in snapshot.sites:
            if src is not None and src != s.id and not w.portable:
                continue
            budget = effective_latency_budget(w, src, s.id, snapshot, graph)
            if budget is None:
                continue
            d = delays[(s.id, w.dest)]
            moving = src is not None and src != s.id
            if moving and budget <= 0:
                out.append(GateFix(s.id, w.id, f"migration leaves budget {budget:g} ms", g))
            elif d is not None and d > budget:
                out.append(GateFix(s.id, w.id, f"delay {d:g} ms > budget {budget:g} ms", g))
    return out


# --------------------------------------------------------------- instance


@dataclass(frozen=True)
class BuildContext:
    snapshot: TelemetrySnapshot
    workloads: tuple[Workload, ...]
    alpha: float
    incumbent: Mapping[str, str] | None
    options: FormulationOptions
    window: NormalizationWindow | None
    dropped: frozenset[Group]
    cuts: tuple[tuple[tuple[str, str], ...], ...]


@dataclass(frozen=True)
class MilpInstance:
    variables: tuple[Variable, ...]
    objective: np.ndarray
    rows: tuple[Row, ...]
    gate_log: tuple[GateFix, ...]
    meta: Mapping[str, object]
    context: BuildContext
    x_index: Mapping[tuple[str, str], int] = field(default_factory=dict)

    @property
    def binaries(self) -> list[int]:
        return [i for i, v in enumerate(self.variables) if v.kind == "x"]

    @property
    def trivially_infeasible(self) -> bool:
        return bool(self.meta.get("trivially_infeasible"))

    def groups(self) -> list[Group]:
        seen = {r.group for r in self.rows}
        seen |= {g.group for g in self.gate_log if g.group is not None}
        return sorted(seen)

    def candidate_groups(self) -> list[Group]:
        """Groups that infeasibility analysis may relax."""
        return [g for g in self.groups() if g.cls not in STRUCTURAL]

    def without(self, groups: Iterable[Group]) -> "MilpInstance":
        groups = frozenset(groups)
        bad = [g for g in groups if g.cls in STRUCTURAL]
        if bad:
            raise FormulationError(f"cannot drop structural groups {bad}")
        ctx = self.context
        return _build(replace(ctx, dropped=ctx.dropped | groups))

    def with_cut(self, pattern: Mapping[str, str]) -> "MilpInstance":
        ctx = self.context
        cut = tuple(sorted(pattern.items()))
        return _build(replace(ctx, cuts=ctx.cuts + (cut,)))

    def to_lp(self) -> LpProblem:
        n = len(self.variables)
        A = np.zeros((len(self.rows), n))
        for r, row in enumerate(self.rows):
            for j, v in row.coeffs:
                A[r, j] += v
        ub = np.array([1.0 if v.kind == "x" else np.inf for v in self.variables])
        return LpProblem(self.objective, A, [r.sense for r in self.rows],
                         [r.rhs for r in self.rows], np.zeros(n), ub)

    def workload(self, wid: str) -> Workload:
        for w in self.context.workloads:
            if w.id == wid:
                return w
        raise KeyError(wid)


def build_instance(
    snapshot: TelemetrySnapshot,
    workloads: Sequence[Workload],
    alpha: float = 0.5,
    incumbent: Mapping[str, str] | None = None,
    options: FormulationOptions | None = None,
    window: NormalizationWindow | None = None,
) -> MilpInstance:
    if not (0.0 <= alpha <= 1.0):
        raise FormulationError(f"alpha must lie in [0, 1], got {alpha}")
    ctx = BuildContext(
        snapshot=snapshot,
        workloads=tuple(workloads),
        alpha=float(alpha),
        incumbent=dict(incumbent) if incumbent else None,
        options=options or FormulationOptions(),
        window=window,
        dropped=frozenset(),
        cuts=(),
    )
    return _build(ctx)


def _build(ctx: BuildContext) -> MilpInstance:
    snap, ws, opts, alpha = ctx.snapshot, ctx.workloads, ctx.options, ctx.alpha
    incumbent = {k: v for k, v in (ctx.incumbent or {}).items() if v in snap.site_ids}

    def active(g: Group) -> bool:
        return g not in ctx.dropped and g.cls not in opts.drop_classes

    graph = Graph.from_snapshot(snap)
    delays = shortest_delays(graph)
    window = ctx.window or NormalizationWindow.from_sites(snap.sites)
    gate_log: list[GateFix] = []
    fixed: set[tuple[str, str]] = set()

    def fix(entries: Iterable[GateFix]) -> None:
        for e in entries:
            if e.group is not None and not active(e.group):
                continue
            gate_log.append(e)
            fixed.add((e.site, e.workload))

    # immobile workloads stay where they run
    for w in ws:
        src = incumbent.get(w.id)
        if src is not None and not w.portable:
            fix(GateFix(s.id, w.id, "immobile", None) for s in snap.sites if s.id != src)
    fix(apply_carbon_gate(snap, ws))
    if opts.singleton_fixes:
        fix(singleton_feasibility_fixes(snap, ws))

    # budgets and admissible paths per surviving pair
    site_ids = snap.site_ids
    budgets: dict[tuple[str, str], float | None] = {}
    paths: dict[tuple[str, str], list[tuple[Path, float]]] = {}
    for w in ws:
        lat_group = Group(ConstraintClass.LATENCY_GATE, (w.id,))
        lat_on = active(lat_group) and not opts.network_free
        src = incumbent.get(w.id)
        for sid in site_ids:
            if (sid, w.id) in fixed:
                continue
            budget = None
            if lat_on:
                budget = effective_latency_budget(
                    w, src, sid, snap, graph,
                    bandwidth=None if src in (None, sid) else transfer_bandwidth(graph, src, sid),
                )
                moving = src is not None and src != sid
                if budget is not None and moving and budget <= 0:
                    fix([GateFix(sid, w.id, f"migration leaves budget {budget:g} ms", lat_group)])
                    continue
            budgets[(sid, w.id)] = budget
            if opts.network_free or sid == w.dest or w.traffic <= 0:
                paths[(sid, w.id)] = []
                continue
            if not delays.reachable(sid, w.dest):
                fix([GateFix(sid, w.id, "no route to dest", None)])
                continue
            ps = enumerate_admissible_paths(graph, sid, w.dest, budget, opts.hop_limit)
            if not ps:
                if budget is not None and enumerate_admissible_paths(
                        graph, sid, w.dest, None, opts.hop_limit):
                    d = delays[(sid, w.dest)]
                    fix([GateFix(sid, w.id, f"delay {d:g} ms > budget {budget:g} ms",
                                 lat_group)])
                else:
                    fix([GateFix(sid, w.id, f"no route within {opts.hop_limit} hops", None)])
                continue
            paths[(sid, w.id)] = ps

    hop_cost: dict[tuple[str, str], float] = {}
    if opts.include_transport and opts.objective == "impact":
        g_site = {s.id: window.gamma(s.effective_carbon) for s in snap.sites}
        hop_cost = {e: alpha * g_site[e[0]] * l.energy_per_bit * 1e9 / 1000.0
                    for e, l in graph.edges.items()}

    def path_cost(path: Path) -> float:
        return sum(hop_cost.get(e, 0.0) for e in zip(path, path[1:]))

    # worst case each workload pushes all of its traffic across every edge it might use
    links_redundant = False
    if opts.prune_paths and not opts.network_free:
        reach: dict[tuple[str, str], float] = {}
        for w in ws:
            edges = {e for (sid, wid), ps in paths.items() if wid == w.id
                     and (sid, wid) not in fixed for p, _ in ps for e in zip(p, p[1:])}
            for e in edges:
                reach[e] = reach.get(e, 0.0) + w.traffic
        links_redundant = all(v <= graph.edges[e].residual_capacity for e, v in reach.items())
        if links_redundant:
            for key, ps in paths.items():
                if len(ps) > 1:
                    paths[key] = [min(ps, key=lambda pd: (path_cost(pd[0]), pd[1], pd[0]))]

    # variables
    variables: list[Variable] = []
    x_index: dict[tuple[str, str], int] = {}
    for sid in site_ids:
        for w in ws:
            if (sid, w.id) in fixed:
                continue
            x_index[(sid, w.id)] = len(variables)
            variables.append(Variable(lp_name(f"x_{sid}_{w.id}"), "x", sid, w.id))
    w_index: dict[tuple[str, str], list[int]] = {}
    for (sid, wid), ps in paths.items():
        if (sid, wid) not in x_index:
            continue
        idxs = []
        for path, delay in ps:
            idxs.append(len(variables))
            variables.append(Variable(lp_name("w_" + wid + "_" + "_".join(path)),
                                      "w", sid, wid, path, delay))
        w_index[(sid, wid)] = idxs

    # objective
    c = np.zeros(len(variables))
    site_by_id = {s.id: s for s in snap.sites}
    wl = {w.id: w for w in ws}
    mig_note = "migration carbon [gCO2eq] weighted by alpha, added to normalized objective"
    for (sid, wid), j in x_index.items():
        s, w = site_by_id[sid], wl[wid]
        if opts.objective == "latency":
            d = 0.0 if opts.network_free else delays[(sid, w.dest)]
            c[j] = d if d is not None else 0.0
            continue
        c[j] = w.power * (alpha * window.gamma(s.effective_carbon)
                          + (1 - alpha) * window.omega(s.water_intensity))
        src = incumbent.get(wid)
        if src is not None and src != sid and w.state_size > 0:
            e = path_energy_per_bit(graph, src, sid)
            c[j] += alpha * migration_carbon(site_by_id[src], e, w.state_size)
    if hop_cost:
        for j, v in enumerate(variables):
            if v.kind != "w":
                continue
            # kW drawn per Gbps on each hop, weighted by the hop's source intensity
            for e in zip(v.path, v.path[1:]):
                c[j] += hop_cost[e]

    # rows
    rows: list[Row] = []
    trivially_infeasible = False
    for w in ws:
        g = Group(ConstraintClass.ASSIGNMENT, (w.id,))
        if not active(g):
            continue
        coeffs = tuple((x_index[(sid, w.id)], 1.0) for sid in site_ids if (sid, w.id) in x_index)
        if not coeffs:
            trivially_infeasible = True
        rows.append(Row(g, g.label, coeffs, "==", 1.0))
    for s in snap.sites:
        coeffs = tuple((x_index[(s.id, w.id)], w.power) for w in ws if (s.id, w.id) in x_index)
        if not coeffs:
            continue
        g = Group(ConstraintClass.POWER_CAP, (s.id,))
        if active(g):
            rows.append(Row(g, g.label, coeffs, "<=", s.power_cap))
        g = Group(ConstraintClass.WATER_CAP, (s.id,))
        if active(g):
            rows.append(Row(g, g.label, tuple((j, s.water_intensity * p) for j, p in coeffs),
                            "<=", s.water_permit))
    for w in ws:
        g = Group(ConstraintClass.FLOW_BALANCE, (w.id,))
        for sid in site_ids:
            if (sid, w.id) not in x_index or sid == w.dest or w.traffic <= 0 or opts.network_free:
                continue
            coeffs = [(j, 1.0) for j in w_index.get((sid, w.id), [])]
            coeffs.append((x_index[(sid, w.id)], -w.traffic))
            rows.append(Row(g, lp_name(f"flow_{w.id}_{sid}"), tuple(coeffs), "==", 0.0))
    if not opts.network_free and not links_redundant:
        through: dict[tuple[str, str], list[int]] = {}
        for j, v in enumerate(variables):
            if v.kind == "w":
                for e in zip(v.path, v.path[1:]):
                    through.setdefault(e, []).append(j)
        for e in sorted(through):
            g = Group(ConstraintClass.LINK_CAP, e)
            if active(g):
                rows.append(Row(g, g.label, tuple((j, 1.0) for j in through[e]), "<=",
                                graph.edges[e].residual_capacity))
    for n, cut in enumerate(ctx.cuts):
        g = Group(ConstraintClass.NO_GOOD, (str(n),))
        if not all((sid, wid) in x_index for wid, sid in cut):
            continue  # pattern already excluded by a fixing
        coeffs = tuple((x_index[(sid, wid)], 1.0) for wid, sid in cut)
        rows.append(Row(g, g.label, coeffs, "<=", float(len(cut) - 1)))

    n_edges = len(graph.edges)
    meta = {
        "N": len(site_ids),
        "M": len(ws),
        "nominal_binaries": len(site_ids) * len(ws),
        "binaries": len(x_index),
        "nominal_continuous": n_edges * len(ws),
        "path_variables": len(variables) - len(x_index),
        "links_redundant": links_redundant,
        "rows": len(rows),
        "trivially_infeasible": trivially_infeasible,
        "alpha": alpha,
        "objective": opts.objective,
        "migration_mixing": mig_note,
        "window": [window.gamma_min, window.gamma_max, window.omega_min, window.omega_max],
    }
    return MilpInstance(
        variables=tuple(variables),
        objective=c,
        rows=tuple(rows),
        gate_log=tuple(gate_log),
        meta=meta,
        context=ctx,
        x_index=x_index,
    )


# ------------------------------------------------------------- LP export


def _fmt(v: float) -> str:
    return repr(float(v))


def export_lp(instance: MilpInstance) -> str:
    """Render ``instance`` in the CPLEX LP text format."""
    var = instance.variables
    lines = [f"\\ placement/routing MILP: N={instance.meta['N']} M={instance.meta['M']}",
             "Minimize"]

    def expr(pairs: Iterable[tuple[int, float]]) -> str:
        terms = [(j, v) for j, v in pairs if v != 0.0]
        if not terms:
            return "0 " + var[0].name if var else "0"
        out = []
        for i, (j, v) in enumerate(terms):
            sign = "-" if v < 0 else "+"
            if i == 0:
                out.append(("- " if v < 0 else "") + f"{_fmt(abs(v))} {var[j].name}")
            else:
                out.append(f"{sign} {_fmt(abs(v))} {var[j].name}")
        return " ".join(out)

    lines.append(" obj: " + expr(enumerate(instance.objective)))
    lines.append("Subject To")
    sense = {"<=": "<=", ">=": ">=", "==": "="}
    for r in instance.rows:
        lines.append(f" {r.name}: {expr(r.coeffs)} {sense[r.sense]} {_fmt(r.rhs)}")
    lines.append("Bounds")
    for v in var:
        if v.kind == "x":
            lines.append(f" 0 <= {v.name} <= 1")
        else:
            lines.append(f" {v.name} >= 0")
    lines.append("Binary")
    for v in var:
        if v.kind == "x":
            lines.append(f" {v.name}")
    lines.append("End")
    return "\n".join(lines) + "\n"
