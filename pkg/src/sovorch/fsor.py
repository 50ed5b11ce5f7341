"""Feasibility-region analytics: membership, the downward-closed family of
feasible workload sets, green-but-far partitions and infeasibility
certificates by deletion filtering over labeled constraint groups."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .bnb import SolveOutcome, SolveStatus, solve
from .formulation import (
    ConstraintClass,
    FormulationOptions,
    Group,
    MilpInstance,
    build_instance,
    carbon_gated,
)
from .model import Placement, TelemetrySnapshot, Workload, WorkloadClass
from .routing import Graph, shortest_delays

ENUMERATION_GUARD = 15

IIS_ORDER = (
    ConstraintClass.CARBON_GATE,
    ConstraintClass.WATER_CAP,
    ConstraintClass.POWER_CAP,
    ConstraintClass.LATENCY_GATE,
    ConstraintClass.LINK_CAP,
    ConstraintClass.ASSIGNMENT,
)

LEVERS = {
    ConstraintClass.CARBON_GATE: "carbon eligibility",
    ConstraintClass.WATER_CAP: "water headroom",
    ConstraintClass.LATENCY_GATE: "latency admissibility",
    ConstraintClass.LINK_CAP: "network capacity",
    ConstraintClass.POWER_CAP: "power capacity",
    ConstraintClass.ASSIGNMENT: "workload demand",
}


class FsorError(RuntimeError):
    pass


def feasibility_instance(instance: MilpInstance) -> MilpInstance:
    """Same constraint system with a zero objective: the first integer point ends the search."""
    return replace(instance, objective=np.zeros_like(instance.objective))


def _decide(instance: MilpInstance, budget: float) -> SolveOutcome:
    out = solve(feasibility_instance(instance), budget)
    if out.status is SolveStatus.TIMEOUT and out.placement is None:
        raise FsorError(f"feasibility undecided within {budget:g} s")
    if out.status is SolveStatus.TIMEOUT:
        # an incumbent is a feasible point, which settles membership
        out.status = SolveStatus.OPTIMAL
    return out


def fsor_contains(
    snapshot: TelemetrySnapshot,
    workloads: Sequence[Workload],
    options: FormulationOptions | None = None,
    budget: float = 300.0,
) -> tuple[bool, Placement | None]:
    """Membership of ``workloads`` in the FSOR with a witness placement."""
    inst = build_instance(snapshot, workloads, 0.5, None, options)
    out = _decide(inst, budget)
    return out.optimal, out.placement


# ---------------------------------------------------------------- family


@dataclass
class FsorReport:
    universe: list[str]
    maximal_sets: list[list[str]]
    feasible_count: int
    queries: list[dict]
    admissible_sites: dict[str, dict[str, list[str]]]
    class_admissible_counts: dict[str, int]
    green_but_far: dict[str, list[str]]
    binding: list[dict]
    solves: int = 0

    def family(self) -> set[frozenset[str]]:
        """Every feasible set, expanded from the maximal antichain."""
        out: set[frozenset[str]] = set()
        for m in self.maximal_sets:
            for r in range(len(m) + 1):
                out.update(frozenset(c) for c in itertools.combinations(m, r))
        return out

    def to_dict(self) -> dict:
        return {
            "universe": self.universe,
            "maximal_sets": self.maximal_sets,
            "feasible_count": self.feasible_count,
            "queries": self.queries,
            "admissible_sites": self.admissible_sites,
            "class_admissible_counts": self.class_admissible_counts,
            "green_but_far": self.green_but_far,
            "binding": self.binding,
            "solves": self.solves,
        }


def enumerate_fsor(
    snapshot: TelemetrySnapshot,
    universe: Sequence[Workload],
    limit: int = ENUMERATION_GUARD,
    options: FormulationOptions | None = None,
    queries: Iterable[Sequence[str]] = (),
    budget: float = 300.0,
) -> FsorReport:
    """Exact feasible family over ``universe``, stored as its maximal sets."""
    if len(universe) > min(limit, ENUMERATION_GUARD):
        raise FsorError(
            f"universe of {len(universe)} workloads exceeds the enumeration guard "
            f"{min(limit, ENUMERATION_GUARD)}; use membership queries instead")
    ids = [w.id for w in universe]
    if len(set(ids)) != len(ids):
        raise FsorError("workload ids in the universe must be unique")
    by_id = {w.id: w for w in universe}
    n = len(ids)
    feasible: dict[int, Placement | None] = {0: Placement({})}
    infeasible_min: list[int] = []
    solves = 0

    def subset(mask: int) -> list[Workload]:
        return [universe[i] for i in range(n) if mask >> i & 1]

    for size in range(1, n + 1):
        for combo in itertools.combinations(range(n), size):
            mask = sum(1 << i for i in combo)
            if any(mask & bad == bad for bad in infeasible_min):
                continue  # monotone pruning: supersets of infeasible sets
            if not all((mask & ~(1 << i)) in feasible for i in combo):
                continue  # some immediate subset is infeasible
            ok, witness = fsor_contains(snapshot, subset(mask), options, budget)
            solves += 1
            if ok:
                feasible[mask] = witness
            else:
                infeasible_min.append(mask)
    maximal = [m for m in feasible
               if not any(m != o and m & o == m for o in feasible)]
    maximal.sort(key=lambda m: (-bin(m).count("1"), [i for i in range(n) if m >> i & 1]))
    max_sets = [[ids[i] for i in range(n) if m >> i & 1] for m in maximal]

    query_out = []
    for q in queries:
        q = list(q)
        unknown = [k for k in q if k not in by_id]
        if unknown:
            raise FsorError(f"query names unknown workloads {unknown}")
        mask = sum(1 << ids.index(k) for k in q)
        query_out.append({"workloads": q, "feasible": mask in feasible})

    binding = []
    for m, names in zip(maximal, max_sets):
        w = feasible[m]
        binding.append({"set": names,
                        "binding": binding_groups(snapshot, subset(m), w) if w else []})

    adm = admissible_sites(snapshot, universe)
    class_counts: dict[str, int] = {}
    for cls in WorkloadClass:
        members = [w.id for w in universe if w.cls is cls]
        if members:
            class_counts[cls.value] = len(set().union(*(adm[cls.value][k] for k in members)))
    gbf = {}
    for w in universe:
        if w.bounded:
            gbf[w.id] = classify_green_but_far(snapshot, w)["green_but_far"]
    flat_adm = {cls: {k: sorted(v) for k, v in d.items()} for cls, d in adm.items()}
    return FsorReport(ids, max_sets, len(feasible), query_out, flat_adm, class_counts, gbf,
                      binding, solves)


def admissible_sites(
    snapshot: TelemetrySnapshot, workloads: Sequence[Workload]
) -> dict[str, dict[str, set[str]]]:
    """Per class, per workload: sites surviving every single-workload gate."""
    out: dict[str, dict[str, set[str]]] = {c.value: {} for c in WorkloadClass}
    for w in workloads:
        part = classify_green_but_far(snapshot, w)
        out[w.cls.value][w.id] = set(part["interior"])
    return out


def binding_groups(
    snapshot: TelemetrySnapshot,
    workloads: Sequence[Workload],
    placement: Placement,
    tol: float = 1e-6,
) -> list[str]:
    """Labels of capacity rows within ``tol`` (relative) of their limit."""
    out = []
    for s in snapshot.sites:
        load = sum(w.power for w in workloads if placement.assignment.get(w.id) == s.id)
        if load <= 0:
            continue
        if load >= s.power_cap * (1 - tol):
            out.append(Group(ConstraintClass.POWER_CAP, (s.id,)).label)
        if s.water_intensity * load >= s.water_permit * (1 - tol):
            out.append(Group(ConstraintClass.WATER_CAP, (s.id,)).label)
    loads: dict[tuple[str, str], float] = {}
    for (a, b, _), v in placement.flows.items():
        loads[(a, b)] = loads.get((a, b), 0.0) + v
    for l in snapshot.links:
        v = loads.get(l.key, 0.0)
        if v > 0 and v >= l.residual_capacity * (1 - tol):
            out.append(Group(ConstraintClass.LINK_CAP, l.key).label)
    return out


# ---------------------------------------------------------- green-but-far


def classify_green_but_far(
    snapshot: TelemetrySnapshot, workload: Workload
) -> dict[str, list[str]]:
    """Partition sites into interior, green-but-far and ineligible for ``workload``.

    Sustainability eligibility is the carbon gate plus the single-workload
    power and water checks; latency admissibility compares the shortest
    one-way delay to the demand site against the SLO.
    """
    graph = Graph.from_snapshot(snapshot)
    delays = shortest_delays(graph)
    out: dict[str, list[str]] = {"interior": [], "green_but_far": [], "ineligible": []}
    for s in snapshot.sites:
        green = (not carbon_gated(s) and workload.power <= s.power_cap
                 and s.water_intensity * workload.power <= s.water_permit)
        if not green:
            out["ineligible"].append(s.id)
            continue
        d = delays[(s.id, workload.dest)]
        near = d is not None and (workload.latency_slo is None or d <= workload.latency_slo)
        if workload.latency_slo is None and d is None and workload.traffic <= 0:
            near = True
        out["interior" if near else "green_but_far"].append(s.id)
    return out


# -------------------------------------------------------------------- IIS


@dataclass
class InfeasibilityCertificate:
    groups: list[Group]
    dropped: list[Group]  # non-certificate groups relaxed to isolate the subsystem
    diagnosis: dict[str, list[str]]
    gate_records: list[str] = field(default_factory=list)
    solves: int = 0

    def levers(self) -> list[str]:
        return sorted(self.diagnosis)

    def has(self, cls: ConstraintClass) -> bool:
        return any(g.cls is cls for g in self.groups)

    def to_dict(self) -> dict:
        return {
            "groups": [g.to_dict() for g in self.groups],
            "dropped": [g.to_dict() for g in self.dropped],
            "diagnosis": self.diagnosis,
            "gate_records": self.gate_records,
            "solves": self.solves,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "InfeasibilityCertificate":
        return cls([Group.from_dict(g) for g in d["groups"]],
                   [Group.from_dict(g) for g in d.get("dropped", [])],
                   {k: list(v) for k, v in d.get("diagnosis", {}).items()},
                   list(d.get("gate_records", [])), int(d.get("solves", 0)))

    def render(self) -> str:
        lines = ["Infeasibility certificate (irreducible set of constraint groups):"]
        for g in self.groups:
            lines.append(f"  - {g.cls.value:<12} {g.label}")
        lines.append("Levers:")
        for lever in sorted(self.diagnosis):
            for msg in self.diagnosis[lever]:
                lines.append(f"  [{lever}] {msg}")
        return "\n".join(lines)


def _feasible(instance: MilpInstance, budget: float) -> bool:
    return _decide(instance, budget).optimal


def _order_key(g: Group) -> tuple:
    return (IIS_ORDER.index(g.cls) if g.cls in IIS_ORDER else len(IIS_ORDER), g.index)


def _irreducible(instance: MilpInstance, core: Sequence[Group], candidates: Sequence[Group],
                 budget: float) -> tuple[bool, int]:
    """Whether ``core`` alone is infeasible and loses that under any single deletion."""
    rest = set(candidates) - set(core)
    solves = 1
    if _feasible(instance.without(rest), budget):
        return False, solves
    for g in core:
        solves += 1
        if not _feasible(instance.without(rest | {g}), budget):
            return False, solves
    return True, solves


def extract_iis(instance: MilpInstance, budget: float = 300.0,
                hint: Sequence[Group] | None = None) -> InfeasibilityCertificate:
    """Deletion filter over labeled groups.

    Classes are visited in the order of ``IIS_ORDER``. A whole class is first
    dropped at once; when the rest stays infeasible every group in it is
    redundant and the per-group pass is skipped.

    ``hint`` is a candidate core, typically the previous cycle's certificate.
    It is returned as is when it is still irreducible, which costs only
    solves on the small isolated subsystem.
    """
    solves = 1
    if _feasible(instance, budget):
        raise FsorError("instance is feasible; there is no certificate to extract")
    candidates = sorted(instance.candidate_groups(), key=_order_key)
    dropped: set[Group] = set()
    if hint and set(hint) <= set(candidates):
        ok, n = _irreducible(instance, list(hint), candidates, budget)
        solves += n
        if ok:
            dropped = set(candidates) - set(hint)
            return _certificate(instance, candidates, dropped, solves)
        dropped = set()
    for cls in IIS_ORDER:
        members = [g for g in candidates if g.cls is cls]
        if not members:
            continue
        solves += 1
        if not _feasible(instance.without(dropped | set(members)), budget):
            dropped |= set(members)
            continue
        for g in members:
            solves += 1
            if not _feasible(instance.without(dropped | {g}), budget):
                dropped.add(g)
    return _certificate(instance, candidates, dropped, solves)


def _certificate(instance: MilpInstance, candidates: Sequence[Group], dropped: set[Group],
                 solves: int) -> InfeasibilityCertificate:
    core = [g for g in candidates if g not in dropped]
    sub = instance.without(dropped)
    return InfeasibilityCertificate(
        groups=core,
        dropped=sorted(dropped, key=_order_key),
        diagnosis=diagnose(sub, core),
        gate_records=[f"x[{f.site},{f.workload}]=0: {f.reason}"
                      for f in sub.gate_log if f.group in set(core)],
        solves=solves,
    )


def check_certificate(
    instance: MilpInstance, cert: InfeasibilityCertificate, budget: float = 300.0
) -> list[str]:
    """Re-solve the isolated subsystem: infeasible as is, feasible minus any one group."""
    problems = []
    base = set(cert.dropped)
    if _feasible(instance.without(base), budget):
        problems.append("subsystem with every certificate group is feasible")
    for g in cert.groups:
        if not _feasible(instance.without(base | {g}), budget):
            problems.append(f"dropping {g.label} leaves the subsystem infeasible")
    return problems


def diagnose(instance: MilpInstance, groups: Sequence[Group]) -> dict[str, list[str]]:
    snap = instance.context.snapshot
    sites = {s.id: s for s in snap.sites}
    wl = {w.id: w for w in instance.context.workloads}
    out: dict[str, list[str]] = {}
    for g in groups:
        lever = LEVERS.get(g.cls, g.cls.value)
        if g.cls is ConstraintClass.CARBON_GATE:
            s = sites[g.index[0]]
            msg = (f"site {s.id} grid intensity {s.effective_carbon:g} gCO2eq/kWh exceeds "
                   f"ceiling {s.carbon_ceiling:g}; cleaner supply or on-site generation "
                   "would restore eligibility")
        elif g.cls is ConstraintClass.WATER_CAP:
            s = sites[g.index[0]]
            msg = (f"site {s.id} water permit {s.water_permit:g} L/h admits at most "
                   f"{s.water_permit / s.water_intensity if s.water_intensity else float('inf'):g}"
                   " kW of IT load; permit headroom or lower-WUE cooling needed")
        elif g.cls is ConstraintClass.POWER_CAP:
            s = sites[g.index[0]]
            msg = f"site {s.id} power cap {s.power_cap:g} kW is exhausted"
        elif g.cls is ConstraintClass.LATENCY_GATE:
            w = wl[g.index[0]]
            msg = (f"workload {w.id} SLO {w.latency_slo} ms excludes otherwise eligible "
                   f"sites; edge capacity near {w.dest} would widen admissibility")
        elif g.cls is ConstraintClass.LINK_CAP:
            msg = f"link {g.index[0]}->{g.index[1]} residual capacity is exhausted"
        elif g.cls is ConstraintClass.ASSIGNMENT:
            w = wl[g.index[0]]
            msg = f"workload {w.id} ({w.power:g} kW, {w.cls.value}) cannot be placed"
        else:
            msg = g.label
        out.setdefault(lever, []).append(msg)
    return out
