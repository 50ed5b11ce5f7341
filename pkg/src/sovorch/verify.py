"""Independent full-constraint check of a placement against raw telemetry.

Nothing here reads a built MILP instance: every condition is re-derived from
the snapshot and workload list so the check does not share code paths with
the formulation it is auditing.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Mapping, Sequence

from .formulation import ConstraintClass, effective_latency_budget, transfer_bandwidth
from .model import Placement, TelemetrySnapshot, Workload
from .routing import Graph, flows_to_paths, path_delay

ROW_TOL = 1e-7
CAP_TOL = 1e-9


def verify_placement(
    snapshot: TelemetrySnapshot,
    workloads: Sequence[Workload],
    placement: Placement,
    incumbent: Mapping[str, str] | None = None,
    relaxed: Iterable[ConstraintClass] = (),
    network_free: bool = False,
) -> list[str]:
    """Return the list of violated constraints (empty when the placement holds)."""
    relaxed = set(relaxed)
    incumbent = {k: v for k, v in (incumbent or {}).items() if v in snapshot.site_ids}
    out: list[str] = []
    sites = {s.id: s for s in snapshot.sites}
    graph = Graph.from_snapshot(snapshot)
    x = placement.assignment

    for w in workloads:
        sid = x.get(w.id)
        if sid is None:
            out.append(f"assignment: {w.id} unplaced")
        elif sid not in sites:
            out.append(f"assignment: {w.id} placed at unknown site {sid}")
    extra = set(x) - {w.id for w in workloads}
    if extra:
        out.append(f"assignment: unknown workloads {sorted(extra)}")

    load: dict[str, float] = defaultdict(float)
    for w in workloads:
        if x.get(w.id) in sites:
            load[x[w.id]] += w.power
    for sid, p in load.items():
        s = sites[sid]
        if ConstraintClass.CARBON_GATE not in relaxed and s.effective_carbon > s.carbon_ceiling:
            out.append(f"carbon: site {sid} intensity {s.effective_carbon:g} above ceiling")
        if ConstraintClass.POWER_CAP not in relaxed and p > s.power_cap * (1 + CAP_TOL):
            out.append(f"power: site {sid} load {p:g} > {s.power_cap:g}")
        if (ConstraintClass.WATER_CAP not in relaxed
                and s.water_intensity * p > s.water_permit * (1 + CAP_TOL) + CAP_TOL):
            out.append(f"water: site {sid} draw {s.water_intensity * p:g} > {s.water_permit:g}")

    for w in workloads:
        src = incumbent.get(w.id)
        if src is not None and not w.portable and x.get(w.id) not in (None, src):
            out.append(f"immobile: {w.id} moved from {src}")

    if network_free:
        return out

    per_wl: dict[str, dict[tuple[str, str], float]] = defaultdict(dict)
    for (a, b, k), v in placement.flows.items():
        if v < -ROW_TOL:
            out.append(f"flow: negative flow {v:g} on {a}->{b} for {k}")
        if (a, b) not in graph.edges and abs(v) > ROW_TOL:
            out.append(f"flow: {k} uses unavailable link {a}->{b}")
        per_wl[k][(a, b)] = v

    edge_load: dict[tuple[str, str], float] = defaultdict(float)
    for (a, b, _), v in placement.flows.items():
        edge_load[(a, b)] += v
    if ConstraintClass.LINK_CAP not in relaxed:
        for e, v in edge_load.items():
            link = graph.edges.get(e)
            if link is not None and v > link.residual_capacity + ROW_TOL:
                out.append(f"link: {e[0]}->{e[1]} carries {v:g} > {link.residual_capacity:g}")

    for w in workloads:
        sid = x.get(w.id)
        if sid not in sites:
            continue
        f = per_wl.get(w.id, {})
        for node in snapshot.site_ids:
            net = sum(v for (a, _), v in f.items() if a == node) - sum(
                v for (_, b), v in f.items() if b == node)
            rhs = w.traffic * ((1.0 if node == sid else 0.0) - (1.0 if node == w.dest else 0.0))
            if abs(net - rhs) > ROW_TOL * max(1.0, w.traffic):
                out.append(f"flow balance: {w.id} at {node} net {net:g} != {rhs:g}")
        if ConstraintClass.LATENCY_GATE in relaxed:
            continue
        src = incumbent.get(w.id)
        moving = src is not None and src != sid
        bw = transfer_bandwidth(graph, src, sid) if moving else None
        budget = effective_latency_budget(w, src, sid, snapshot, graph, bandwidth=bw)
        if budget is None:
            continue
        if moving and budget <= 0:
            out.append(f"latency: migration of {w.id} leaves no budget ({budget:g} ms)")
            continue
        try:
            delays = [(p, path_delay(p, graph)) for p, _ in flows_to_paths(f, sid, w.dest)]
        except ValueError as exc:
            out.append(f"latency: {w.id} flow decomposition failed ({exc})")
            continue
        for path, d in delays:
            if d > budget + CAP_TOL:
                out.append(f"latency: {w.id} path {'->'.join(path)} {d:g} ms > {budget:g} ms")
    return out
