"""Reference implementations that share no code with the package under test.

Each one is written from the problem definition only: vertex enumeration for
LPs, a HiGHS MILP on the exported matrices, and a constraint checker that
reads the raw snapshot instead of the formulation rows.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

C_FIBRE_KM_PER_MS = 299792.458 / 1.468 / 1000.0


# ------------------------------------------------------------------- LP


def vertex_lp(c, A, senses, b, lb, ub, tol=1e-9):
    """Minimize c.x over a bounded polytope by trying every basis.

    Returns ("Optimal", x, obj) or ("Infeasible", None, None). Bounds must be
    finite so that a nonempty feasible set always has a vertex.
    """
    c = np.asarray(c, float)
    A = np.asarray(A, float).reshape(-1, c.size)
    n = c.size
    planes = []  # (a, rhs)
    for i in range(A.shape[0]):
        planes.append((A[i], b[i]))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        planes.append((e, lb[j]))
        planes.append((e, ub[j]))
    best = None
    for combo in itertools.combinations(range(len(planes)), n):
        M = np.array([planes[k][0] for k in combo])
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, np.array([planes[k][1] for k in combo]))
        if not _lp_feasible(x, A, senses, b, lb, ub, tol * 100):
            continue
        v = float(c @ x)
        if best is None or v < best[1] - 1e-12:
            best = (x, v)
    if best is None:
        return "Infeasible", None, None
    return "Optimal", best[0], best[1]


def _lp_feasible(x, A, senses, b, lb, ub, tol):
    if np.any(x < np.asarray(lb) - tol) or np.any(x > np.asarray(ub) + tol):
        return False
    ax = A @ x
    for i, s in enumerate(senses):
        if s == "<=" and ax[i] > b[i] + tol:
            return False
        if s == ">=" and ax[i] < b[i] - tol:
            return False
        if s == "==" and abs(ax[i] - b[i]) > tol:
            return False
    return True


# ----------------------------------------------------------------- MILP


def highs_milp(instance):
    """Solve the exported matrices with HiGHS; returns (status, objective)."""
    lp = instance.to_lp()
    n = lp.c.size
    if n == 0:
        ok = _lp_feasible(np.zeros(0), lp.A, _senses(lp.senses), lp.b, [], [], 1e-9)
        return ("Optimal", 0.0) if ok else ("Infeasible", None)
    integrality = np.zeros(n)
    integrality[list(instance.binaries)] = 1
    cons = []
    if lp.A.shape[0]:
        lo = np.where(lp.senses == 1, lp.b, -np.inf)  # GE rows
        hi = np.where(lp.senses == -1, lp.b, np.inf)  # LE rows
        eq = lp.senses == 0
        lo = np.where(eq, lp.b, lo)
        hi = np.where(eq, lp.b, hi)
        cons.append(LinearConstraint(lp.A, lo, hi))
    res = milp(lp.c, constraints=cons, integrality=integrality, bounds=Bounds(lp.lb, lp.ub),
               options={"mip_rel_gap": 0.0})
    if res.status == 0:
        return "Optimal", float(res.fun)
    if res.status == 2:
        return "Infeasible", None
    return f"status{res.status}", None


def _senses(codes):
    return [{-1: "<=", 0: "==", 1: ">="}[int(c)] for c in codes]


# --------------------------------------------------- hard constraints


def shortest_delays(snapshot):
    ids = [s.id for s in snapshot.sites]
    d = {(a, b): (0.0 if a == b else math.inf) for a in ids for b in ids}
    for l in snapshot.links:
        if not l.alarmed:
            d[(l.src, l.dst)] = min(d[(l.src, l.dst)], l.delay)
    for k in ids:
        for i in ids:
            for j in ids:
                if d[(i, k)] + d[(k, j)] < d[(i, j)]:
                    d[(i, j)] = d[(i, k)] + d[(k, j)]
    return d


def hard_violations(snapshot, workloads, placement, tol=1e-7):
    """Every violated hard constraint of a fresh placement (no incumbent)."""
    out = []
    sites = {s.id: s for s in snapshot.sites}
    links = {(l.src, l.dst): l for l in snapshot.links if not l.alarmed}
    x = placement.assignment
    load = {}
    for w in workloads:
        sid = x.get(w.id)
        if sid not in sites:
            out.append(f"{w.id} unassigned")
            continue
        load[sid] = load.get(sid, 0.0) + w.power
    for sid, p in load.items():
        s = sites[sid]
        covered = (s.onsite_gen + s.onsite_batt) / s.power_cap if s.power_cap > 0 else 0.0
        eff = s.carbon_intensity * max(0.0, 1.0 - covered)
        if eff > s.carbon_ceiling:
            out.append(f"carbon gate at {sid}")
        if p > s.power_cap * (1 + 1e-9):
            out.append(f"power at {sid}")
        if s.water_intensity * p > s.water_permit * (1 + 1e-9) + 1e-9:
            out.append(f"water at {sid}")
    delays = shortest_delays(snapshot)
    edge_total = {}
    for (a, b, k), v in placement.flows.items():
        if v < -tol:
            out.append(f"negative flow {k}")
        if abs(v) > tol and (a, b) not in links:
            out.append(f"flow on missing link {a}->{b}")
        edge_total[(a, b)] = edge_total.get((a, b), 0.0) + v
    for e, v in edge_total.items():
        l = links.get(e)
        if l is not None and v > l.capacity * (1 - l.utilization) + tol:
            out.append(f"link capacity {e}")
    for w in workloads:
        sid = x.get(w.id)
        if sid not in sites:
            continue
        if w.latency_slo is not None and delays[(sid, w.dest)] > w.latency_slo + 1e-9:
            out.append(f"latency gate {w.id} at {sid}")
        f = {(a, b): v for (a, b, k), v in placement.flows.items() if k == w.id}
        for node in sites:
            net = sum(v for (a, _), v in f.items() if a == node) - \
                sum(v for (_, b), v in f.items() if b == node)
            rhs = w.traffic * ((node == sid) - (node == w.dest))
            if abs(net - rhs) > tol * max(1.0, w.traffic):
                out.append(f"flow balance {w.id} at {node}")
        # the recorded path split must add up to the arc flows, path by path in budget
        arc = {}
        for path, v in placement.path_flows.get(w.id, ()):
            if path[0] != sid or path[-1] != w.dest:
                out.append(f"path endpoints {w.id}")
            for e in zip(path, path[1:]):
                arc[e] = arc.get(e, 0.0) + v
            if w.latency_slo is not None and v > tol:
                d = sum(links[e].delay for e in zip(path, path[1:]) if e in links)
                if d > w.latency_slo + 1e-9:
                    out.append(f"path delay {w.id}")
        for e in set(arc) | set(f):
            if abs(arc.get(e, 0.0) - f.get(e, 0.0)) > tol * max(1.0, w.traffic):
                out.append(f"path split {w.id} on {e}")
    return out

