"""Certified MILP solving by best-first branch-and-bound over the placement
binaries, plus an exhaustive oracle for small instances."""

from __future__ import annotations

import enum
import heapq
import itertools
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import sparse

from .formulation import ConstraintClass, Group, MilpInstance
from .dual import Basis, DualSimplex
from .lp import GE, LE, LpProblem, LpStatus, solve_lp
from .model import Placement
from .routing import paths_to_flows

INT_TOL = 1e-6
PRUNE_TOL = 1e-9
BRUTE_FORCE_GUARD = 10**6


class SolveStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    TIMEOUT = "Timeout"


class OracleSizeError(ValueError):
    pass


@dataclass
class SolveOutcome:
    status: SolveStatus
    placement: Placement | None = None
    objective: float | None = None
    bound: float | None = None
    gap: float | None = None
    nodes: int = 0
    wall_time: float = 0.0
    groups: list[Group] = field(default_factory=list)
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


def placement_from_vector(instance: MilpInstance, x: np.ndarray) -> Placement:
    ctx = instance.context
    sites = {s.id: s for s in ctx.snapshot.sites}
    wl = {w.id: w for w in ctx.workloads}
    assignment: dict[str, str] = {}
    path_flows: dict[str, list] = {}
    for j, v in enumerate(instance.variables):
        if v.kind == "x" and x[j] > 0.5:
            assignment[v.workload] = v.site
        elif v.kind == "w" and x[j] > 1e-12:
            path_flows.setdefault(v.workload, []).append((v.path, float(x[j])))
    flows: dict[tuple[str, str, str], float] = {}
    for wid, pw in path_flows.items():
        for (a, b), f in paths_to_flows(pw).items():
            flows[(a, b, wid)] = f
    carbon = sum(sites[s].effective_carbon * wl[k].power for k, s in assignment.items())
    water = sum(sites[s].water_intensity * wl[k].power for k, s in assignment.items())
    return Placement(
        assignment=assignment,
        flows=flows,
        path_flows={k: tuple(v) for k, v in path_flows.items()},
        objective=float(instance.objective @ x),
        carbon_rate=carbon,
        water_rate=water,
    )


def _with_bounds(lp: LpProblem, lb: np.ndarray, ub: np.ndarray) -> LpProblem:
    p = object.__new__(LpProblem)
    p.c, p.A, p.senses, p.b, p.lb, p.ub = lp.c, lp.A, lp.senses, lp.b, lb, ub
    return p


def _greedy(instance: MilpInstance) -> dict[str, str] | None:
    """Cheapest-site assignment followed by a capacity repair pass."""
    ctx = instance.context
    sites = {s.id: s for s in ctx.snapshot.sites}
    cost = {key: instance.objective[j] for key, j in instance.x_index.items()}
    cands: dict[str, list[str]] = {w.id: [] for w in ctx.workloads}
    for (sid, wid) in instance.x_index:
        cands[wid].append(sid)
    assign: dict[str, str] = {}
    for w in ctx.workloads:
        if not cands[w.id]:
            return None
        assign[w.id] = min(cands[w.id], key=lambda s: (cost[(s, w.id)], s))
    power = {w.id: w.power for w in ctx.workloads}

    def loads() -> dict[str, float]:
        out = {sid: 0.0 for sid in sites}
        for k, s in assign.items():
            out[s] += power[k]
        return out

    def over(sid: str, load: float) -> bool:
        s = sites[sid]
        return load > s.power_cap or s.water_intensity * load > s.water_permit

    for _ in range(4 * len(assign) + 4):
        ld = loads()
        bad = sorted(s for s in sites if over(s, ld[s]))
        if not bad:
            return assign
        best = None
        for k, s in sorted(assign.items()):
            if s not in bad:
                continue
            for t in cands[k]:
                if t == s or over(t, ld[t] + power[k]):
                    continue
                delta = cost[(t, k)] - cost[(s, k)]
                if best is None or delta < best[0]:
                    best = (delta, k, t)
        if best is None:
            return None
        assign[best[1]] = best[2]
    return None


class _NodeSolver:
    """Node relaxations: warm dual simplex first, cold primal simplex as fallback."""

    def __init__(self, lp: LpProblem):
        self.lp = lp
        self.dual = DualSimplex(lp)
        self.warm = self.dual.applicable(lp.lb, lp.ub)
        self.fallbacks = 0
        self.row_tol = 1e-7 * max(1.0, float(np.abs(lp.b).max(initial=0.0)))
        self._As = sparse.csr_matrix(lp.A)

    def _row_violation(self, x: np.ndarray) -> float:
        r = self._As @ x - self.lp.b
        s = self.lp.senses
        v = np.where(s == LE, np.maximum(r, 0.0), np.where(s == GE, np.maximum(-r, 0.0), np.abs(r)))
        return float(v.max(initial=0.0))

    def solve(self, lb: np.ndarray, ub: np.ndarray, basis: Basis | None = None):
        """Return ``(status, x, objective, basis, reduced costs)``."""
        if self.warm:
            start = basis if basis is not None else self.dual.initial_basis(lb, ub)
            res = self.dual.solve(lb, ub, start)
            if res.status == "optimal":
                if self._row_violation(res.x) <= self.row_tol:
                    return LpStatus.OPTIMAL, res.x, res.objective, res.basis, res.reduced
            elif res.status == "infeasible":
                return LpStatus.INFEASIBLE, None, None, None, None
            self.fallbacks += 1
        cold = solve_lp(_with_bounds(self.lp, lb, ub))
        if cold.status not in (LpStatus.OPTIMAL, LpStatus.INFEASIBLE):
            raise RuntimeError(f"relaxation failed: {cold.status} {cold.message}")
        return cold.status, cold.x, cold.objective, None, None

    def fixed(self, instance: MilpInstance, assign: Mapping[str, str],
              basis: Basis | None = None):
        lb = self.lp.lb.copy()
        ub = self.lp.ub.copy()
        for (sid, wid), j in instance.x_index.items():
            lb[j] = ub[j] = 1.0 if assign.get(wid) == sid else 0.0
        status, x, obj, _, _ = self.solve(lb, ub, basis)
        return (x, obj) if status is LpStatus.OPTIMAL else None


class _Propagator:
    """Bound propagation over the pure-binary rows.

    Knapsack rows (power, water, no-good) fix a free binary to 0 once the
    load already committed leaves no room for it; assignment rows fix the
    last free candidate to 1 and clear the rest once a site is chosen.
    """

    def __init__(self, instance: MilpInstance):
        is_bin = np.zeros(len(instance.variables), dtype=bool)
        is_bin[instance.binaries] = True
        kr, kc, ka, krhs = [], [], [], []
        ar, ac = [], []
        for row in instance.rows:
            if not row.coeffs:
                continue
            idx = [j for j, _ in row.coeffs]
            a = [v for _, v in row.coeffs]
            if not is_bin[idx].all():
                continue
            if row.sense == "<=" and min(a) >= 0:
                kr += [len(krhs)] * len(idx)
                kc += idx
                ka += a
                krhs.append(float(row.rhs))
            elif row.sense == "==" and row.rhs == 1.0 and all(v == 1.0 for v in a):
                n = 1 + (ar[-1] if ar else -1)
                ar += [n] * len(idx)
                ac += idx
        self.kr, self.kc = np.array(kr, dtype=int), np.array(kc, dtype=int)
        self.ka, self.krhs = np.array(ka, dtype=float), np.array(krhs, dtype=float)
        self.ktol = 1e-9 * np.maximum(1.0, np.abs(self.krhs))
        self.ar, self.ac = np.array(ar, dtype=int), np.array(ac, dtype=int)
        self.n_assign = (int(self.ar.max()) + 1) if self.ar.size else 0

    def run(self, lb: np.ndarray, ub: np.ndarray) -> bool:
        """Tighten ``lb``/``ub`` in place; False when the node is infeasible."""
        nk = self.krhs.size
        while True:
            changed = False
            if nk:
                load = np.bincount(self.kr, weights=self.ka * lb[self.kc], minlength=nk)
                room = self.krhs + self.ktol - load
                if (room < 0).any():
                    return False
                free = lb[self.kc] < ub[self.kc]
                drop = free & (self.ka > room[self.kr])
                if drop.any():
                    ub[self.kc[drop]] = 0.0
                    changed = True
            if self.n_assign:
                one = lb[self.ac] > 0.5
                free = (ub[self.ac] > 0.5) & ~one
                ones = np.bincount(self.ar, weights=one, minlength=self.n_assign)
                frees = np.bincount(self.ar, weights=free, minlength=self.n_assign)
                if (ones > 1).any() or ((ones == 0) & (frees == 0)).any():
                    return False
                clear = free & (ones[self.ar] == 1)
                force = free & (ones[self.ar] == 0) & (frees[self.ar] == 1)
                if clear.any():
                    ub[self.ac[clear]] = 0.0
                    changed = True
                if force.any():
                    lb[self.ac[force]] = 1.0
                    changed = True
            if not changed:
                return True


def cutoff(incumbent: float) -> float:
    """Bound above which a node cannot improve the incumbent."""
    if not np.isfinite(incumbent):
        return np.inf
    return incumbent - PRUNE_TOL * max(1.0, abs(incumbent))


def solve(instance: MilpInstance, budget: float = 300.0) -> SolveOutcome:
    """Best-first branch-and-bound; ``budget`` is wall-clock seconds."""
    start = time.perf_counter()
    groups = instance.groups()

    def done(status, x=None, bound=None, nodes=0, msg=""):
        out = SolveOutcome(status, nodes=nodes, wall_time=time.perf_counter() - start,
                           groups=groups if status is SolveStatus.INFEASIBLE else [],
                           message=msg)
        if x is not None:
            out.placement = placement_from_vector(instance, x)
            out.objective = float(instance.objective @ x)
            out.bound = out.objective if bound is None else bound
            out.gap = max(0.0, out.objective - out.bound)
        elif bound is not None:
            out.bound = bound
        return out

    if instance.trivially_infeasible:
        return done(SolveStatus.INFEASIBLE, msg="a workload has no admissible site")
    lp = instance.to_lp()
    nodes_lp = _NodeSolver(lp)
    bins = np.array(instance.binaries, dtype=int)
    prop = _Propagator(instance)
    root_lb, root_ub = lp.lb.copy(), lp.ub.copy()
    if not prop.run(root_lb, root_ub):
        return done(SolveStatus.INFEASIBLE, nodes=1, msg="bound propagation at root")
    status, root_x, root_obj, root_basis, root_d = nodes_lp.solve(root_lb, root_ub)
    if status is LpStatus.INFEASIBLE:
        return done(SolveStatus.INFEASIBLE, nodes=1, msg="root relaxation infeasible")

    inc_x: np.ndarray | None = None
    inc_obj = np.inf
    greedy = _greedy(instance)
    if greedy is not None:
        res = nodes_lp.fixed(instance, greedy, root_basis)
        if res is not None:
            inc_x, inc_obj = res
    # in the control loop the running placement is usually near-optimal
    running = instance.context.incumbent or {}
    if running and running != greedy and all(
            (running.get(w.id), w.id) in instance.x_index for w in instance.context.workloads):
        res = nodes_lp.fixed(instance, running, root_basis)
        if res is not None and res[1] < inc_obj:
            inc_x, inc_obj = res

    counter = itertools.count()
    heap: list = []
    # ties on the bound go to the deepest node, so pure feasibility searches dive
    node = (root_obj, 0, next(counter), root_lb, root_ub, root_x, root_basis, root_d)
    nodes = 1
    while node is not None or heap:
        if time.perf_counter() - start > budget:
            open_bounds = [h[0] for h in heap] + ([node[0]] if node is not None else [])
            bound = min(min(open_bounds), inc_obj)
            return done(SolveStatus.TIMEOUT, inc_x, bound, nodes, "budget exhausted")
        if node is None:
            node = heapq.heappop(heap)
        bound, neg_depth, _, lb, ub, x, basis, red = node
        node = None
        limit = cutoff(inc_obj)
        if bound >= limit:
            continue
        if red is not None and np.isfinite(limit):
            _reduced_cost_fixing(bins, x, red, bound, limit, lb, ub)
            if not prop.run(lb, ub):
                continue
            if np.any(x < lb - INT_TOL) or np.any(x > ub + INT_TOL):
                status, x, bound, basis, red = nodes_lp.solve(lb, ub, basis)
                nodes += 1
                if status is not LpStatus.OPTIMAL or bound >= limit:
                    continue
        xb = x[bins]
        frac = np.minimum(xb - np.floor(xb), np.ceil(xb) - xb)
        j_rel = int(np.argmax(frac)) if bins.size else 0
        if bins.size == 0 or frac[j_rel] <= INT_TOL:
            assign = {}
            for j in bins:
                if x[j] > 0.5:
                    v = instance.variables[j]
                    assign[v.workload] = v.site
            res = nodes_lp.fixed(instance, assign, basis)
            if res is not None and res[1] < inc_obj:
                inc_x, inc_obj = res
            continue
        j = bins[j_rel]
        children = []
        for val in (1.0, 0.0):
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = val
            nodes += 1
            if not prop.run(clb, cub):
                continue
            status, cx, cobj, cbasis, cred = nodes_lp.solve(clb, cub, basis)
            if status is LpStatus.OPTIMAL and cobj < cutoff(inc_obj):
                children.append((cobj, neg_depth - 1, next(counter), clb, cub, cx, cbasis,
                                 cred))
        # plunge into the better child; the other waits in the best-first queue
        children.sort(key=lambda t: (t[0], t[2]))
        if children:
            node = children[0]
            for c in children[1:]:
                heapq.heappush(heap, c)
    if inc_x is None:
        return done(SolveStatus.INFEASIBLE, nodes=nodes, msg="search exhausted")
    return done(SolveStatus.OPTIMAL, inc_x, None, nodes)


def _reduced_cost_fixing(bins, x, red, bound, limit, lb, ub) -> None:
    """Fix binaries whose reduced cost alone pushes the bound past the cutoff."""
    free = lb[bins] < ub[bins]
    xb = x[bins]
    d = red[bins]
    to_zero = free & (xb <= INT_TOL) & (bound + d >= limit)
    to_one = free & (xb >= 1 - INT_TOL) & (bound - d >= limit)
    ub[bins[to_zero]] = 0.0
    lb[bins[to_one]] = 1.0


def add_nogood_cut(instance: MilpInstance, pattern: Mapping[str, str]) -> MilpInstance:
    """Exclude every solution that places each ``workload -> site`` in ``pattern``."""
    return instance.with_cut(pattern)


# ------------------------------------------------------------------ oracle


def brute_force(instance: MilpInstance, guard: int = BRUTE_FORCE_GUARD) -> SolveOutcome:
    """Enumerate every gate-respecting placement; routing is checked with an
    external LP solver (HiGHS) so this shares no numerics with :func:`solve`."""
    from scipy.optimize import linprog

    start = time.perf_counter()
    ctx = instance.context
    n_sites = len(ctx.snapshot.sites)
    if n_sites ** len(ctx.workloads) > guard:
        raise OracleSizeError(
            f"{n_sites}^{len(ctx.workloads)} placements exceed the oracle guard {guard}")
    assigned_rows = {r.group.index[0] for r in instance.rows
                     if r.group.cls is ConstraintClass.ASSIGNMENT}
    options: list[list[str | None]] = []
    for w in ctx.workloads:
        opts: list[str | None] = [s for (s, k) in instance.x_index if k == w.id]
        if w.id not in assigned_rows:
            opts.append(None)
        options.append(opts)
    wids = [w.id for w in ctx.workloads]
    x_rows = [r for r in instance.rows if r.group.cls in (
        ConstraintClass.POWER_CAP, ConstraintClass.WATER_CAP, ConstraintClass.NO_GOOD)]
    n = len(instance.variables)
    cont = [j for j, v in enumerate(instance.variables) if v.kind == "w"]
    flow_costs = bool(cont) and bool(np.any(instance.objective[cont] != 0))

    candidates = []
    for combo in itertools.product(*options):
        x = np.zeros(n)
        for wid, sid in zip(wids, combo):
            if sid is not None:
                x[instance.x_index[(sid, wid)]] = 1.0
        ok = True
        for r in x_rows:
            lhs = sum(v * x[j] for j, v in r.coeffs)
            if lhs > r.rhs + 1e-9 * max(1.0, abs(r.rhs)):
                ok = False
                break
        if ok:
            candidates.append((float(instance.objective @ x), combo, x))
    candidates.sort(key=lambda t: (t[0], tuple(s or "" for s in t[1])))

    net_rows = [r for r in instance.rows if r.group.cls in (
        ConstraintClass.FLOW_BALANCE, ConstraintClass.LINK_CAP)]
    best = None
    for cost, combo, x in candidates:
        if best is not None and not flow_costs and cost >= best[0]:
            break
        if cont and net_rows:
            col = {j: i for i, j in enumerate(cont)}
            a_eq, b_eq, a_ub, b_ub = [], [], [], []
            for r in net_rows:
                row = np.zeros(len(cont))
                rhs = r.rhs
                for j, v in r.coeffs:
                    if j in col:
                        row[col[j]] += v
                    else:
                        rhs -= v * x[j]
                (a_eq if r.sense == "==" else a_ub).append(row)
                (b_eq if r.sense == "==" else b_ub).append(rhs)
            res = linprog(instance.objective[cont],
                          A_ub=np.array(a_ub) if a_ub else None, b_ub=b_ub or None,
                          A_eq=np.array(a_eq) if a_eq else None, b_eq=b_eq or None,
                          bounds=[(0, None)] * len(cont), method="highs")
            if res.status != 0:
                continue
            x = x.copy()
            x[cont] = res.x
            total = cost + float(res.fun)
        else:
            total = cost
        if best is None or total < best[0] - 1e-12:
            best = (total, x)
    elapsed = time.perf_counter() - start
    if best is None:
        return SolveOutcome(SolveStatus.INFEASIBLE, wall_time=elapsed,
                            groups=instance.groups(), message="no placement survives")
    return SolveOutcome(SolveStatus.OPTIMAL, placement_from_vector(instance, best[1]),
                        best[0], best[0], 0.0, len(candidates), elapsed)
