"""Dense bounded-variable primal simplex (two phase, tableau form).

Problems are ``min c.x`` subject to ``A x (<=|==|>=) b`` and ``lb <= x <= ub``.
Nonbasic variables rest at either bound, so box constraints never become rows.
Dantzig pricing is used until a run of degenerate pivots trips a counter, after
which Bland's rule takes over until the objective moves again.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-9
OPT_TOL = 1e-9
DEGENERATE_LIMIT = 30

LE, EQ, GE = -1, 0, 1
_SENSE = {"<=": LE, "==": EQ, "=": EQ, ">=": GE, LE: LE, EQ: EQ, GE: GE}


class LpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERIC_FAILURE = "NumericFailure"


@dataclass
class LpProblem:
    c: np.ndarray
    A: np.ndarray
    senses: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __init__(self, c, A, senses, b, lb=None, ub=None):
        c = np.asarray(c, dtype=float).ravel()
        n = c.size
        A = np.asarray(A, dtype=float)
        if A.size == 0 and A.ndim != 2:
            A = A.reshape(0, n)
        if A.ndim != 2 or A.shape[1] != n:
            raise ValueError(f"constraint matrix shape {A.shape} does not match {n} variables")
        m = A.shape[0]
        senses = np.array([_SENSE[s] for s in senses], dtype=int)
        b = np.asarray(b, dtype=float).ravel()
        if senses.size != m or b.size != m:
            raise ValueError("senses and rhs must have one entry per row")
        lb = np.zeros(n) if lb is None else np.asarray(lb, dtype=float).ravel()
        ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float).ravel()
        if lb.size != n or ub.size != n:
            raise ValueError("bounds must have one entry per variable")
        if np.any(lb > ub):
            raise ValueError("lower bound exceeds upper bound")
        self.c, self.A, self.senses, self.b, self.lb, self.ub = c, A, senses, b, lb, ub

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def max_violation(self, x: np.ndarray) -> tuple[float, float]:
        """(row violation, bound violation) of ``x``."""
        ax = self.A @ x
        r = ax - self.b
        row = np.where(self.senses == LE, np.maximum(r, 0.0),
                       np.where(self.senses == GE, np.maximum(-r, 0.0), np.abs(r)))
        bnd = np.maximum(np.maximum(self.lb - x, x - self.ub), 0.0)
        return (float(row.max(initial=0.0)), float(bnd.max(initial=0.0)))


@dataclass
class LpResult:
    status: LpStatus
    x: np.ndarray | None = None
    objective: float | None = None
    residual: float = 0.0  # phase-1 infeasibility when Infeasible
    iterations: int = 0
    row_violation: float = 0.0
    bound_violation: float = 0.0
    message: str = ""
    extra: dict = field(default_factory=dict)


class _Tableau:
    """Working state for the bounded-variable simplex on ``T x = beta``."""

    def __init__(self, T, beta, upper, basis, at_upper):
        self.T = T
        self.beta = beta  # basic values
        self.upper = upper
        self.basis = basis
        self.at_upper = at_upper
        self.iterations = 0

    def nonbasic_value(self, j):
        return self.upper[j] if self.at_upper[j] else 0.0

    def run(self, cost: np.ndarray, max_iter: int) -> str:
        T, up = self.T, self.upper
        m, n = T.shape
        is_basic = np.zeros(n, dtype=bool)
        is_basic[self.basis] = True
        d = cost - cost[self.basis] @ T
        degenerate = 0
        bland = False
        while True:
            if self.iterations >= max_iter:
                return "iterations"
            elig_lo = (~is_basic) & (~self.at_upper) & (d < -OPT_TOL) & (up > 0)
            elig_hi = (~is_basic) & self.at_upper & (d > OPT_TOL)
            elig = elig_lo | elig_hi
            if not elig.any():
                return "optimal"
            if bland:
                q = int(np.flatnonzero(elig)[0])
            else:
                score = np.where(elig, np.abs(d), -1.0)
                q = int(np.argmax(score))
            delta = 1.0 if not self.at_upper[q] else -1.0
            alpha = T[:, q]
            da = delta * alpha
            t_best = up[q]
            r_best = -1
            hit_upper = False
            ub_basic = up[self.basis]
            with np.errstate(divide="ignore", invalid="ignore"):
                dec = da > PIVOT_TOL
                inc = (da < -PIVOT_TOL) & np.isfinite(ub_basic)
                ratios = np.full(m, np.inf)
                ratios[dec] = np.maximum(self.beta[dec], 0.0) / da[dec]
                ratios[inc] = np.maximum(ub_basic[inc] - self.beta[inc], 0.0) / (-da[inc])
            if m:
                t_min = ratios.min()
                if t_min < t_best - 1e-12 or (np.isinf(t_best) and np.isfinite(t_min)):
                    ties = np.flatnonzero(ratios <= t_min + 1e-12)
                    if bland:
                        r_best = int(ties[np.argmin(self.basis[ties])])
                    else:
                        r_best = int(ties[np.argmax(np.abs(alpha[ties]))])
                    t_best = t_min
                    hit_upper = bool(inc[r_best])
            if np.isinf(t_best):
                return "unbounded"
            self.iterations += 1
            if t_best <= 1e-12:
                degenerate += 1
                if degenerate > DEGENERATE_LIMIT:
                    bland = True
            else:
                degenerate = 0
                bland = False
            self.beta -= t_best * da
            if r_best < 0:
                # entering variable reaches its opposite bound
                self.at_upper[q] = not self.at_upper[q]
                continue
            entering_value = t_best if delta > 0 else up[q] - t_best
            leaving = self.basis[r_best]
            self.at_upper[leaving] = hit_upper
            is_basic[leaving] = False
            is_basic[q] = True
            self.at_upper[q] = False
            self.basis[r_best] = q
            self.beta[r_best] = entering_value
            piv = T[r_best, q]
            T[r_best] /= piv
            col = T[:, q].copy()
            col[r_best] = 0.0
            T -= np.outer(col, T[r_best])
            d -= d[q] * T[r_best]
            d[q] = 0.0


def solve_lp(problem: LpProblem, max_iter: int = 50_000) -> LpResult:
    """Solve ``problem``; see module docstring for the method."""
    c0, A0, senses, b0, lb, ub = (problem.c, problem.A, problem.senses,
                                  problem.b, problem.lb, problem.ub)
    m, n = A0.shape

    # variable substitution so every internal column lives in [0, u]
    cols, offs, mult, uppers = [], np.zeros(n), [], []
    for j in range(n):
        lo, hi = lb[j], ub[j]
        if np.isfinite(lo):
            offs[j] = lo
            cols.append(A0[:, j]); mult.append((j, 1.0)); uppers.append(hi - lo)
        elif np.isfinite(hi):
            offs[j] = hi
            cols.append(-A0[:, j]); mult.append((j, -1.0)); uppers.append(np.inf)
        else:
            cols.append(A0[:, j]); mult.append((j, 1.0)); uppers.append(np.inf)
            cols.append(-A0[:, j]); mult.append((j, -1.0)); uppers.append(np.inf)
    n_struct = len(cols)
    cost = np.array([c0[j] * s for j, s in mult])
    A = np.column_stack(cols) if cols else np.zeros((m, 0))
    rhs = b0 - A0 @ offs

    # slacks
    slack_cols = []
    for r in range(m):
        if senses[r] != EQ:
            col = np.zeros(m)
            col[r] = 1.0 if senses[r] == LE else -1.0
            slack_cols.append((r, col))
    if slack_cols:
        A = np.hstack([A, np.column_stack([c for _, c in slack_cols])])
    n_slack = len(slack_cols)
    uppers += [np.inf] * n_slack
    cost = np.concatenate([cost, np.zeros(n_slack)])

    sign = np.where(rhs < 0, -1.0, 1.0)
    A = A * sign[:, None]
    rhs = rhs * sign

    # starting basis: slacks with +1 coefficient where possible, artificials elsewhere
    basis = np.full(m, -1, dtype=int)
    for idx, (r, _) in enumerate(slack_cols):
        j = n_struct + idx
        if A[r, j] > 0:
            basis[r] = j
    need_art = np.flatnonzero(basis < 0)
    n_main = A.shape[1]
    if need_art.size:
        art = np.zeros((m, need_art.size))
        art[need_art, np.arange(need_art.size)] = 1.0
        A = np.hstack([A, art])
        basis[need_art] = n_main + np.arange(need_art.size)
    n_tot = A.shape[1]
    upper = np.array(uppers + [np.inf] * need_art.size, dtype=float)
    at_upper = np.zeros(n_tot, dtype=bool)
    tab = _Tableau(A.copy(), rhs.copy(), upper, basis, at_upper)
    A_full = A

    residual = 0.0
    if need_art.size:
        p1 = np.zeros(n_tot)
        p1[n_main:] = 1.0
        state = tab.run(p1, max_iter)
        if state == "iterations":
            return LpResult(LpStatus.NUMERIC_FAILURE, iterations=tab.iterations,
                            message="iteration limit in phase 1")
        residual = float(sum(tab.beta[r] for r in range(m) if tab.basis[r] >= n_main))
        if residual > FEAS_TOL * max(1.0, np.abs(rhs).max(initial=0.0)):
            return LpResult(LpStatus.INFEASIBLE, residual=residual, iterations=tab.iterations)
        # drive zero-level artificials out of the basis where possible
        for r in range(m):
            if tab.basis[r] < n_main:
                continue
            row = tab.T[r, :n_main]
            is_basic = np.zeros(n_tot, dtype=bool)
            is_basic[tab.basis] = True
            cand = np.flatnonzero((np.abs(row) > 1e-7) & ~is_basic[:n_main])
            if cand.size == 0:
                continue
            q = int(cand[np.argmax(np.abs(row[cand]))])
            val = tab.nonbasic_value(q)
            T = tab.T
            T[r] /= T[r, q]
            col = T[:, q].copy(); col[r] = 0.0
            T -= np.outer(col, T[r])
            tab.basis[r] = q
            tab.at_upper[q] = False
            tab.beta[r] = val
        upper[n_main:] = 0.0
        tab.at_upper[n_main:] = False

    full_cost = np.concatenate([cost, np.zeros(n_tot - cost.size)])
    state = tab.run(full_cost, max_iter)
    if state == "iterations":
        return LpResult(LpStatus.NUMERIC_FAILURE, iterations=tab.iterations,
                        message="iteration limit in phase 2")
    if state == "unbounded":
        return LpResult(LpStatus.UNBOUNDED, iterations=tab.iterations)

    z = np.where(tab.at_upper, upper, 0.0)
    z[tab.basis] = tab.beta
    # refine basic values against the original columns
    Bmat = A_full[:, tab.basis]
    nb = np.ones(n_tot, dtype=bool)
    nb[tab.basis] = False
    r_vec = rhs - A_full[:, nb] @ z[nb]
    try:
        zb = np.linalg.solve(Bmat, r_vec) if m else np.zeros(0)
        if np.all(np.isfinite(zb)):
            z[tab.basis] = zb
    except np.linalg.LinAlgError:
        pass
    z = np.clip(z, 0.0, upper)
    x = offs.copy()
    for k, (j, s) in enumerate(mult):
        x[j] += s * z[k]
    x = np.clip(x, lb, ub)
    row_v, bnd_v = problem.max_violation(x)
    status = LpStatus.OPTIMAL
    msg = ""
    scale = max(1.0, float(np.abs(problem.b).max(initial=0.0)))
    if row_v > FEAS_TOL * scale:
        status, msg = LpStatus.NUMERIC_FAILURE, f"row residual {row_v:.3g} after refinement"
    return LpResult(status, x=x, objective=float(c0 @ x), residual=residual,
                    iterations=tab.iterations, row_violation=row_v,
                    bound_violation=bnd_v, message=msg)
