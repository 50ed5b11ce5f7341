"""Warm-started bounded dual simplex for branch-and-bound node relaxations.

Rows get one logical variable each (``A x + s = b``), so the all-logical basis
is always available. A child node differs from its parent only in variable
bounds; the parent's optimal basis stays dual feasible and a handful of dual
pivots restore primal feasibility. Any numerical trouble is reported so the
caller can fall back to the two-phase primal solver.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .lp import EQ, GE, LE, LpProblem

PRIMAL_TOL = 1e-9
DUAL_TOL = 1e-9
PIVOT_TOL = 1e-9
REFACTOR_EVERY = 40
ITERATION_CAP = 5000
CACHE_SIZE = 32


@dataclass
class Basis:
    basic: np.ndarray  # column index per row
    at_upper: np.ndarray  # nonbasic status per column

    def copy(self) -> "Basis":
        return Basis(self.basic.copy(), self.at_upper.copy())


@dataclass
class DualResult:
    status: str  # "optimal", "infeasible", "failed"
    x: np.ndarray | None = None
    objective: float | None = None
    basis: Basis | None = None
    iterations: int = 0
    reduced: np.ndarray | None = None  # structural reduced costs at optimum


class DualSimplex:
    """Holds the augmented matrix ``[A | I]`` of ``problem``; solves it under
    varying structural bounds."""

    def __init__(self, problem: LpProblem):
        m, n = problem.A.shape
        self.m, self.n = m, n
        self.A = np.hstack([problem.A, np.eye(m)])
        self.As = sparse.csr_matrix(self.A)
        self.AsT = self.As.T.tocsr()
        self.b = problem.b.astype(float)
        self.c = np.concatenate([problem.c, np.zeros(m)])
        s_lo = np.where(problem.senses == GE, -np.inf, 0.0)
        s_hi = np.where(problem.senses == LE, np.inf, 0.0)
        self.slack_lb, self.slack_ub = s_lo, s_hi
        self.problem = problem
        self._inverses: OrderedDict[bytes, np.ndarray] = OrderedDict()

    def _inverse(self, basic: np.ndarray) -> np.ndarray:
        key = basic.tobytes()
        hit = self._inverses.get(key)
        if hit is not None:
            self._inverses.move_to_end(key)
            return hit.copy()
        return np.linalg.inv(self.A[:, basic])

    def _remember(self, basic: np.ndarray, binv: np.ndarray) -> None:
        self._inverses[basic.tobytes()] = binv.copy()
        if len(self._inverses) > CACHE_SIZE:
            self._inverses.popitem(last=False)

    def applicable(self, lb: np.ndarray, ub: np.ndarray) -> bool:
        """True when the all-logical start is dual feasible for these bounds."""
        if np.any(~np.isfinite(lb) & ~np.isfinite(ub)):
            return False
        neg = self.problem.c < 0
        return not np.any(neg & ~np.isfinite(ub)) and not np.any(
            (self.problem.c > 0) & ~np.isfinite(lb))

    def initial_basis(self, lb: np.ndarray, ub: np.ndarray) -> Basis:
        at_upper = np.zeros(self.n + self.m, dtype=bool)
        at_upper[: self.n] = (self.problem.c < 0) & np.isfinite(ub)
        at_upper[: self.n] |= ~np.isfinite(lb)
        return Basis(np.arange(self.n, self.n + self.m), at_upper)

    def solve(self, lb: np.ndarray, ub: np.ndarray, basis: Basis) -> DualResult:
        m = self.m
        A, b, c = self.A, self.b, self.c
        lo = np.concatenate([lb, self.slack_lb])
        hi = np.concatenate([ub, self.slack_ub])
        ntot = lo.size
        basic = basis.basic.copy()
        at_upper = basis.at_upper.copy()
        is_basic = np.zeros(ntot, dtype=bool)
        is_basic[basic] = True
        fixed = lo == hi
        # nonbasic columns must rest on a finite bound
        at_upper = np.where(~np.isfinite(lo), True, np.where(~np.isfinite(hi), False, at_upper))
        try:
            Binv = self._inverse(basic)
        except np.linalg.LinAlgError:
            return DualResult("failed")
        it = 0
        since_refactor = 0
        while True:
            xn = np.where(at_upper, hi, lo)
            xn[is_basic] = 0.0
            xn = np.where(np.isfinite(xn), xn, 0.0)
            xb = Binv @ (b - self.As @ xn)
            y = c[basic] @ Binv
            d = c - self.AsT @ y
            d[is_basic] = 0.0
            if it == 0 and not self._dual_feasible(d, at_upper, is_basic, fixed):
                return DualResult("failed")
            lo_b, hi_b = lo[basic], hi[basic]
            below = lo_b - xb
            above = xb - hi_b
            infeas = np.maximum(below, above)
            scale = np.maximum(1.0, np.abs(xb))
            r = int(np.argmax(infeas / scale)) if m else -1
            if r < 0 or infeas[r] <= PRIMAL_TOL * scale[r]:
                x = xn.copy()
                x[basic] = xb
                x = np.clip(x, lo, hi)
                xs = x[: self.n]
                if it:
                    self._remember(basic, Binv)
                return DualResult("optimal", xs, float(self.problem.c @ xs),
                                  Basis(basic, at_upper), it, d[: self.n].copy())
            if it >= ITERATION_CAP:
                return DualResult("failed", iterations=it)
            alpha_r = self.AsT @ Binv[r]
            leaving_up = below[r] > 0  # basic value must rise to its lower bound
            cand = ~is_basic & ~fixed
            if leaving_up:
                ok = cand & (((~at_upper) & (alpha_r < -PIVOT_TOL))
                             | (at_upper & (alpha_r > PIVOT_TOL)))
            else:
                ok = cand & (((~at_upper) & (alpha_r > PIVOT_TOL))
                             | (at_upper & (alpha_r < -PIVOT_TOL)))
            idx = np.flatnonzero(ok)
            if idx.size == 0:
                return DualResult("infeasible", iterations=it, basis=Basis(basic, at_upper))
            ratios = np.abs(d[idx]) / np.abs(alpha_r[idx])
            t = ratios.min()
            ties = idx[ratios <= t + DUAL_TOL]
            q = int(ties[np.argmax(np.abs(alpha_r[ties]))])
            leaving = basic[r]
            at_upper[leaving] = not leaving_up
            is_basic[leaving] = False
            is_basic[q] = True
            at_upper[q] = False
            basic[r] = q
            it += 1
            since_refactor += 1
            if since_refactor >= REFACTOR_EVERY:
                try:
                    Binv = np.linalg.inv(A[:, basic])
                except np.linalg.LinAlgError:
                    return DualResult("failed", iterations=it)
                since_refactor = 0
            else:
                col = Binv @ A[:, q]
                piv = col[r]
                if abs(piv) < PIVOT_TOL:
                    return DualResult("failed", iterations=it)
                Binv[r] /= piv
                col[r] = 0.0
                Binv -= np.outer(col, Binv[r])

    @staticmethod
    def _dual_feasible(d, at_upper, is_basic, fixed) -> bool:
        nb = ~is_basic & ~fixed
        bad_lo = nb & ~at_upper & (d < -1e-7)
        bad_hi = nb & at_upper & (d > 1e-7)
        return not (bad_lo.any() or bad_hi.any())
