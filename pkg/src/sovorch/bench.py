"""Solve-time benchmark over random instances, one row per scale."""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field
from typing import Sequence

from .bnb import SolveStatus, solve
from .formulation import build_instance
from .instances import InstanceParams, random_instance

SCALES = {"small": (4, 10), "medium": (6, 15), "large": (8, 20)}
SCALE_LABELS = {"small": "Small", "medium": "Medium", "large": "Large"}
COLUMNS = ("Scenario", "N", "M", "Binary", "Continuous", "Opt.", "Min", "Median", "Mean", "Max")


@dataclass
class Trial:
    seed: int
    status: SolveStatus
    seconds: float
    binaries: int
    nominal_binaries: int
    continuous: int
    nodes: int
    objective: float | None


@dataclass
class BenchRow:
    scale: str
    n: int
    m: int
    trials: list[Trial] = field(default_factory=list)

    @property
    def optimal(self) -> int:
        return sum(t.status is SolveStatus.OPTIMAL for t in self.trials)

    def table_row(self) -> dict:
        secs = [t.seconds for t in self.trials]
        cont = {t.continuous for t in self.trials}
        return {
            "Scenario": SCALE_LABELS.get(self.scale, self.scale),
            "N": self.n, "M": self.m,
            "Binary": f"<= {max(t.binaries for t in self.trials)}",
            "Continuous": cont.pop() if len(cont) == 1 else "/".join(map(str, sorted(cont))),
            "Opt.": f"{self.optimal}/{len(self.trials)}",
            "Min": f"{min(secs):.2f}", "Median": f"{statistics.median(secs):.2f}",
            "Mean": f"{statistics.fmean(secs):.2f}", "Max": f"{max(secs):.2f}",
        }


def run_trial(n: int, m: int, seed: int, alpha: float = 0.5, budget: float = 300.0,
              params: InstanceParams | None = None) -> Trial:
    snap, ws = random_instance(n, m, seed, params)
    t0 = time.perf_counter()
    inst = build_instance(snap, ws, alpha)
    out = solve(inst, budget)
    secs = time.perf_counter() - t0  # build included, as a modelling layer would be
    return Trial(seed, out.status, secs, inst.meta["binaries"], inst.meta["nominal_binaries"],
                 inst.meta["nominal_continuous"], out.nodes, out.objective)


def run_bench(scales: Sequence[str] = tuple(SCALES), seeds: Sequence[int] = range(5),
              alpha: float = 0.5, budget: float = 300.0, progress=None) -> list[BenchRow]:
    rows = []
    for scale in scales:
        if scale not in SCALES:
            raise ValueError(f"unknown scale {scale!r}; expected one of {sorted(SCALES)}")
        n, m = SCALES[scale]
        row = BenchRow(scale, n, m)
        for s in seeds:
            tr = run_trial(n, m, s, alpha, budget)
            row.trials.append(tr)
            if progress is not None:
                progress(scale, tr)
        rows.append(row)
    return rows


def to_csv(rows: Sequence[BenchRow], budget: float = 300.0) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.table_row())
    buf.write(f"# telemetry cycle budget: {budget:g} s\n")
    return buf.getvalue()


def trials_csv(rows: Sequence[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scale", "N", "M", "seed", "status", "seconds", "binaries",
                "nominal_binaries", "continuous", "nodes", "objective"])
    for r in rows:
        for t in r.trials:
            w.writerow([r.scale, r.n, r.m, t.seed, t.status.value, f"{t.seconds:.4f}",
                        t.binaries, t.nominal_binaries, t.continuous, t.nodes,
                        "" if t.objective is None else f"{t.objective:.9g}"])
    return buf.getvalue()
