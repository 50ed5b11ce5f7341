"""Closed control loop: observe, estimate, optimize, validate, execute.

Every cycle ends in exactly one of four outcomes. Certified infeasibility is
not an error: the incumbent keeps running and the certificate goes into the
cycle record for the operator.
"""

from __future__ import annotations

import enum
import json
import sys
import time
from dataclasses import dataclass, field
from typing import IO, Callable, Iterable, Mapping, Sequence

from .bnb import SolveStatus, add_nogood_cut, solve
from .formulation import FormulationOptions, MilpInstance, NormalizationWindow, build_instance
from .fsor import InfeasibilityCertificate, extract_iis
from .model import Confidence, Placement, TelemetrySnapshot, Workload, placement_to_dict
from .telemetry import Estimator, FreshnessPolicy, ReadingIndex, RawReading, ingest_report
from .twin import PlantState, TwinThresholds, advance, execute, validate
from .verify import verify_placement

RETRY_LIMIT = 5


class Outcome(str, enum.Enum):
    EXECUTED = "Executed"
    RETAINED_WITH_ALERT = "RetainedWithAlert"
    RETAINED_WITH_CERTIFICATE = "RetainedWithCertificate"
    HOLD = "Hold"


@dataclass(frozen=True)
class LoopConfig:
    alpha: float = 0.5
    cycle_seconds: float = 300.0
    horizon_minutes: float = 30.0
    budget_secs: float = 300.0
    retry_limit: int = RETRY_LIMIT
    smoothing: float = 0.2
    policy: FreshnessPolicy = field(default_factory=FreshnessPolicy)
    thresholds: TwinThresholds = field(default_factory=TwinThresholds)
    options: FormulationOptions = field(default_factory=FormulationOptions)
    window: NormalizationWindow | None = None
    # certificates cost extra solves; comparison configurations switch them off
    certificates: bool = True
    twin: bool = True


@dataclass
class CycleRecord:
    cycle: int
    timestamp: float
    outcome: Outcome
    assignment: dict[str, str]
    objective: float | None = None
    carbon_rate: float = 0.0  # g/h of whatever ran this cycle
    water_rate: float = 0.0  # L/h
    migration_carbon: float = 0.0  # g charged this cycle
    cumulative_carbon: float = 0.0
    cumulative_water: float = 0.0
    retries: int = 0
    solve_seconds: float = 0.0
    nodes: int = 0
    certificate: dict | None = None
    twin: list[dict] = field(default_factory=list)
    alerts: list[str] = field(default_factory=list)
    degraded: dict[str, str] = field(default_factory=dict)
    placement: Placement | None = None

    def to_dict(self) -> dict:
        return {
            "cycle": self.cycle, "timestamp": self.timestamp, "outcome": self.outcome.value,
            "assignment": dict(sorted(self.assignment.items())), "objective": self.objective,
            "carbon_rate": self.carbon_rate, "water_rate": self.water_rate,
            "migration_carbon": self.migration_carbon,
            "cumulative_carbon": self.cumulative_carbon,
            "cumulative_water": self.cumulative_water,
            "retries": self.retries, "solve_seconds": round(self.solve_seconds, 6),
            "nodes": self.nodes, "certificate": self.certificate, "twin": self.twin,
            "alerts": self.alerts, "degraded": dict(sorted(self.degraded.items())),
            "placement": placement_to_dict(self.placement) if self.placement else None,
        }


class ControlLoop:
    """One deployment: a plant, a telemetry source and the workload universe."""

    def __init__(
        self,
        base: TelemetrySnapshot,
        workloads: Sequence[Workload],
        readings: Iterable[RawReading] | ReadingIndex,
        config: LoopConfig | None = None,
        initial: Placement | None = None,
        log: IO[str] | None = None,
        alerts: IO[str] | None = sys.stderr,
        on_certificate: Callable[[MilpInstance, InfeasibilityCertificate], None] | None = None,
    ):
        self.base = base
        self.workloads = list(workloads)
        self.index = readings if isinstance(readings, ReadingIndex) else ReadingIndex(readings)
        self.config = config or LoopConfig()
        self.estimator = Estimator(self.config.horizon_minutes, self.config.cycle_seconds,
                                   self.config.smoothing)
        self.plant = PlantState()
        if initial is not None:
            self.plant = execute(initial, self.plant, base, self.workloads)
        self.records: list[CycleRecord] = []
        self.log = log
        self.alert_stream = alerts
        self.on_certificate = on_certificate  # audit hook: sees the instance behind each certificate
        self.last_snapshot: TelemetrySnapshot | None = None
        self._last_core: list | None = None

    # ------------------------------------------------------------- phases

    def _alert(self, rec: CycleRecord, msg: str) -> None:
        rec.alerts.append(msg)
        if self.alert_stream is not None:
            print(f"ALERT cycle {rec.cycle} t={rec.timestamp:g}: {msg}", file=self.alert_stream)

    def _optimize(self, snap: TelemetrySnapshot, rec: CycleRecord, deadline: float):
        cfg = self.config
        inst = build_instance(snap, self.workloads, cfg.alpha, self.plant.assignment or None,
                              cfg.options, cfg.window)
        for attempt in range(cfg.retry_limit + 1):
            left = deadline - time.perf_counter()
            if left <= 0:
                self._alert(rec, "cycle budget exhausted during validate/re-solve")
                return None
            out = solve(inst, left)
            rec.solve_seconds += out.wall_time
            rec.nodes += out.nodes
            if out.status is SolveStatus.INFEASIBLE:
                if attempt == 0:
                    return inst
                self._alert(rec, "no placement left after twin rejections")
                return None
            if out.placement is None:
                self._alert(rec, "solver budget exhausted without a placement")
                return None
            cand = out.placement
            bad = verify_placement(snap, self.workloads, cand, self.plant.assignment,
                                   relaxed=cfg.options.drop_classes,
                                   network_free=cfg.options.network_free)
            if bad:
                self._alert(rec, "verification rejected solver output: " + "; ".join(bad[:3]))
                return None
            if not cfg.twin:
                rec.objective = out.objective
                return cand
            verdict = validate(cand, snap, self.workloads, cfg.thresholds)
            rec.twin.append(verdict.to_dict())
            if verdict.passed:
                rec.objective = out.objective
                return cand
            if attempt == cfg.retry_limit:
                break
            rec.retries += 1
            for pattern in verdict.patterns:
                inst = add_nogood_cut(inst, pattern)
        self._alert(rec, f"twin rejected {rec.retries + 1} candidates; retaining incumbent")
        return None

    def run_cycle(self, t: float) -> CycleRecord:
        cfg = self.config
        started = time.perf_counter()
        deadline = started + cfg.budget_secs
        rec = CycleRecord(len(self.records), float(t), Outcome.HOLD, self.plant.assignment)

        report = ingest_report(self.index, t, cfg.policy, self.base)
        rec.degraded = dict(report.stale)
        snap = self.estimator.update(report.snapshot, report.uncertainty)
        self.last_snapshot = snap

        if report.snapshot.hold:
            rec.outcome = Outcome.HOLD
            self._alert(rec, "optimization hold: " + "; ".join(report.hold_reasons))
        else:
            result = self._optimize(snap, rec, deadline)
            if isinstance(result, Placement):
                before = self.plant.cumulative_carbon
                self.plant = execute(result, self.plant, snap, self.workloads)
                rec.migration_carbon = self.plant.cumulative_carbon - before
                rec.outcome = Outcome.EXECUTED
                rec.placement = result
            elif result is None:
                rec.outcome = Outcome.RETAINED_WITH_ALERT
            else:
                rec.outcome = Outcome.RETAINED_WITH_CERTIFICATE
                if cfg.certificates:
                    cert = extract_iis(result, max(1.0, deadline - time.perf_counter()),
                                       hint=self._last_core)
                    self._last_core = list(cert.groups)
                    rec.certificate = cert.to_dict()
                    if self.on_certificate is not None:
                        self.on_certificate(result, cert)
                    self._alert(rec, "infeasible: " + ", ".join(g.label for g in cert.groups))
                else:
                    self._alert(rec, "infeasible")

        self.plant, rec.carbon_rate, rec.water_rate = advance(
            self.plant, snap, self.workloads, cfg.cycle_seconds)
        rec.assignment = self.plant.assignment
        rec.cumulative_carbon = self.plant.cumulative_carbon
        rec.cumulative_water = self.plant.cumulative_water
        self.records.append(rec)
        if self.log is not None:
            self.log.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
            self.log.flush()
        return rec

    def run(self, start: float, cycles: int) -> list[CycleRecord]:
        return [self.run_cycle(start + k * self.config.cycle_seconds) for k in range(cycles)]


def audit_carbon(records: Sequence[CycleRecord], cycle_seconds: float,
                 initial: float = 0.0) -> float:
    """Cumulative carbon recomputed from the audit trail alone."""
    return initial + sum(r.carbon_rate * cycle_seconds / 3600.0 + r.migration_carbon
                         for r in records)


def confidence_counts(snapshot: TelemetrySnapshot) -> dict[str, int]:
    out = {c.value: 0 for c in Confidence}
    for c in snapshot.confidence.values():
        out[c.value] += 1
    return out
