"""HTTP front end over the core package.

Every endpoint is a pure function of its request body, so the in-process
client and a remote server give identical answers. Errors come back as 422
with ``{"error": {"field": ..., "message": ...}}``; the field path starts
with the request key (``snapshot``, ``workloads``, ``readings``, ``config``)
so a client can map it back to the file it read.
"""

from __future__ import annotations

import io
from collections import Counter
from typing import Any

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .. import __version__
from ..bench import run_bench, to_csv, trials_csv
from ..bnb import SolveStatus, solve
from ..config import Config
from ..formulation import (ConstraintClass, FormulationError, FormulationOptions,
                           MilpInstance, build_instance, export_lp)
from ..fsor import FsorError, enumerate_fsor, extract_iis, fsor_contains
from ..loop import ControlLoop, audit_carbon
from ..model import (SchemaError, TelemetrySnapshot, Workload, placement_from_dict,
                     placement_to_dict, snapshot_from_dict, snapshot_to_dict,
                     validate_snapshot, workload_to_dict, workloads_from_json)
from ..scenarios import build_scenario, run_scenario
from ..telemetry import RawReading, ReadingIndex, generate_stream, ingest_report, write_ndjson
from .schemas import (BenchRequest, FsorRequest, InstanceRequest, LoopRequest, Options,
                      ReportRequest, ScenarioReadingsRequest, ScenarioRequest,
                      ScenarioSnapshotRequest, SolveRequest,
                      SolveResponse, TextResponse)

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2

app = FastAPI(title="sovorch", version=__version__)


class ServiceError(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


def _error(field: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=422, content={"error": {"field": field, "message": message}})


@app.exception_handler(SchemaError)
async def _schema_error(_: Request, exc: SchemaError) -> JSONResponse:
    return _error(exc.field, exc.message)


@app.exception_handler(ServiceError)
async def _service_error(_: Request, exc: ServiceError) -> JSONResponse:
    return _error(exc.field, exc.message)


@app.exception_handler(RequestValidationError)
async def _validation_error(_: Request, exc: RequestValidationError) -> JSONResponse:
    first = exc.errors()[0]
    loc = [str(p) for p in first.get("loc", ()) if p != "body"]
    return _error(".".join(loc) or "body", first.get("msg", "invalid request"))


# ------------------------------------------------------------------ parsing


def _instance_inputs(req: InstanceRequest | LoopRequest) -> tuple[TelemetrySnapshot, list[Workload]]:
    snap = snapshot_from_dict(req.snapshot, "snapshot")
    ws = workloads_from_json(req.workloads, "workloads")
    problems = validate_snapshot(snap, ws)
    if problems:
        field = "workloads" if problems[0].startswith("workload") else "snapshot"
        raise ServiceError(field, problems[0])
    return snap, ws


def _options(o: Options) -> FormulationOptions:
    try:
        drop = frozenset(ConstraintClass(c) for c in o.drop_classes)
    except ValueError as exc:
        raise ServiceError("options.drop_classes", str(exc)) from None
    return FormulationOptions(hop_limit=o.hop_limit, objective=o.objective,
                              include_transport=o.include_transport,
                              network_free=o.network_free, drop_classes=drop)


def _build(req: InstanceRequest) -> MilpInstance:
    snap, ws = _instance_inputs(req)
    try:
        return build_instance(snap, ws, req.alpha, req.incumbent, _options(req.options))
    except FormulationError as exc:
        raise ServiceError("workloads", str(exc)) from None


def _gate_log(inst: MilpInstance) -> list[str]:
    return [f"x[{g.site},{g.workload}]=0: {g.reason}" for g in inst.gate_log]


# ---------------------------------------------------------------- endpoints


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/solve", response_model=SolveResponse)
def solve_endpoint(req: SolveRequest) -> SolveResponse:
    inst = _build(req)
    out = solve(inst, req.budget_secs)
    resp = SolveResponse(status=out.status.value, exit_code=EXIT_OK, objective=out.objective,
                         bound=out.bound, gap=out.gap, nodes=out.nodes,
                         wall_time=out.wall_time, message=out.message,
                         gate_log=_gate_log(inst), meta=_meta(inst))
    if out.placement is not None:
        resp.placement = placement_to_dict(out.placement)
    if out.status is SolveStatus.INFEASIBLE:
        resp.exit_code = EXIT_INFEASIBLE
        if req.certificate:
            resp.certificate = _certificate(inst, req.budget_secs)
    elif out.status is SolveStatus.TIMEOUT and out.placement is None:
        resp.exit_code = EXIT_ERROR
    return resp


def _meta(inst: MilpInstance) -> dict:
    return {k: v for k, v in inst.meta.items() if k != "window"}


def _certificate(inst: MilpInstance, budget: float) -> dict:
    try:
        return extract_iis(inst, budget).to_dict()
    except FsorError as exc:
        raise ServiceError("budget_secs", str(exc)) from None


@app.post("/iis", response_model=SolveResponse)
def iis_endpoint(req: InstanceRequest) -> SolveResponse:
    inst = _build(req)
    out = solve(inst, req.budget_secs)
    if out.status is SolveStatus.INFEASIBLE:
        return SolveResponse(status=out.status.value, exit_code=EXIT_INFEASIBLE,
                             certificate=_certificate(inst, req.budget_secs),
                             gate_log=_gate_log(inst), meta=_meta(inst), nodes=out.nodes,
                             wall_time=out.wall_time)
    return SolveResponse(status=out.status.value, exit_code=EXIT_OK, objective=out.objective,
                         message="instance is feasible; no certificate", meta=_meta(inst))


@app.post("/fsor")
def fsor_endpoint(req: FsorRequest) -> dict:
    snap, ws = _instance_inputs(req)
    opts = _options(req.options)
    by_id = {w.id: w for w in ws}
    try:
        if req.subset is not None:
            unknown = [k for k in req.subset if k not in by_id]
            if unknown:
                raise ServiceError("subset", f"unknown workloads {unknown}")
            ok, witness = fsor_contains(snap, [by_id[k] for k in req.subset], opts,
                                        req.budget_secs)
            return {"mode": "membership", "subset": req.subset, "feasible": ok,
                    "exit_code": EXIT_OK,
                    "placement": placement_to_dict(witness) if witness else None}
        rep = enumerate_fsor(snap, ws, req.limit, opts, req.queries, req.budget_secs)
    except FsorError as exc:
        raise ServiceError("workloads", str(exc)) from None
    return {"mode": "enumeration", "exit_code": EXIT_OK, **rep.to_dict()}


@app.post("/export-lp", response_model=TextResponse)
def export_lp_endpoint(req: InstanceRequest) -> TextResponse:
    inst = _build(req)
    return TextResponse(text=export_lp(inst), meta=_meta(inst))


@app.post("/loop")
def loop_endpoint(req: LoopRequest) -> dict:
    snap, ws = _instance_inputs(req)
    cfg = Config.from_dict(req.config, "config").with_overrides(req.alpha, req.budget_secs)
    readings = [RawReading.from_dict(r, f"readings[{i}]") for i, r in enumerate(req.readings)]
    try:
        index = ReadingIndex(readings)
    except ValueError as exc:
        raise ServiceError("readings", str(exc)) from None
    initial = placement_from_dict(req.initial, "initial") if req.initial else None
    loop = ControlLoop(snap, ws, index, cfg.loop_config(), initial=initial, alerts=None)
    recs = loop.run(req.start, req.cycles)
    return {"records": [r.to_dict() for r in recs],
            "summary": _loop_summary([r.to_dict() for r in recs], cfg.cycle_seconds),
            "exit_code": EXIT_OK}


@app.post("/scenario")
def scenario_endpoint(req: ScenarioRequest) -> dict:
    rep = run_scenario(req.scenario, req.seeds, horizon_hours=req.horizon_hours,
                       cycle_seconds=req.cycle_seconds, budget_secs=req.budget_secs,
                       keep_trace=req.plot_data)
    body = rep.to_dict()
    passed = all(v["passed"] for d in body["orderings"].values() for v in d.values())
    return {"report": body, "csv": rep.to_csv(),
            "plot_data": rep.plot_data() if req.plot_data else None,
            "orderings_passed": passed, "exit_code": EXIT_OK}


@app.post("/scenario/snapshot")
def scenario_snapshot_endpoint(req: ScenarioSnapshotRequest) -> dict:
    """The snapshot the loop would see at ``hour``: a ready-made solve input."""
    t = req.hour * 3600.0
    scn = build_scenario(req.scenario, req.seed, horizon_hours=max(req.hour + 1.0, 1.0))
    idx = ReadingIndex(generate_stream(scn.stream, t + scn.cycle_seconds, scn.cycle_seconds,
                                       req.seed))
    snap = ingest_report(idx, t, Config().freshness, scn.base).snapshot
    return {"snapshot": snapshot_to_dict(snap),
            "workloads": [workload_to_dict(w) for w in scn.workloads],
            "in_stress": scn.in_stress(t)}


@app.post("/scenario/readings", response_model=TextResponse)
def scenario_readings_endpoint(req: ScenarioReadingsRequest) -> TextResponse:
    scn = build_scenario(req.scenario, req.seed, horizon_hours=req.horizon_hours)
    stream = generate_stream(scn.stream, scn.horizon_seconds, scn.cycle_seconds, req.seed)
    buf = io.StringIO()
    write_ndjson(stream, buf)
    return TextResponse(text=buf.getvalue(), meta={"readings": len(stream)})


@app.post("/bench")
def bench_endpoint(req: BenchRequest) -> dict:
    rows = run_bench(req.scales, req.seeds, req.alpha, req.budget_secs)
    return {"csv": to_csv(rows, req.budget_secs), "trials": trials_csv(rows),
            "rows": [r.table_row() for r in rows],
            "all_optimal": all(r.optimal == len(r.trials) for r in rows),
            "exit_code": EXIT_OK}


@app.post("/report")
def report_endpoint(req: ReportRequest) -> dict:
    doc = req.document
    if isinstance(doc, dict) and "runs" in doc:
        return {"kind": "scenario", **_scenario_summary(doc)}
    if isinstance(doc, dict) and "records" in doc:
        doc = doc["records"]
    if not isinstance(doc, list):
        raise ServiceError("document", "expected cycle records or a scenario report")
    for i, rec in enumerate(doc):
        for key in ("cycle", "outcome", "carbon_rate", "migration_carbon", "cumulative_carbon"):
            if key not in rec:
                raise ServiceError(f"document[{i}].{key}", "missing field")
    return {"kind": "loop", **_loop_summary(doc, req.cycle_seconds)}


def _loop_summary(records: list[dict], cycle_seconds: float) -> dict[str, Any]:
    counts = Counter(r["outcome"] for r in records)
    audit = sum(r["carbon_rate"] * cycle_seconds / 3600.0 + r["migration_carbon"]
                for r in records)
    final = records[-1]["cumulative_carbon"] if records else 0.0
    return {
        "cycles": len(records),
        "outcomes": dict(sorted(counts.items())),
        "cumulative_carbon": final,
        "cumulative_water": records[-1].get("cumulative_water", 0.0) if records else 0.0,
        "audited_carbon": audit,
        "audit_consistent": abs(audit - final) <= 1e-6 * max(1.0, abs(final)),
        "alerts": sum(len(r.get("alerts", [])) for r in records),
        "certificates": sum(1 for r in records if r.get("certificate")),
    }


def _scenario_summary(doc: dict) -> dict[str, Any]:
    runs = doc.get("runs", [])
    cols = ["scenario", "configuration", "seed", "impact", "cumulative_carbon_g",
            "cumulative_water_l", "slo_violations", "infeasible_in_stress",
            "infeasible_outside_stress"]
    table = [{k: r.get(k) for k in cols} for r in runs]
    orderings = doc.get("orderings", {})
    return {"runs": table, "orderings": orderings,
            "orderings_passed": all(v.get("passed", False)
                                    for d in orderings.values() for v in d.values())}


# keeps the audit helper importable from here for callers holding CycleRecords
__all__ = ["app", "audit_carbon", "EXIT_OK", "EXIT_ERROR", "EXIT_INFEASIBLE"]
