"""Request and response envelopes.

Domain documents (snapshots, workloads, readings, configs) travel as plain
JSON and are parsed by the core codecs, which report the offending field
path. The envelopes here only type the request-level knobs.
"""

from __future__ import annotations

from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Options(_Strict):
    hop_limit: int = Field(3, ge=1, le=8)
    objective: Literal["impact", "latency"] = "impact"
    include_transport: bool = False
    network_free: bool = False
    drop_classes: list[str] = []


class InstanceRequest(_Strict):
    snapshot: dict[str, Any]
    workloads: Union[list[Any], dict[str, Any]]
    alpha: float = Field(0.5, ge=0.0, le=1.0)
    budget_secs: float = Field(300.0, gt=0.0)
    incumbent: Optional[dict[str, str]] = None
    options: Options = Options()


class SolveRequest(InstanceRequest):
    certificate: bool = True


class FsorRequest(InstanceRequest):
    subset: Optional[list[str]] = None
    queries: list[list[str]] = []
    limit: int = Field(15, ge=0, le=15)


class LoopRequest(_Strict):
    snapshot: dict[str, Any]
    workloads: Union[list[Any], dict[str, Any]]
    readings: list[dict[str, Any]]
    config: dict[str, Any] = {}
    alpha: Optional[float] = None
    budget_secs: Optional[float] = None
    start: float = 0.0
    cycles: int = Field(1, ge=0)
    initial: Optional[dict[str, Any]] = None


class ScenarioRequest(_Strict):
    scenario: Literal["A", "B", "C"]
    seeds: list[int] = Field([0], min_length=1)
    horizon_hours: Optional[float] = Field(None, gt=0.0)
    cycle_seconds: Optional[float] = Field(None, gt=0.0)
    budget_secs: float = Field(300.0, gt=0.0)
    plot_data: bool = False


class ScenarioSnapshotRequest(_Strict):
    scenario: Literal["A", "B", "C"]
    seed: int = 0
    hour: float = Field(0.0, ge=0.0)


class ScenarioReadingsRequest(_Strict):
    scenario: Literal["A", "B", "C"]
    seed: int = 0
    horizon_hours: Optional[float] = Field(None, gt=0.0)


class BenchRequest(_Strict):
    scales: list[Literal["small", "medium", "large"]] = ["small", "medium", "large"]
    seeds: list[int] = Field([0, 1, 2, 3, 4], min_length=1)
    alpha: float = Field(0.5, ge=0.0, le=1.0)
    budget_secs: float = Field(300.0, gt=0.0)


class ReportRequest(_Strict):
    document: Union[list[dict[str, Any]], dict[str, Any]]
    cycle_seconds: float = Field(300.0, gt=0.0)


class ErrorBody(BaseModel):
    field: str
    message: str


class SolveResponse(BaseModel):
    status: str
    exit_code: int
    objective: Optional[float] = None
    bound: Optional[float] = None
    gap: Optional[float] = None
    nodes: int = 0
    wall_time: float = 0.0
    message: str = ""
    placement: Optional[dict[str, Any]] = None
    certificate: Optional[dict[str, Any]] = None
    gate_log: list[str] = []
    meta: dict[str, Any] = {}


class TextResponse(BaseModel):
    text: str
    meta: dict[str, Any] = {}
