"""Request and response bodies for the HTTP service."""
from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, Field


class Health(BaseModel):
    status: Literal["ok"] = "ok"
    version: str


class CountRowModel(BaseModel):
    layer: str
    label: str
    count: int
    printed: Optional[int] = None


class CountParamsResponse(BaseModel):
    model: str
    rows: list[CountRowModel]
    total: int
    printed_total: Optional[int] = None
    notes: list[str] = []


class CountParamsRequest(BaseModel):
    """Count a configured model; ``config`` is an experiment config mapping."""
    config: dict


class ExperimentRequest(BaseModel):
    config: dict
    seeds: Optional[list[int]] = None
    output_dir: Optional[str] = None
    wait: bool = False


class EstimateModel(BaseModel):
    partition: str
    alpha: float
    estimate: Optional[float] = None
    best_procedure: Optional[str] = None
    procedure_means: dict[str, Optional[float]] = {}
    censored: dict[str, int] = {}
    error: Optional[str] = None


class ExperimentStatus(BaseModel):
    experiment_id: str
    status: Literal["queued", "running", "done", "failed"]
    output_dir: str
    estimates: list[EstimateModel] = []
    error: Optional[str] = None
    error_kind: Optional[str] = None


class ReportRequest(BaseModel):
    results_dir: str
    alphas: Optional[list[float]] = None
    out_dir: Optional[str] = None


class SummaryRowModel(BaseModel):
    experiment: str
    partition: str
    procedure: str
    alpha: float
    n: int
    censored: int
    median: Optional[float]
    mean: Optional[float]
    sd: Optional[float]
    min: Optional[float]
    max: Optional[float]
    best: bool


class ReportResponse(BaseModel):
    rows: list[SummaryRowModel]
    table: str
    plot_data: str
    files: dict[str, str] = {}


class FrameModel(BaseModel):
    msg_type: str
    step: int = Field(ge=0)
    dtype: Literal[0, 4, 8] = 0
    shape: Optional[list[int]] = None
    values: Optional[list[float]] = None


class FrameBytes(BaseModel):
    hex: str


class ErrorBody(BaseModel):
    detail: Union[str, list, dict]
    kind: Optional[str] = None
