"""HTTP front end over the core package.

Experiments started without ``wait`` run as background tasks; their status
lives in process memory, while the records themselves are on disk as usual.
"""
from __future__ import annotations

import math
import threading
from pathlib import Path

import numpy as np
from fastapi import BackgroundTasks, FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__
from ..completion.experiment import ExperimentFailed, run_completion_experiment
from ..config import ConfigError, ExperimentConfig, parse_config
from ..counting import builtin_table, count_table
from ..datasets import DatasetError
from ..records import DigestMismatch, RecordError, load_results
from ..report import format_table, plot_data_tsv, summarize, write_report
from ..splitproto.wire import FrameError, MsgType, WireFrame, decode_frame, encode_frame
from .schemas import (CountParamsRequest, CountParamsResponse, EstimateModel, ExperimentRequest, ExperimentStatus,
                      FrameBytes, FrameModel, Health, ReportRequest, ReportResponse, SummaryRowModel)


def _finite(v):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v


def _estimates(rows) -> list[EstimateModel]:
    out = []
    for r in rows:
        if r.estimate is None:
            out.append(EstimateModel(partition=r.partition, alpha=r.alpha, error=r.error))
            continue
        e = r.estimate
        out.append(EstimateModel(
            partition=r.partition, alpha=r.alpha, estimate=e.estimate, best_procedure=e.best_procedure,
            procedure_means={k: (None if v.excluded else v.mean) for k, v in e.procedures.items()},
            censored={k: len(v.censored) for k, v in e.procedures.items()}))
    return out


def _error_kind(exc: BaseException) -> str:
    cause = exc.__cause__ or exc
    if isinstance(cause, FloatingPointError):
        return "numeric"
    if isinstance(cause, (ConfigError, DatasetError, DigestMismatch)):
        return "config"
    return "runtime"


def create_app(default_output: str = "results") -> FastAPI:
    app = FastAPI(title="modelsplit", version=__version__)
    jobs: dict[str, ExperimentStatus] = {}
    lock = threading.Lock()

    def config_or_422(raw: dict) -> ExperimentConfig:
        try:
            return parse_config(raw)
        except ConfigError as e:
            raise HTTPException(status_code=422, detail=str(e)) from None

    @app.exception_handler(RecordError)
    async def _record_error(_, exc: RecordError):
        return JSONResponse(status_code=404, content={"detail": str(exc), "kind": "records"})

    @app.get("/health", response_model=Health)
    def health():
        return Health(version=__version__)

    @app.get("/count-params/{name}", response_model=CountParamsResponse)
    def count_builtin(name: str, width: float = 1.0):
        try:
            return builtin_table(name, width).to_dict()
        except KeyError as e:
            raise HTTPException(status_code=404, detail=str(e.args[0])) from None
        except ValueError as e:
            raise HTTPException(status_code=422, detail=str(e)) from None

    @app.post("/count-params", response_model=CountParamsResponse)
    def count_config(req: CountParamsRequest):
        cfg = config_or_422(req.config)
        name = cfg.model if isinstance(cfg.model, str) else "inline model"
        return count_table(cfg.model_spec(), name).to_dict()

    def run_job(cfg: ExperimentConfig, out_dir: str, seeds):
        with lock:
            jobs[cfg.experiment_id].status = "running"
        try:
            res = run_completion_experiment(cfg, out_dir, seeds)
            status = ExperimentStatus(experiment_id=cfg.experiment_id, status="done", output_dir=out_dir,
                                      estimates=_estimates(res.estimates))
        except (ExperimentFailed, ConfigError, DatasetError, RecordError, OSError) as e:
            status = ExperimentStatus(experiment_id=cfg.experiment_id, status="failed", output_dir=out_dir,
                                      error=str(e), error_kind=_error_kind(e))
        with lock:
            jobs[cfg.experiment_id] = status
        return status

    @app.post("/experiments", response_model=ExperimentStatus, status_code=202)
    def start_experiment(req: ExperimentRequest, background: BackgroundTasks):
        cfg = config_or_422(req.config)
        explicit = cfg.output_dir if "output_dir" in cfg.model_fields_set else None
        out_dir = req.output_dir or explicit or default_output
        with lock:
            current = jobs.get(cfg.experiment_id)
            if current is not None and current.status in ("queued", "running"):
                raise HTTPException(status_code=409, detail=f"experiment {cfg.experiment_id} is already running")
            jobs[cfg.experiment_id] = ExperimentStatus(experiment_id=cfg.experiment_id, status="queued",
                                                       output_dir=out_dir)
        if req.wait:
            return run_job(cfg, out_dir, req.seeds)
        background.add_task(run_job, cfg, out_dir, req.seeds)
        return jobs[cfg.experiment_id]

    @app.get("/experiments/{experiment_id}", response_model=ExperimentStatus)
    def experiment_status(experiment_id: str):
        with lock:
            if experiment_id not in jobs:
                raise HTTPException(status_code=404, detail=f"unknown experiment {experiment_id}")
            return jobs[experiment_id]

    @app.post("/report", response_model=ReportResponse)
    def report(req: ReportRequest):
        rows = summarize(load_results(req.results_dir), req.alphas)
        files = {}
        if req.out_dir:
            files = {k: str(v) for k, v in write_report(req.results_dir, req.out_dir, req.alphas).items()}
        models = [SummaryRowModel(experiment=r.experiment, partition=r.partition, procedure=r.procedure,
                                  alpha=r.alpha, n=r.stats["n"], censored=r.censored,
                                  median=_finite(r.stats["median"]), mean=_finite(r.stats["mean"]),
                                  sd=_finite(r.stats["sd"]), min=_finite(r.stats["min"]),
                                  max=_finite(r.stats["max"]), best=r.best) for r in rows]
        return ReportResponse(rows=models, table=format_table(rows), plot_data=plot_data_tsv(rows), files=files)

    @app.post("/frames/encode", response_model=FrameBytes)
    def frame_encode(frame: FrameModel):
        try:
            msg = MsgType[frame.msg_type]
        except KeyError:
            raise HTTPException(status_code=422, detail=f"unknown msg_type {frame.msg_type!r}") from None
        payload = None
        if frame.values is not None:
            shape = frame.shape or [len(frame.values)]
            payload = np.asarray(frame.values, dtype=np.float32 if frame.dtype == 4 else np.float64)
            try:
                payload = payload.reshape(shape)
            except ValueError as e:
                raise HTTPException(status_code=422, detail=str(e)) from None
        try:
            return FrameBytes(hex=encode_frame(WireFrame(msg, frame.step, payload, frame.dtype or 0)).hex())
        except FrameError as e:
            raise HTTPException(status_code=422, detail=str(e)) from None

    @app.post("/frames/decode", response_model=FrameModel)
    def frame_decode(body: FrameBytes):
        try:
            f = decode_frame(bytes.fromhex(body.hex))
        except ValueError as e:
            kind = type(e).__name__
            return JSONResponse(status_code=422, content={"detail": str(e), "kind": kind})
        if f.payload is None:
            return FrameModel(msg_type=f.msg_type.name, step=f.step)
        return FrameModel(msg_type=f.msg_type.name, step=f.step, dtype=f.dtype, shape=list(f.dims),
                          values=f.payload.reshape(-1).astype(float).tolist())

    return app


app = create_app()
