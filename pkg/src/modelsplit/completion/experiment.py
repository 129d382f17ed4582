"""End-to-end completion experiment: train, snapshot, reinitialize, retrain, estimate."""
from __future__ import annotations

import concurrent.futures as cf
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..config import ExperimentConfig
from ..datasets import DatasetError, ingest_csv, ingest_idx, make_toy
from ..nn.layers import ModelSpec
from ..nn.optim import LrSchedule
from ..nn.params import ParamStore, init_params
from ..records import (ResultRecord, check_resume, curve_id, meta_record, persist_results, read_records,
                       record_file)
from ..rl.agent import AgentConfig, train_agent
from ..rl.gridworld import GridWorld
from ..rl.replay import ReplayBuffer
from ..runs import Dataset, TaskData, TrainConfig, TrainingRun
from ..splitproto.monolithic import run_training
from ..tensor import STREAM_INIT, RngStream
from .metrics import MCHardnessEstimate, NoUsableProcedure, ZeroCostThreshold, mc_hardness
from .procedures import NotApplicable, RetrainProcedure

# retraining draws its data order / episodes from a seed disjoint from any training seed
RETRAIN_SEED_OFFSET = 2 ** 32
SHARED = None  # partition recorded for the full retrain, which does not depend on the partition


class ExperimentFailed(RuntimeError):
    def __init__(self, message, seed=None, stage=None):
        super().__init__(message)
        self.seed = seed
        self.stage = stage


def load_task_data(config: ExperimentConfig, model: ModelSpec) -> TaskData:
    d = config.data
    if config.task == "sl_toy":
        return make_toy(d.n_train, d.n_test, d.n_features, d.n_classes, d.clusters_per_class,
                        d.spread, d.noise, d.seed)
    shape = model.input_shape
    if d.csv:
        train = ingest_csv(d.csv, d.label_column, shape)
        test = ingest_csv(d.test_csv, d.label_column, shape) if d.test_csv else None
    elif d.images and d.labels:
        train = ingest_idx(d.images, d.labels, shape)
        test = ingest_idx(d.test_images, d.test_labels, shape) if d.test_images and d.test_labels else None
    else:
        raise DatasetError("sl_idx_dataset needs data.images and data.labels (or data.csv)")
    if test is None:
        # no held-out file: the last quarter of the training file becomes the test set
        cut = len(train) - max(1, len(train) // 4)
        train, test = Dataset(train.x[:cut], train.y[:cut]), Dataset(train.x[cut:], train.y[cut:])
    return TaskData(train, test)


def procedures_for(config: ExperimentConfig) -> list[tuple[Optional[str], RetrainProcedure]]:
    """(partition name, procedure) pairs; the full retrain appears once with no partition."""
    out = []
    specs = config.partition_specs()
    for pc in config.procedures:
        sched = tuple(map(tuple, pc.schedule)) if isinstance(pc.schedule, list) else pc.schedule
        if pc.kind == "full":
            out.append((SHARED, RetrainProcedure("full", specs[0] if specs else None, schedule=sched, name=pc.name)))
            continue
        for spec in specs:
            out.append((spec.name, RetrainProcedure(pc.kind, spec, pc.width_factor, pc.scheme, sched, pc.name)))
    return out


class TaskRunner:
    """Uniform "train from these params" over the supervised and gridworld tasks."""

    def __init__(self, config: ExperimentConfig, model: ModelSpec):
        self.config = config
        self.model = model
        self.rl = config.task == "rl_gridworld"
        if self.rl:
            e, a = config.env, config.agent
            self.env = GridWorld(e.width, e.height, tuple(e.goal), frozenset(map(tuple, e.obstacles)), e.max_steps)
            self.agent = AgentConfig(gamma=a.gamma, entropy_coef=a.entropy_coef, value_coef=a.value_coef,
                                     lr=config.schedule[0][1], momentum=config.momentum,
                                     weight_decay=config.weight_decay, use_replay=a.use_replay,
                                     replay_capacity=a.replay_capacity, replay_batch=a.replay_batch,
                                     replay_coef=a.replay_coef, eval_episodes=a.eval_episodes)
        else:
            self.data = load_task_data(config, model)

    def train(self, model, params, seed, budget, schedule: LrSchedule, run_seed, trainable=None, buffer=None):
        c = self.config
        if self.rl:
            res = train_agent(model, params, self.env, self.agent, run_seed, budget, c.eval_every,
                              buffer=buffer, trainable=trainable, schedule=schedule)
            res.run.seed = seed
            res.run.extras["buffer"] = res.buffer
            return res.run
        tc = TrainConfig(budget=budget, batch_size=c.batch_size, eval_every=c.eval_every,
                         schedule=schedule.entries, momentum=c.momentum, weight_decay=c.weight_decay,
                         seed=seed, data_seed=run_seed)
        return run_training(model, params, self.data, tc, trainable)


def _curve(config, seed, partition, procedure, run: TrainingRun, **extra) -> ResultRecord:
    payload = {"partition": partition, "id": curve_id(seed, partition, procedure), "run": run.to_dict(), **extra}
    if "exploration" in run.extras:
        payload["exploration"] = [[e["step"], e["length"], e["return"], e["distinct_states"]]
                                  for e in run.extras["exploration"]]
    return ResultRecord("curve", config.experiment_id, seed, procedure, None, payload)


def run_seed(config: ExperimentConfig, seed: int, out_dir=None) -> list[ResultRecord]:
    """Train one seed, then every (partition, procedure) retrain; returns and persists the curve records."""
    out_dir = Path(out_dir or config.output_dir)
    path = record_file(out_dir, config.experiment_id, seed)
    cdig = config.digest()
    existing = check_resume(path, cdig)
    if any(r.kind == "meta" and r.payload.get("complete") for r in existing):
        return [r for r in existing if r.kind == "curve"]
    if existing:
        path.unlink()  # an interrupted seed is rerun from scratch; its records are not trustworthy
    model = config.model_spec()
    task = TaskRunner(config, model)
    base = LrSchedule(tuple(map(tuple, config.schedule)))
    persist_results([meta_record(config.experiment_id, cdig, seed, config=config.dump())], path)
    stage = "train"
    curves: list[ResultRecord] = []
    try:
        params0 = init_params(model, RngStream(seed, STREAM_INIT))
        trained = task.train(model, params0, seed, config.budget, base, seed)
        rec = _curve(config, seed, None, "train", trained)
        persist_results([rec], path)
        curves.append(rec)
        theta_n: ParamStore = trained.params
        for partition, proc in procedures_for(config):
            stage = f"retrain {proc.name} on {partition or 'all layers'}"
            try:
                m, p, trainable = proc.prepare(model, theta_n, seed)
            except NotApplicable as e:
                rec = ResultRecord("curve", config.experiment_id, seed, proc.name, None,
                                   {"partition": partition, "id": curve_id(seed, partition, proc.name),
                                    "skipped": str(e)})
                persist_results([rec], path)
                continue
            buffer = None
            if task.rl and config.agent.use_replay:
                kept = trained.extras.get("buffer")
                buffer = kept.copy() if config.keep_buffer and kept is not None else \
                    ReplayBuffer(config.agent.replay_capacity)
            run = task.train(m, p, seed, config.retrain_budget, proc.lr_schedule(base),
                             seed + RETRAIN_SEED_OFFSET, trainable, buffer)
            rec = _curve(config, seed, partition, proc.name, run, kind=proc.kind)
            persist_results([rec], path)
            curves.append(rec)
    except Exception as e:
        persist_results([meta_record(config.experiment_id, cdig, seed, failed=True, stage=stage,
                                     error=f"{type(e).__name__}: {e}")], path)
        raise ExperimentFailed(f"seed {seed}, {stage}: {e}", seed, stage) from e
    persist_results([meta_record(config.experiment_id, cdig, seed, complete=True)], path)
    return curves


def collect_curves(records: list[ResultRecord]):
    """Split curve records into train runs and retrain runs keyed by partition then procedure."""
    train: dict[int, TrainingRun] = {}
    shared: dict[str, dict[int, TrainingRun]] = {}
    per_part: dict[str, dict[str, dict[int, TrainingRun]]] = {}
    ids: dict[tuple, str] = {}
    for r in records:
        if r.kind != "curve" or "run" not in r.payload:
            continue
        run = TrainingRun.from_dict(r.payload["run"])
        part = r.payload.get("partition")
        ids[(r.seed, part, r.procedure)] = r.payload.get("id", curve_id(r.seed, part, r.procedure))
        if r.procedure == "train":
            train[r.seed] = run
        elif part is SHARED:
            shared.setdefault(r.procedure, {})[r.seed] = run
        else:
            per_part.setdefault(part, {}).setdefault(r.procedure, {})[r.seed] = run
    retrain = {p: {**procs, **shared} for p, procs in per_part.items()}
    if not retrain and shared:
        retrain = {"all": dict(shared)}
    return train, retrain, ids


@dataclass
class EstimateRow:
    partition: str
    alpha: float
    estimate: Optional[MCHardnessEstimate]
    error: Optional[str] = None
    curves: list[str] = field(default_factory=list)
    procedures: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.estimate is not None and not self.procedures:
            self.procedures = self.estimate.procedures

    def record(self, experiment_id: str) -> ResultRecord:
        payload = {"partition": self.partition, "curves": self.curves}
        if self.estimate is not None:
            payload["estimate"] = self.estimate.to_dict()
        else:
            payload["error"] = self.error
            payload["procedures"] = {k: v.to_dict() for k, v in self.procedures.items()}
        proc = self.estimate.best_procedure if self.estimate is not None else None
        return ResultRecord("estimate", experiment_id, None, proc, self.alpha, payload)


def estimates_from_curves(records: list[ResultRecord], alphas, min_best_loss=None) -> list[EstimateRow]:
    train, retrain, ids = collect_curves(records)
    rows = []
    for part, procs in retrain.items():
        refs = sorted({ids[(s, None, "train")] for s in train} |
                      {ids.get((s, part, p)) or ids[(s, SHARED, p)] for p, runs in procs.items() for s in runs})
        for a in alphas:
            try:
                rows.append(EstimateRow(part, a, mc_hardness(train, procs, a, min_best_loss), curves=refs))
            except (ZeroCostThreshold, NoUsableProcedure) as e:
                rows.append(EstimateRow(part, a, None, f"{type(e).__name__}: {e}", refs,
                                        getattr(e, "procedures", {})))
    return rows


@dataclass
class ExperimentResult:
    experiment_id: str
    directory: Path
    curves: list[ResultRecord]
    estimates: list[EstimateRow]


def run_completion_experiment(config: ExperimentConfig, out_dir=None, seeds=None) -> ExperimentResult:
    """Run every seed (in worker processes when ``config.workers > 1``) and write the estimates.

    Each seed writes its own record file; estimates are computed at the join
    point from all seed files present, so separately launched seed runs merge.
    """
    out_dir = Path(out_dir or config.output_dir)
    seeds = list(seeds) if seeds is not None else config.seed_list()
    if config.workers > 1 and len(seeds) > 1:
        with cf.ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(run_seed, config, s, out_dir) for s in seeds]
            for f in futures:
                f.result()
    else:
        for s in seeds:
            run_seed(config, s, out_dir)
    exp_dir = out_dir / config.experiment_id
    curves = []
    for p in sorted(exp_dir.glob("seed-*.jsonl")):
        recs = read_records(p)
        check_resume(p, config.digest())
        curves.extend(r for r in recs if r.kind == "curve")
    rows = estimates_from_curves(curves, config.alphas, config.min_best_loss)
    est_path = record_file(out_dir, config.experiment_id)
    est_path.unlink(missing_ok=True)  # derived data, rebuilt from the curves every time
    persist_results([meta_record(config.experiment_id, config.digest(), kind="estimates")]
                    + [r.record(config.experiment_id) for r in rows], est_path)
    return ExperimentResult(config.experiment_id, exp_dir, curves, rows)


def summarize_ratios(values) -> dict:
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        return {"n": 0, "median": None, "mean": None, "sd": None, "min": None, "max": None}
    return {"n": int(v.size), "median": float(np.median(v)), "mean": float(v.mean()),
            "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0, "min": float(v.min()), "max": float(v.max())}
