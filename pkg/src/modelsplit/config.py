"""Experiment configuration: YAML (or JSON) files validated by pydantic models."""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .nn.layers import ModelSpec, SpecError
from .nn.params import PartitionSpec
from .nn import zoo
from .runs import TrainConfig, digest
from .tensor import InitScheme


class ConfigError(ValueError):
    pass


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PartitionConfig(Strict):
    mode: Literal["vertical", "horizontal"] = "vertical"
    layers: list[str] = []
    fraction: Union[float, dict[str, float]] = 1.0
    mask_seed: int = 0
    label: str = ""

    def spec(self) -> PartitionSpec:
        return PartitionSpec(self.mode, tuple(self.layers), self.fraction, self.mask_seed, self.label)


T4_SCHEMES = (InitScheme.GLOROT_NORMAL, InitScheme.MSRA, InitScheme.CAFFE)


class ProcedureConfig(Strict):
    kind: Literal["T1", "T2", "T3", "T4", "full"]
    name: str = ""
    width_factor: float = 2.0
    scheme: Optional[InitScheme] = None
    # "halved" runs the training schedule twice as fast; "same" reuses it.
    # Unset means "same" for a full retrain and "halved" otherwise.
    schedule: Optional[Union[Literal["halved", "same"], list[tuple[int, float]]]] = None

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "T3" and self.width_factor <= 1:
            raise ValueError("T3 needs width_factor > 1")
        if self.schedule is None:
            self.schedule = "same" if self.kind == "full" else "halved"
        if not self.name and not (self.kind == "T4" and self.scheme is None):
            self.name = {"T3": f"T3x{self.width_factor:g}",
                         "T4": f"T4:{self.scheme.value if self.scheme else ''}"}.get(self.kind, self.kind)
        return self


class DataConfig(Strict):
    n_train: int = 600
    n_test: int = 400
    n_features: int = 10
    n_classes: int = 4
    clusters_per_class: int = 2
    spread: float = 2.5
    noise: float = 1.0
    seed: int = 0
    images: Optional[str] = None
    labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    csv: Optional[str] = None
    test_csv: Optional[str] = None
    label_column: str = "label"


class EnvConfig(Strict):
    width: int = 5
    height: int = 5
    goal: tuple[int, int] = (4, 4)
    obstacles: list[tuple[int, int]] = [(1, 3), (2, 2), (3, 1)]
    max_steps: int = 20


class AgentSection(Strict):
    gamma: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    use_replay: bool = False
    replay_capacity: int = 2000
    replay_batch: int = 32
    replay_coef: float = 0.5
    eval_episodes: int = 50


TASK_DEFAULTS = {
    "sl_toy": {"budget": 300, "schedule": [(0, 0.05)], "eval_every": 10},
    "sl_idx_dataset": {"budget": 300, "schedule": [(0, 0.05)], "eval_every": 10},
    "rl_gridworld": {"budget": 20000, "schedule": [(0, 0.005)], "eval_every": 500},
}


class ExperimentConfig(Strict):
    task: Literal["sl_toy", "sl_idx_dataset", "rl_gridworld"]
    model: Union[str, dict]
    # hidden widths for the toy_mlp / gridworld_net built-ins
    hidden: Optional[list[int]] = None
    partitions: Optional[list[PartitionConfig]] = None
    procedures: list[ProcedureConfig] = Field(
        default_factory=lambda: [ProcedureConfig(kind="T1"), ProcedureConfig(kind="T2"),
                                 ProcedureConfig(kind="full")])
    alphas: list[float] = [0.5, 0.8, 0.9, 1.0]
    seeds: int = 10
    seed_offset: int = 0
    budget: Optional[int] = None
    retrain_budget: Optional[int] = None
    eval_every: Optional[int] = None
    batch_size: int = 32
    schedule: Optional[list[tuple[int, float]]] = None
    momentum: float = 0.9
    weight_decay: float = 1e-4
    keep_buffer: bool = False
    min_best_loss: Optional[float] = None
    data: DataConfig = DataConfig()
    env: EnvConfig = EnvConfig()
    agent: AgentSection = AgentSection()
    output_dir: str = "results"
    experiment_id: Optional[str] = None
    workers: int = 1

    @field_validator("alphas")
    @classmethod
    def _alphas(cls, v):
        bad = [a for a in v if not 0.0 <= a <= 1.0]
        if bad:
            raise ValueError(f"alpha values must lie in [0, 1], got {bad}")
        if not v:
            raise ValueError("at least one alpha is required")
        return v

    @field_validator("procedures")
    @classmethod
    def _expand_t4(cls, v):
        # a T4 entry without a scheme stands for every alternative to the glorot_uniform default
        out = []
        for p in v:
            if p.kind == "T4" and p.scheme is None:
                out += [ProcedureConfig(kind="T4", scheme=s, schedule=p.schedule) for s in T4_SCHEMES]
            else:
                out.append(p)
        names = [p.name for p in out]
        if len(set(names)) != len(names):
            raise ValueError(f"procedure names must be unique, got {names}")
        return out

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if v < 1:
            raise ValueError("seeds must be >= 1")
        return v

    @model_validator(mode="after")
    def _resolve(self):
        defaults = TASK_DEFAULTS[self.task]
        for k, v in defaults.items():
            if getattr(self, k) is None:
                setattr(self, k, v)
        if self.retrain_budget is None:
            self.retrain_budget = self.budget
        model = self.model_spec()
        if self.partitions is None:
            fixed = model.output_layer_names()
            self.partitions = [PartitionConfig(layers=[model.layers[i].name])
                               for i in model.parametric_indices() if model.layers[i].name not in fixed]
        for p in self.partitions:
            try:
                p.spec().resolve_layers(model)
            except KeyError as e:
                raise ValueError(e.args[0]) from None
        if self.experiment_id is None:
            self.experiment_id = f"{self.task}-{self.digest()[:8]}"
        return self

    def model_spec(self) -> ModelSpec:
        if isinstance(self.model, dict):
            try:
                return ModelSpec.from_dict(self.model)
            except (KeyError, TypeError, SpecError) as e:
                raise ValueError(f"inline model: {e}") from None
        builders = {
            "toy_mlp": lambda: zoo.toy_mlp(self.data.n_features, self.data.n_classes, tuple(self.hidden or (16, 16))),
            "gridworld_net": lambda: zoo.gridworld_net(self.env.width * self.env.height, 4,
                                                       tuple(self.hidden or (32, 32))),
            "alexnet_table4": zoo.alexnet_table4,
            "a3c_table6": zoo.a3c_table6,
        }
        if self.model not in builders:
            raise ValueError(f"unknown model {self.model!r}; built-ins are {sorted(builders)}")
        return builders[self.model]()

    def partition_specs(self) -> list[PartitionSpec]:
        return [p.spec() for p in self.partitions]

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(budget=self.budget, batch_size=self.batch_size, eval_every=self.eval_every,
                           schedule=tuple(self.schedule), momentum=self.momentum,
                           weight_decay=self.weight_decay, seed=seed, data_seed=seed)

    def seed_list(self) -> list[int]:
        return list(range(self.seed_offset, self.seed_offset + self.seeds))

    def digest(self) -> str:
        """Hash of everything that changes results (not output location or seed selection)."""
        d = self.model_dump(mode="json",
                            exclude={"output_dir", "workers", "seeds", "seed_offset", "experiment_id"})
        return digest(d)

    def dump(self) -> dict:
        return self.model_dump(mode="json")


def _format_error(e: ValidationError) -> str:
    lines = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        kind = err["type"]
        if kind == "missing":
            lines.append(f"missing required field '{loc}'")
        elif kind == "extra_forbidden":
            lines.append(f"unknown field '{loc}'")
        else:
            lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_format_error(e)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: malformed config ({e})") from None
    return parse_config(raw)


def dump_config(config: ExperimentConfig, path=None) -> str:
    text = yaml.safe_dump(config.dump(), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text
