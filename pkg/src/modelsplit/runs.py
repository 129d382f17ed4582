"""Training configuration, evaluated loss curves and deterministic batching."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .tensor import STREAM_DATA, RngStream


def digest(obj) -> str:
    """Stable short hash of any JSON-serializable value."""
    raw = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(raw.encode()).hexdigest()[:16]


@dataclass
class TrainConfig:
    budget: int = 300
    batch_size: int = 32
    eval_every: int = 10
    schedule: tuple = ((0, 0.05),)
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    data_seed: int = 0

    def __post_init__(self):
        if self.budget < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("budget must be >= 0, batch_size and eval_every >= 1")
        self.schedule = tuple((int(s), float(r)) for s, r in self.schedule)

    def lr_schedule(self):
        from .nn.optim import LrSchedule
        return LrSchedule(self.schedule)

    def eval_steps(self) -> list[int]:
        """Grid of evaluated steps: every ``eval_every`` steps, plus the final one."""
        steps = list(range(0, self.budget, self.eval_every))
        if not steps or steps[-1] != self.budget:
            steps.append(self.budget)
        return steps

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["schedule"] = [list(e) for e in self.schedule]
        return d

    def digest(self) -> str:
        return digest(self.to_dict())


@dataclass
class TrainingRun:
    """An evaluated loss curve ``[(step, loss), ...]`` with its provenance."""

    points: list[tuple[int, float]] = field(default_factory=list)
    budget: int = 0
    seed: int = 0
    config_digest: str = ""
    committed: int = 0
    aborted: str | None = None
    params: object = field(default=None, repr=False, compare=False)
    extras: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.points = [(int(s), float(l)) for s, l in self.points]
        steps = [s for s, _ in self.points]
        if steps and (steps[0] != 0 or any(b <= a for a, b in zip(steps, steps[1:]))):
            raise ValueError(f"curve steps must start at 0 and strictly increase, got {steps[:5]}...")

    @property
    def steps(self) -> list[int]:
        return [s for s, _ in self.points]

    @property
    def losses(self) -> list[float]:
        return [l for _, l in self.points]

    @property
    def initial_loss(self) -> float:
        if not self.points:
            raise ValueError("empty training run")
        return self.points[0][1]

    def to_dict(self) -> dict:
        return {"points": [[s, l] for s, l in self.points], "budget": self.budget, "seed": self.seed,
                "config_digest": self.config_digest, "committed": self.committed, "aborted": self.aborted}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingRun":
        return cls([tuple(p) for p in d["points"]], d.get("budget", 0), d.get("seed", 0),
                   d.get("config_digest", ""), d.get("committed", 0), d.get("aborted"))


@dataclass
class Dataset:
    x: np.ndarray | None
    y: np.ndarray | None

    def __len__(self):
        return len(self.x) if self.x is not None else len(self.y)


@dataclass
class TaskData:
    train: Dataset
    test: Dataset


def batches(n: int, batch_size: int, data_seed: int) -> Iterator[np.ndarray]:
    """Endless index batches: a fresh seeded permutation every epoch, remainder dropped."""
    gen = RngStream(data_seed, STREAM_DATA).generator()
    per_epoch = max(1, n // batch_size)
    size = min(batch_size, n)
    while True:
        perm = gen.permutation(n)
        for i in range(per_epoch):
            yield perm[i * size:(i + 1) * size]


def check_finite_loss(loss: float, step: int):
    from .nn.optim import NonFiniteError
    if not math.isfinite(loss):
        raise NonFiniteError(f"loss became {loss} at step {step}; aborting run")
