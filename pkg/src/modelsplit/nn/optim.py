"""Momentum SGD with coupled weight decay and step-indexed learning-rate schedules."""
from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .params import ParamStore


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LrSchedule:
    """Piecewise-constant rate: ``entries[i] = (start_step, rate)``, start inclusive."""

    entries: tuple[tuple[int, float], ...]

    def __post_init__(self):
        entries = tuple((int(s), float(r)) for s, r in self.entries)
        if not entries or entries[0][0] != 0:
            raise ValueError("schedule must start at step 0")
        steps = [s for s, _ in entries]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError(f"schedule steps must be strictly increasing, got {steps}")
        if any(r <= 0 for _, r in entries):
            raise ValueError("learning rates must be positive")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def constant(cls, rate: float) -> "LrSchedule":
        return cls(((0, rate),))

    def to_list(self) -> list[list]:
        return [[s, r] for s, r in self.entries]


# AlexNet training schedule (batches -> rate)
ALEXNET_SCHEDULE = LrSchedule(((0, 5e-2), (60_000, 5e-3), (90_000, 5e-4), (105_000, 5e-5)))


def lr_at(schedule: LrSchedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    starts = [s for s, _ in schedule.entries]
    return schedule.entries[bisect.bisect_right(starts, step) - 1][1]


def halve_schedule(schedule: LrSchedule) -> LrSchedule:
    """Retraining schedule that runs through the same rates twice as fast.

    Not idempotent: halving twice quarters every boundary.
    """
    return LrSchedule(tuple((s // 2, r) for s, r in schedule.entries))


@dataclass
class OptimizerState:
    momentum: float
    velocity: np.ndarray
    weight_decay: float = 1e-4

    @classmethod
    def zeros(cls, params: ParamStore, momentum: float = 0.9, weight_decay: float = 1e-4) -> "OptimizerState":
        return cls(momentum, np.zeros_like(params.data), weight_decay)


def sgd_step(params: ParamStore, grads: ParamStore, state: OptimizerState, lr: float,
             trainable: np.ndarray | None = None) -> tuple[ParamStore, OptimizerState]:
    """One classic-momentum step: ``v = m v + g + wd theta``; ``theta -= lr v``.

    Coordinates where ``trainable`` is False are left untouched, velocity included.
    """
    if not params.same_layout(grads) or state.velocity.shape != params.data.shape:
        raise ValueError("params, grads and optimizer state lengths do not conform")
    if not np.all(np.isfinite(grads.data)):
        bad = int(np.count_nonzero(~np.isfinite(grads.data)))
        raise NonFiniteError(f"{bad} non-finite gradient values; aborting step")
    v = state.momentum * state.velocity + grads.data + state.weight_decay * params.data
    theta = params.data - lr * v
    if trainable is not None:
        v = np.where(trainable, v, state.velocity)
        theta = np.where(trainable, theta, params.data)
    return params.with_data(theta), OptimizerState(state.momentum, v, state.weight_decay)
