"""Retraining procedures: how the missing part is re-created before retraining."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from ..nn.layers import ModelSpec
from ..nn.optim import LrSchedule, halve_schedule
from ..nn.overparam import build_overparam, transfer_params
from ..nn.params import ParamStore, PartitionSpec, init_params, partition_mask, reinitialize
from ..tensor import STREAM_REINIT, InitScheme, RngStream

KINDS = ("T1", "T2", "T3", "T4", "full")


class NotApplicable(ValueError):
    """The procedure cannot be applied to this partition (e.g. widening a horizontal one)."""


@dataclass(frozen=True)
class RetrainProcedure:
    kind: str
    partition: PartitionSpec
    width_factor: float = 2.0
    scheme: Optional[InitScheme] = None
    schedule: Union[str, tuple] = "halved"
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown procedure {self.kind!r}; expected one of {KINDS}")
        if self.kind == "T3" and self.width_factor <= 1:
            raise ValueError("T3 needs width_factor > 1")
        if self.kind == "T4" and self.scheme is None:
            raise ValueError("T4 needs an init scheme")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    def lr_schedule(self, base: LrSchedule) -> LrSchedule:
        if self.schedule == "same":
            return base
        if self.schedule == "halved":
            return halve_schedule(base)
        return LrSchedule(tuple(self.schedule))

    def prepare(self, model: ModelSpec, trained: ParamStore, seed: int
                ) -> tuple[ModelSpec, ParamStore, Optional[np.ndarray]]:
        """Starting point (model, params, trainable mask) for retraining a model trained with ``seed``."""
        rng = RngStream(seed, STREAM_REINIT).generator()
        if self.kind == "full":
            return model, init_params(model, rng, trained.data.dtype), None
        if self.kind == "T3":
            if self.partition.mode != "vertical":
                raise NotApplicable("T3 widens whole layers and needs a vertical partition")
            widened = self.partition.resolve_layers(model)
            new_model = build_overparam(model, self.partition, self.width_factor)
            return new_model, transfer_params(model, new_model, trained, widened, rng), None
        scheme = self.scheme if self.kind == "T4" else None
        params = reinitialize(model, trained, self.partition, scheme, rng)
        trainable = partition_mask(model, trained, self.partition) if self.kind == "T2" else None
        return model, params, trainable
