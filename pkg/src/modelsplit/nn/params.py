"""Flat parameter storage, partitions of it, and reinitialization."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from ..tensor import STREAM_MASK, InitScheme, RngLike, RngStream, as_generator, init_tensor
from .layers import ModelSpec


@dataclass(frozen=True)
class Segment:
    offset: int
    length: int

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.length)


class ParamStore:
    """One flat vector holding every trainable value, segmented per layer.

    Segments follow model order and tile the vector without gaps.
    """

    def __init__(self, data: np.ndarray, segments: Mapping[str, Segment]):
        self.data = data
        self.segments = dict(segments)
        end = 0
        for name, seg in self.segments.items():
            if seg.offset != end:
                raise ValueError(f"segment {name!r} leaves a gap or overlaps at offset {seg.offset}")
            end += seg.length
        if end != data.size or data.ndim != 1:
            raise ValueError(f"segments cover {end} values but the vector holds {data.size}")

    @classmethod
    def for_model(cls, model: ModelSpec, dtype=np.float64, names: Iterable[str] | None = None) -> "ParamStore":
        keep = None if names is None else set(names)
        segments = {}
        off = 0
        for layer in model.layers:
            if not layer.parametric or (keep is not None and layer.name not in keep):
                continue
            n = layer.count()
            segments[layer.name] = Segment(off, n)
            off += n
        return cls(np.zeros(off, dtype=dtype), segments)

    def __len__(self):
        return self.data.size

    def __repr__(self):
        return f"ParamStore({len(self)} values, layers={list(self.segments)})"

    def __contains__(self, name):
        return name in self.segments

    def segment(self, name: str) -> np.ndarray:
        return self.data[self.segments[name].slice]

    def tensors(self, model: ModelSpec, name: str) -> dict[str, np.ndarray]:
        """Views onto a layer's weight and bias tensors, reshaped."""
        flat = self.segment(name)
        out = {}
        off = 0
        for p in model.layer(name).param_shapes():
            out[p.name] = flat[off:off + p.size].reshape(p.shape)
            off += p.size
        return out

    def copy(self) -> "ParamStore":
        return ParamStore(self.data.copy(), self.segments)

    def zeros_like(self) -> "ParamStore":
        return ParamStore(np.zeros_like(self.data), self.segments)

    def with_data(self, data: np.ndarray) -> "ParamStore":
        return ParamStore(data, self.segments)

    def same_layout(self, other: "ParamStore") -> bool:
        return self.segments == other.segments

    def subset(self, names: Iterable[str]) -> "ParamStore":
        names = [n for n in self.segments if n in set(names)]
        segs, parts, off = {}, [], 0
        for n in names:
            seg = self.segments[n]
            segs[n] = Segment(off, seg.length)
            parts.append(self.segment(n))
            off += seg.length
        data = np.concatenate(parts) if parts else np.zeros(0, dtype=self.data.dtype)
        return ParamStore(data.copy(), segs)

    def update_from(self, other: "ParamStore") -> "ParamStore":
        """Copy of self with every layer present in ``other`` overwritten."""
        out = self.copy()
        for n in other.segments:
            out.segment(n)[:] = other.segment(n)
        return out


def init_layer(model: ModelSpec, name: str, gen: np.random.Generator,
               scheme: InitScheme | None = None, dtype=np.float64) -> np.ndarray:
    """Fresh values for one layer: weights from the scheme, biases zero."""
    layer = model.layer(name)
    scheme = layer.init if scheme is None else InitScheme(scheme)
    parts = []
    for p in layer.param_shapes():
        if p.is_bias:
            parts.append(np.zeros(p.size, dtype=dtype))
        else:
            parts.append(init_tensor(p.shape, scheme, p.fan_in, p.fan_out, gen, dtype).reshape(-1))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=dtype)


def init_params(model: ModelSpec, rng: RngLike, dtype=np.float64) -> ParamStore:
    gen = as_generator(rng)
    store = ParamStore.for_model(model, dtype)
    for name in store.segments:
        store.segment(name)[:] = init_layer(model, name, gen, dtype=dtype)
    return store


@dataclass(frozen=True)
class PartitionSpec:
    """The "missing" part of a model.

    vertical: every parameter of the named layers.
    horizontal: in each named layer (all parametric layers when none are
    named) a fraction of coordinates chosen by a mask seeded with ``mask_seed``.
    """

    mode: str = "vertical"
    layers: tuple[str, ...] = ()
    fraction: float | Mapping[str, float] = 1.0
    mask_seed: int = 0
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.mode not in ("vertical", "horizontal"):
            raise ValueError(f"partition mode must be vertical or horizontal, got {self.mode!r}")
        object.__setattr__(self, "layers", tuple(self.layers))
        fracs = self.fraction.values() if isinstance(self.fraction, Mapping) else [self.fraction]
        for f in fracs:
            if not 0.0 < f <= 1.0:
                raise ValueError(f"partition fraction must lie in (0, 1], got {f}")

    @classmethod
    def vertical(cls, *layers: str) -> "PartitionSpec":
        return cls("vertical", tuple(layers))

    @classmethod
    def horizontal(cls, fraction, mask_seed=0, layers=()) -> "PartitionSpec":
        return cls("horizontal", tuple(layers), fraction, mask_seed)

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.mode == "vertical":
            return "+".join(self.layers) if self.layers else "none"
        return f"horizontal:{self.fraction}"

    def resolve_layers(self, model: ModelSpec) -> list[str]:
        for n in self.layers:
            if n not in model.names:
                raise KeyError(f"unknown layer {n!r} in partition")
            if not model.layer(n).parametric:
                raise ValueError(f"layer {n!r} has no parameters to partition")
        if self.mode == "horizontal" and not self.layers:
            return [model.layers[i].name for i in model.parametric_indices()]
        return [n for n in model.names if n in self.layers]

    def fraction_for(self, name: str) -> float:
        if isinstance(self.fraction, Mapping):
            return float(self.fraction.get(name, 1.0))
        return float(self.fraction)

    def to_dict(self) -> dict:
        frac = dict(self.fraction) if isinstance(self.fraction, Mapping) else self.fraction
        return {"mode": self.mode, "layers": list(self.layers), "fraction": frac,
                "mask_seed": self.mask_seed, "label": self.label}


def partition_mask(model: ModelSpec, params: ParamStore, partition: PartitionSpec) -> np.ndarray:
    """Boolean mask over the flat vector, True where a coordinate is missing."""
    mask = np.zeros(len(params), dtype=bool)
    names = partition.resolve_layers(model)
    gen = RngStream(partition.mask_seed, STREAM_MASK).generator()
    for name in names:
        if name not in params:
            raise KeyError(f"layer {name!r} not held by this parameter store")
        seg = params.segments[name]
        if partition.mode == "vertical":
            mask[seg.slice] = True
            continue
        # round first so 0.3 * 10 selects 3, not 4
        k = math.ceil(round(partition.fraction_for(name) * seg.length, 9))
        chosen = gen.permutation(seg.length)[:k]
        mask[seg.offset + chosen] = True
    return mask


def reinitialize(model: ModelSpec, params: ParamStore, partition: PartitionSpec,
                 scheme: InitScheme | None, rng: RngLike) -> ParamStore:
    """Redraw the partition's coordinates; every other coordinate is copied bit for bit.

    Layers are visited in model order and each draws a full fresh layer from
    ``rng``, so resetting all layers reproduces ``init_params`` exactly.
    """
    gen = as_generator(rng)
    mask = partition_mask(model, params, partition)
    out = params.copy()
    for name in partition.resolve_layers(model):
        seg = params.segments[name]
        fresh = init_layer(model, name, gen, scheme, params.data.dtype)
        m = mask[seg.slice]
        out.segment(name)[m] = fresh[m]
    return out
