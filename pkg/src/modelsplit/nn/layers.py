"""Layer and model descriptions, shape inference and parameter counting."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable

from ..tensor import InitScheme

KINDS = (
    "dense",
    "conv2d",
    "relu",
    "flatten",
    "softmax_xent_head",
    "residual_block",
    "policy_head",
    "value_head",
)
PARAMETRIC = ("dense", "conv2d", "residual_block", "policy_head", "value_head")
HEAD_KINDS = ("softmax_xent_head", "policy_head", "value_head")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ParamShape:
    """One weight or bias tensor inside a layer's segment."""

    name: str
    shape: tuple[int, ...]
    fan_in: int
    fan_out: int
    is_bias: bool = False

    @property
    def size(self) -> int:
        return math.prod(self.shape)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    mid_channels: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    has_bias: bool = True
    init: InitScheme = InitScheme.GLOROT_UNIFORM

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"layer {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "init", InitScheme(self.init))

    @property
    def parametric(self) -> bool:
        return self.kind in PARAMETRIC

    def param_shapes(self) -> list[ParamShape]:
        k = self.kind
        out: list[ParamShape] = []
        if k in ("dense", "policy_head", "value_head"):
            n_out = 1 if k == "value_head" else self.out_features
            out.append(ParamShape("w", (self.in_features, n_out), self.in_features, n_out))
            if self.has_bias:
                out.append(ParamShape("b", (n_out,), self.in_features, n_out, True))
        elif k == "conv2d":
            kk = self.kernel * self.kernel
            fi, fo = kk * self.in_channels, kk * self.out_channels
            out.append(ParamShape("w", (self.kernel, self.kernel, self.in_channels, self.out_channels), fi, fo))
            if self.has_bias:
                out.append(ParamShape("b", (self.out_channels,), fi, fo, True))
        elif k == "residual_block":
            c, m, kk = self.in_channels, self.mid, self.kernel * self.kernel
            out.append(ParamShape("w1", (self.kernel, self.kernel, c, m), kk * c, kk * m))
            if self.has_bias:
                out.append(ParamShape("b1", (m,), kk * c, kk * m, True))
            out.append(ParamShape("w2", (self.kernel, self.kernel, m, c), kk * m, kk * c))
            if self.has_bias:
                out.append(ParamShape("b2", (c,), kk * m, kk * c, True))
        return out

    @property
    def mid(self) -> int:
        return self.mid_channels or self.in_channels

    def count(self) -> int:
        return sum(p.size for p in self.param_shapes())

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        k = self.kind
        if k == "relu":
            return in_shape
        if k == "flatten":
            return (math.prod(in_shape),)
        if k in ("dense", "policy_head", "value_head"):
            if in_shape != (self.in_features,):
                raise SpecError(f"layer {self.name!r} expects input ({self.in_features},), got {in_shape}")
            return (1,) if k == "value_head" else (self.out_features,)
        if k == "softmax_xent_head":
            if len(in_shape) != 1:
                raise SpecError(f"layer {self.name!r} expects flat logits, got {in_shape}")
            return in_shape
        if len(in_shape) != 3 or in_shape[2] != self.in_channels:
            raise SpecError(
                f"layer {self.name!r} expects [H, W, {self.in_channels}] input, got {list(in_shape)}")
        if k == "residual_block":
            if 2 * self.padding != self.kernel - 1 or self.stride != 1:
                raise SpecError(f"residual block {self.name!r} must preserve its input shape")
            return in_shape
        h, w, _ = in_shape
        oh = (h + 2 * self.padding - self.kernel) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if oh < 1 or ow < 1:
            raise SpecError(f"layer {self.name!r}: kernel {self.kernel} does not fit input {list(in_shape)}")
        return (oh, ow, self.out_channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init"] = self.init.value
        return d


@dataclass(frozen=True)
class ModelSpec:
    """An ordered layer stack. Trailing head layers all read the trunk output."""

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]
    shapes: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        names = [l.name for l in self.layers]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise SpecError(f"duplicate layer names: {sorted(dupes)}")
        if not self.layers:
            raise SpecError("model has no layers")
        object.__setattr__(self, "shapes", tuple(self._infer()))

    def _infer(self) -> list[tuple[int, ...]]:
        shapes = []
        cur = self.input_shape
        trunk_out = None
        n_trunk = self.n_trunk
        for i, layer in enumerate(self.layers):
            if i < n_trunk:
                if layer.kind in HEAD_KINDS:
                    raise SpecError(f"head layer {layer.name!r} must come after all trunk layers")
                cur = layer.output_shape(cur)
                shapes.append(cur)
            else:
                if trunk_out is None:
                    trunk_out = cur
                shapes.append(layer.output_shape(trunk_out))
        heads = [l.kind for l in self.layers[n_trunk:]]
        if "softmax_xent_head" in heads and len(heads) != 1:
            raise SpecError("softmax_xent_head cannot be combined with other heads")
        return shapes

    @property
    def n_trunk(self) -> int:
        n = len(self.layers)
        while n > 0 and self.layers[n - 1].kind in HEAD_KINDS:
            n -= 1
        return n

    @property
    def heads(self) -> tuple[LayerSpec, ...]:
        return self.layers[self.n_trunk:]

    @property
    def names(self) -> list[str]:
        return [l.name for l in self.layers]

    def index(self, name: str) -> int:
        for i, l in enumerate(self.layers):
            if l.name == name:
                return i
        raise KeyError(f"unknown layer {name!r}")

    def layer(self, name: str) -> LayerSpec:
        return self.layers[self.index(name)]

    def in_shape(self, i: int) -> tuple[int, ...]:
        if i >= self.n_trunk:
            i = self.n_trunk
        return self.input_shape if i == 0 else self.shapes[i - 1]

    def parametric_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.parametric]

    def output_layer_names(self) -> set[str]:
        """Layers whose output width is fixed by the task (class count, action count)."""
        out = {l.name for l in self.layers if l.kind in ("policy_head", "value_head")}
        if self.layers[-1].kind == "softmax_xent_head":
            for l in reversed(self.layers[:-1]):
                if l.parametric:
                    out.add(l.name)
                    break
        return out

    def with_layers(self, layers: Iterable[LayerSpec]) -> "ModelSpec":
        return ModelSpec(tuple(layers), self.input_shape)

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        layers = []
        for raw in d["layers"]:
            raw = dict(raw)
            unknown = set(raw) - set(LayerSpec.__dataclass_fields__)
            if unknown:
                raise SpecError(f"unknown layer fields {sorted(unknown)}")
            layers.append(LayerSpec(**raw))
        return cls(tuple(layers), tuple(d["input_shape"]))


def count_parameters(model: ModelSpec) -> tuple[dict[str, int], int]:
    """Per-layer trainable parameter counts (parameter-free layers report 0) and the total."""
    per_layer = {l.name: l.count() for l in model.layers}
    return per_layer, sum(per_layer.values())


# small constructors; keyword names mirror LayerSpec fields

def dense(name, n_in, n_out, bias=True, init=InitScheme.GLOROT_UNIFORM) -> LayerSpec:
    return LayerSpec(name, "dense", in_features=n_in, out_features=n_out, has_bias=bias, init=init)


def conv2d(name, in_ch, out_ch, kernel, stride=1, padding=0, bias=True,
           init=InitScheme.GLOROT_UNIFORM) -> LayerSpec:
    return LayerSpec(name, "conv2d", in_channels=in_ch, out_channels=out_ch, kernel=kernel,
                     stride=stride, padding=padding, has_bias=bias, init=init)


def residual_block(name, channels, kernel=3, mid_channels=0, bias=True,
                   init=InitScheme.GLOROT_UNIFORM) -> LayerSpec:
    return LayerSpec(name, "residual_block", in_channels=channels, out_channels=channels,
                     mid_channels=mid_channels, kernel=kernel, padding=(kernel - 1) // 2,
                     has_bias=bias, init=init)


def relu(name) -> LayerSpec:
    return LayerSpec(name, "relu")


def flatten(name) -> LayerSpec:
    return LayerSpec(name, "flatten")


def softmax_xent(name="xent") -> LayerSpec:
    return LayerSpec(name, "softmax_xent_head")


def policy_head(name, n_in, n_actions, bias=True, init=InitScheme.GLOROT_UNIFORM) -> LayerSpec:
    return LayerSpec(name, "policy_head", in_features=n_in, out_features=n_actions, has_bias=bias, init=init)


def value_head(name, n_in, bias=True, init=InitScheme.GLOROT_UNIFORM) -> LayerSpec:
    return LayerSpec(name, "value_head", in_features=n_in, out_features=1, has_bias=bias, init=init)


def mlp(sizes: list[int], n_classes: int, bias=True, prefix="fc") -> ModelSpec:
    """Dense/relu stack ending in a softmax cross-entropy head."""
    layers: list[LayerSpec] = []
    dims = list(sizes) + [n_classes]
    for i in range(len(dims) - 1):
        layers.append(dense(f"{prefix}{i + 1}", dims[i], dims[i + 1], bias=bias))
        if i < len(dims) - 2:
            layers.append(relu(f"relu{i + 1}"))
    layers.append(softmax_xent())
    return ModelSpec(tuple(layers), (sizes[0],))


def replace_layer(model: ModelSpec, name: str, **changes) -> ModelSpec:
    i = model.index(name)
    layers = list(model.layers)
    layers[i] = replace(layers[i], **changes)
    return model.with_layers(layers)
