"""Widening partitioned layers (retraining procedure T3) and carrying weights across."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..tensor import InitScheme, RngLike, as_generator
from .layers import LayerSpec, ModelSpec, SpecError
from .params import ParamStore, PartitionSpec, init_layer


def _widened(layer: LayerSpec, factor: float) -> LayerSpec:
    w = lambda n: max(1, int(round(n * factor)))
    if layer.kind == "dense":
        return replace(layer, out_features=w(layer.out_features))
    if layer.kind == "conv2d":
        return replace(layer, out_channels=w(layer.out_channels))
    if layer.kind == "residual_block":
        # the skip path fixes the block's outer width; only the inner conv grows
        return replace(layer, mid_channels=w(layer.mid))
    raise SpecError(f"layer {layer.name!r} of kind {layer.kind} cannot be widened")


def _repair_input(layer: LayerSpec, in_shape: tuple[int, ...]) -> LayerSpec:
    if layer.kind in ("dense", "policy_head", "value_head"):
        if in_shape != (layer.in_features,):
            return replace(layer, in_features=in_shape[0])
    elif layer.kind == "conv2d":
        if in_shape[2] != layer.in_channels:
            return replace(layer, in_channels=in_shape[2])
    elif layer.kind == "residual_block" and in_shape[2] != layer.in_channels:
        raise SpecError(f"residual block {layer.name!r} cannot absorb a widened input")
    return layer


def scale_widths(model: ModelSpec, names, factor: float) -> ModelSpec:
    """Scale the named layers' widths by ``factor`` and fix the next layer's input size."""
    if factor <= 0:
        raise ValueError("width factor must be positive")
    names = set(names)
    fixed = model.output_layer_names() & names
    if fixed:
        raise SpecError(f"cannot widen output head(s) {sorted(fixed)}: their width is set by the task")
    layers = [(_widened(l, factor) if l.name in names else l) for l in model.layers]
    # walk once more, repairing whichever layer first consumes a changed shape
    out = []
    shape = model.input_shape
    n_trunk = model.n_trunk
    trunk_out = None
    for i, layer in enumerate(layers):
        if i >= n_trunk and trunk_out is None:
            trunk_out = shape
        src = shape if i < n_trunk else trunk_out
        if layer.kind not in ("relu", "flatten", "softmax_xent_head"):
            layer = _repair_input(layer, src)
        out.append(layer)
        if i < n_trunk:
            shape = layer.output_shape(shape)
    return model.with_layers(out)


def build_overparam(model: ModelSpec, partition: PartitionSpec, width_factor: float) -> ModelSpec:
    if width_factor < 1:
        raise ValueError(f"width factor must be >= 1, got {width_factor}")
    if partition.mode != "vertical":
        raise ValueError("overparametrization needs a vertical (whole-layer) partition")
    if width_factor == 1:
        return model
    return scale_widths(model, partition.resolve_layers(model), width_factor)


def _embed(old: np.ndarray, new_shape: tuple[int, ...], axis: int) -> np.ndarray:
    """Zero-pad ``old`` along ``axis`` up to ``new_shape``."""
    out = np.zeros(new_shape, dtype=old.dtype)
    idx = [slice(None)] * old.ndim
    idx[axis] = slice(0, old.shape[axis])
    out[tuple(idx)] = old
    return out


def transfer_params(old_model: ModelSpec, new_model: ModelSpec, old: ParamStore,
                    widened: list[str], rng: RngLike, scheme: InitScheme | None = None) -> ParamStore:
    """Parameters for a widened model.

    Widened layers are drawn fresh. A layer whose input grew keeps its trained
    weights for the original inputs and gets zero weights for the new ones, so
    the retained parameters are carried over unchanged.
    """
    gen = as_generator(rng)
    new = ParamStore.for_model(new_model, old.data.dtype)
    for name in new.segments:
        if name in widened:
            new.segment(name)[:] = init_layer(new_model, name, gen, scheme, old.data.dtype)
            continue
        ol, nl = old_model.layer(name), new_model.layer(name)
        if ol == nl:
            new.segment(name)[:] = old.segment(name)
            continue
        ot, nt = old.tensors(old_model, name), new.tensors(new_model, name)
        for key, w in ot.items():
            if w.shape == nt[key].shape:
                nt[key][...] = w
            elif w.ndim == 4:
                nt[key][...] = _embed(w, nt[key].shape, 2)
            else:
                grid = _flattened_source(old_model, old_model.index(name))
                if grid is not None:
                    # dense reading a flattened feature map: pad the channel axis of (H, W, C, out)
                    h, wd, c = grid
                    new_c = nt[key].shape[0] // (h * wd)
                    w4 = w.reshape(h, wd, c, w.shape[1])
                    nt[key][...] = _embed(w4, (h, wd, new_c, w.shape[1]), 2).reshape(nt[key].shape)
                else:
                    nt[key][...] = _embed(w, nt[key].shape, 0)
    return new


def _flattened_source(model: ModelSpec, i: int):
    """Feature-map shape feeding layer ``i`` through a flatten, if there is one."""
    for j in range(min(i, model.n_trunk) - 1, -1, -1):
        layer = model.layers[j]
        if layer.kind == "flatten":
            src = model.in_shape(j)
            return src if len(src) == 3 else None
        if layer.parametric:
            return None
    return None
