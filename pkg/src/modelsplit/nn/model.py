"""Forward and backward passes over a ModelSpec.

Inputs are batched along axis 0: ``(n, features)`` for dense stacks and
``(n, H, W, C)`` for convolutional ones. Every pass can be restricted to a
contiguous layer range so the split protocol can run the lower and upper
halves in different processes with exactly the same arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..tensor import ShapeError, matmul, reduce_sum
from .layers import LayerSpec, ModelSpec
from .params import ParamStore


class StaleActivationsError(ValueError):
    pass


@dataclass
class Forward:
    """Everything backward needs: per-layer inputs, caches and head outputs."""

    model: ModelSpec
    params: ParamStore
    start: int
    stop: int
    inputs: dict[int, np.ndarray] = field(default_factory=dict)
    caches: dict[int, tuple] = field(default_factory=dict)
    outputs: dict[str, np.ndarray] = field(default_factory=dict)
    output: np.ndarray | None = None
    labels: np.ndarray | None = None
    loss: float | None = None


def _conv_cols(x, k, stride, pad):
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :oh, :ow]
    # (n, oh, ow, c, kh, kw) -> (n, oh, ow, kh, kw, c) to match the (kh, kw, cin, cout) weight layout
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, k * k * c)
    return cols, (n, h, w, c, oh, ow)


def conv2d_forward(x, w, b, stride, pad):
    k, _, c, o = w.shape
    cols, dims = _conv_cols(x, k, stride, pad)
    n, _, _, _, oh, ow = dims
    y = matmul(cols, w.reshape(k * k * c, o))
    if b is not None:
        y = y + b
    return y.reshape(n, oh, ow, o), (cols, dims)


def conv2d_backward(dy, w, cache, stride, pad):
    cols, (n, h, wd, c, oh, ow) = cache
    k, _, _, o = w.shape
    dy2 = dy.reshape(n * oh * ow, o)
    wm = w.reshape(k * k * c, o)
    dw = matmul(cols.T, dy2).reshape(w.shape)
    db = reduce_sum(dy2, axis=0)
    dcols = matmul(dy2, wm.T).reshape(n, oh, ow, k, k, c)
    dxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, c), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += dcols[:, :, :, i, j, :]
    return dxp[:, pad:pad + h, pad:pad + wd, :], dw, db


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and the softmax probabilities."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = reduce_sum(e, axis=1)[:, None]
    logp = z - np.log(s)
    n = logits.shape[0]
    loss = -reduce_sum(logp[np.arange(n), labels]) / n
    return float(loss), e / s


def _layer_forward(layer: LayerSpec, t: dict, x: np.ndarray):
    k = layer.kind
    if k == "relu":
        return np.maximum(x, 0.0), None
    if k == "flatten":
        return x.reshape(x.shape[0], -1), x.shape
    if k in ("dense", "policy_head", "value_head"):
        y = matmul(x, t["w"])
        if "b" in t:
            y = y + t["b"]
        return y, None
    if k == "conv2d":
        return conv2d_forward(x, t["w"], t.get("b"), layer.stride, layer.padding)
    if k == "residual_block":
        h1, c1 = conv2d_forward(x, t["w1"], t.get("b1"), 1, layer.padding)
        a1 = np.maximum(h1, 0.0)
        h2, c2 = conv2d_forward(a1, t["w2"], t.get("b2"), 1, layer.padding)
        return x + h2, (c1, h1, c2)
    raise ValueError(f"layer kind {k!r} has no forward rule here")


def _layer_backward(layer: LayerSpec, t: dict, x: np.ndarray, cache, dy: np.ndarray, g: dict):
    """Write parameter gradients into ``g`` (views) and return the input gradient."""
    k = layer.kind
    if k == "relu":
        return dy * (x > 0)
    if k == "flatten":
        return dy.reshape(cache)
    if k in ("dense", "policy_head", "value_head"):
        g["w"][...] = matmul(x.T, dy)
        if "b" in g:
            g["b"][...] = reduce_sum(dy, axis=0)
        return matmul(dy, t["w"].T)
    if k == "conv2d":
        dx, dw, db = conv2d_backward(dy, t["w"], cache, layer.stride, layer.padding)
        g["w"][...] = dw
        if "b" in g:
            g["b"][...] = db
        return dx
    if k == "residual_block":
        c1, h1, c2 = cache
        da1, dw2, db2 = conv2d_backward(dy, t["w2"], c2, 1, layer.padding)
        dh1 = da1 * (h1 > 0)
        dx, dw1, db1 = conv2d_backward(dh1, t["w1"], c1, 1, layer.padding)
        g["w1"][...] = dw1
        g["w2"][...] = dw2
        if "b1" in g:
            g["b1"][...] = db1
            g["b2"][...] = db2
        return dy + dx
    raise ValueError(f"layer kind {k!r} has no backward rule here")


def forward_range(model: ModelSpec, params: ParamStore, x: np.ndarray, start: int = 0,
                  stop: int | None = None, labels: np.ndarray | None = None) -> Forward:
    """Run layers ``[start, stop)``; head layers are included when ``stop`` reaches the end."""
    n_layers = len(model.layers)
    n_trunk = model.n_trunk
    stop = n_layers if stop is None else stop
    if not 0 <= start <= stop <= n_layers or start > n_trunk:
        raise ValueError(f"bad layer range [{start}, {stop}) for a {n_layers}-layer model")
    expect = model.in_shape(start)
    if tuple(x.shape[1:]) != expect:
        raise ShapeError(f"input shape {list(x.shape[1:])} does not match expected {list(expect)}")
    fwd = Forward(model, params, start, stop, labels=labels)
    h = x
    for i in range(start, min(stop, n_trunk)):
        layer = model.layers[i]
        t = params.tensors(model, layer.name) if layer.parametric else {}
        fwd.inputs[i] = h
        h, fwd.caches[i] = _layer_forward(layer, t, h)
    fwd.output = h
    if stop > n_trunk:
        for i in range(n_trunk, stop):
            layer = model.layers[i]
            fwd.inputs[i] = h
            if layer.kind == "softmax_xent_head":
                fwd.outputs[layer.name] = h
                if labels is not None:
                    fwd.loss, probs = softmax_xent(h, labels)
                    fwd.caches[i] = probs
            else:
                t = params.tensors(model, layer.name)
                fwd.outputs[layer.name], fwd.caches[i] = _layer_forward(layer, t, h)
    return fwd


def forward(model: ModelSpec, params: ParamStore, x: np.ndarray, labels: np.ndarray | None = None) -> Forward:
    return forward_range(model, params, x, 0, None, labels)


def backward_range(model: ModelSpec, params: ParamStore, fwd: Forward,
                   grad_out: np.ndarray | None = None,
                   head_grads: dict[str, np.ndarray] | None = None,
                   grads: ParamStore | None = None) -> tuple[ParamStore, np.ndarray]:
    """Backpropagate through ``fwd``'s layer range.

    The upstream gradient is either ``grad_out`` (gradient of the range's
    output, used by the lower half of a split model), the softmax head's own
    loss, or ``head_grads`` keyed by policy/value head name.
    Returns the parameter gradients and the gradient w.r.t. the range input.
    """
    if fwd.params is not params or fwd.model != model:
        raise StaleActivationsError("activations were produced by different parameters or model")
    grads = params.zeros_like() if grads is None else grads
    n_trunk = model.n_trunk
    dh = None
    if fwd.stop > n_trunk:
        for i in range(n_trunk, fwd.stop):
            layer = model.layers[i]
            if layer.kind == "softmax_xent_head":
                if fwd.loss is None:
                    raise StaleActivationsError("softmax head ran without labels; no loss to differentiate")
                probs = fwd.caches[i]
                n = probs.shape[0]
                d = probs.copy()
                d[np.arange(n), fwd.labels] -= 1.0
                d /= n
            else:
                if not head_grads or layer.name not in head_grads:
                    continue
                t = params.tensors(model, layer.name)
                d = _layer_backward(layer, t, fwd.inputs[i], fwd.caches[i], head_grads[layer.name],
                                    grads.tensors(model, layer.name))
            dh = d if dh is None else dh + d
    elif grad_out is not None:
        if grad_out.shape != fwd.output.shape:
            raise ShapeError(f"upstream gradient {list(grad_out.shape)} vs output {list(fwd.output.shape)}")
        dh = grad_out
    if dh is None:
        raise ValueError("no upstream gradient for backward pass")
    for i in range(min(fwd.stop, n_trunk) - 1, fwd.start - 1, -1):
        layer = model.layers[i]
        t = params.tensors(model, layer.name) if layer.parametric else {}
        g = grads.tensors(model, layer.name) if layer.parametric else {}
        dh = _layer_backward(layer, t, fwd.inputs[i], fwd.caches[i], dh, g)
    return grads, dh


def backward(model: ModelSpec, params: ParamStore, fwd: Forward, **kw) -> ParamStore:
    return backward_range(model, params, fwd, **kw)[0]


def loss_and_grads(model: ModelSpec, params: ParamStore, x, y) -> tuple[float, ParamStore]:
    fwd = forward(model, params, x, y)
    return fwd.loss, backward(model, params, fwd)


def evaluate_loss(model: ModelSpec, params: ParamStore, x, y) -> float:
    return forward(model, params, x, y).loss
