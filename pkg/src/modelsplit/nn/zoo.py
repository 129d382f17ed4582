"""Built-in architectures.

``alexnet_table4`` and ``a3c_table6`` exist for parameter counting only.
Pooling is not part of the layer set, so the input sizes are chosen to make
the layer shapes chain to the published fully connected widths:

* AlexNet: an 11x11x3 input with padded 5x5/3x3 convolutions reaches 1x1x256
  before ``linear1`` (256 -> 4096). Every layer carries a bias except the
  logits, which is what reproduces 4,096,000 = 4096 x 1000.
* A3C: an 80x80x4 input through 8x8/4, 4x4/2, 3x3/1 convolutions reaches
  6x6x64 = 2304 features before the 512-unit linear layer. No biases.
"""
from __future__ import annotations

from .layers import (ModelSpec, conv2d, dense, flatten, mlp, policy_head, relu, softmax_xent,
                     value_head)
from .overparam import scale_widths

# layer name -> column label used by the published tables
ALEXNET_LABELS = {
    "conv1": "Conv 1", "conv2": "Conv 2", "conv3": "Conv 3", "conv4": "Conv 4", "conv5": "Conv 5",
    "linear1": "Linear 1", "linear2": "Linear 2", "logits": "Logits",
}
A3C_LABELS = {
    "conv1": "Conv 1", "conv2": "Conv 2", "conv3": "Conv 3", "linear": "Linear",
    "policy": "Policy head", "value": "Value head",
}

# published cells that disagree with shape arithmetic: name -> (printed, derived)
ALEXNET_PRINTED = {"conv2": 614_654, "total": 25_677_182}
ALEXNET_LARGE_PRINTED = {"conv5": 1_991_000, "total": 54_668_312}


def alexnet_table4(width: float = 1.0) -> ModelSpec:
    m = ModelSpec((
        conv2d("conv1", 3, 96, 11), relu("relu1"),
        conv2d("conv2", 96, 256, 5, padding=2), relu("relu2"),
        conv2d("conv3", 256, 384, 3, padding=1), relu("relu3"),
        conv2d("conv4", 384, 384, 3, padding=1), relu("relu4"),
        conv2d("conv5", 384, 256, 3, padding=1), relu("relu5"),
        flatten("flat"),
        dense("linear1", 256, 4096), relu("relu6"),
        dense("linear2", 4096, 4096), relu("relu7"),
        dense("logits", 4096, 1000, bias=False),
        softmax_xent(),
    ), (11, 11, 3))
    if width != 1.0:
        m = scale_widths(m, [n for n in ALEXNET_LABELS if n != "logits"], width)
    return m


def a3c_table6(n_actions: int = 18) -> ModelSpec:
    return ModelSpec((
        conv2d("conv1", 4, 32, 8, stride=4, bias=False), relu("relu1"),
        conv2d("conv2", 32, 64, 4, stride=2, bias=False), relu("relu2"),
        conv2d("conv3", 64, 64, 3, stride=1, bias=False), relu("relu3"),
        flatten("flat"),
        dense("linear", 2304, 512, bias=False), relu("relu4"),
        policy_head("policy", 512, n_actions, bias=False),
        value_head("value", 512, bias=False),
    ), (80, 80, 4))


def toy_mlp(n_features: int = 10, n_classes: int = 4, hidden=(16, 16)) -> ModelSpec:
    return mlp([n_features, *hidden], n_classes)


def gridworld_net(n_obs: int = 25, n_actions: int = 4, hidden=(32, 32)) -> ModelSpec:
    layers = []
    dims = [n_obs, *hidden]
    for i in range(len(hidden)):
        layers += [dense(f"fc{i + 1}", dims[i], dims[i + 1]), relu(f"relu{i + 1}")]
    layers += [policy_head("policy", dims[-1], n_actions), value_head("value", dims[-1])]
    return ModelSpec(tuple(layers), (n_obs,))


BUILTIN = {
    "alexnet_table4": (alexnet_table4, ALEXNET_LABELS),
    "a3c_table6": (a3c_table6, A3C_LABELS),
}
