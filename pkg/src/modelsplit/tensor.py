"""Dense tensor kernels, seeded random streams and weight initializers.

Tensors are plain numpy arrays. The kernels here fix their summation order
(left to right over the reduced axis) so that two executions of the same
computation, even split across two processes, agree bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

Tensor = np.ndarray

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

# stream ids used across the package
STREAM_INIT = 1
STREAM_DATA = 2
STREAM_MASK = 3
STREAM_REINIT = 4
STREAM_ENV = 5
STREAM_EVAL = 6
STREAM_POLICY = 7
STREAM_REPLAY = 8
STREAM_TOY = 9

_U64 = (1 << 64) - 1


class ShapeError(ValueError):
    """Operands do not conform, or a shape is not a valid tensor shape."""


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream id) pair naming one reproducible random sequence.

    Backed by the counter-based Philox generator keyed with both values,
    so any two streams with distinct ids are independent and a given pair
    yields the same numbers on every machine.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _U64 and 0 <= self.stream <= _U64):
            raise ValueError("seed and stream id must be unsigned 64-bit integers")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.seed | (self.stream << 64)))

    def substream(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream)


RngLike = Union[RngStream, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


class InitScheme(str, Enum):
    ZEROS = "zeros"
    GLOROT_UNIFORM = "glorot_uniform"
    GLOROT_NORMAL = "glorot_normal"
    MSRA = "msra"
    CAFFE = "caffe"


def init_bound(scheme: InitScheme, fan_in: int, fan_out: int) -> float:
    """Half-width of the support (uniform schemes) or standard deviation (normal schemes)."""
    scheme = InitScheme(scheme)
    if scheme is InitScheme.ZEROS:
        return 0.0
    if scheme is InitScheme.GLOROT_UNIFORM:
        return math.sqrt(6.0 / (fan_in + fan_out))
    if scheme is InitScheme.GLOROT_NORMAL:
        return math.sqrt(2.0 / (fan_in + fan_out))
    if scheme is InitScheme.MSRA:
        return math.sqrt(2.0 / fan_in)
    # caffe's "xavier" filler: uniform with variance 1/fan_in
    return math.sqrt(3.0 / fan_in)


def check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if not shape:
        raise ShapeError("shape must have at least one dimension")
    if any(d < 1 for d in shape):
        raise ShapeError(f"invalid shape {list(shape)}: every dimension must be >= 1")
    return shape


def init_tensor(shape, scheme, fan_in: int, fan_out: int, rng: RngLike,
                dtype=np.float64) -> Tensor:
    shape = check_shape(shape)
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}")
    scheme = InitScheme(scheme)
    gen = as_generator(rng)
    b = init_bound(scheme, fan_in, fan_out)
    if scheme is InitScheme.ZEROS:
        out = np.zeros(shape)
    elif scheme in (InitScheme.GLOROT_UNIFORM, InitScheme.CAFFE):
        out = gen.uniform(-b, b, size=shape)
    else:
        out = gen.normal(0.0, b, size=shape)
    return out.astype(dtype, copy=False)


def _conform(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {list(a.shape)} vs {list(b.shape)}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _conform(a, b, "add")
    return a + b


def mul(a: Tensor, b: Tensor) -> Tensor:
    _conform(a, b, "mul")
    return a * b


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {list(a.shape)}")
    return np.ascontiguousarray(a.T)


_MATMUL_BLOCK = 1 << 21


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product accumulated over the inner index in ascending order.

    Each output entry equals ``sum_k a[i, k] * b[k, j]`` evaluated left to
    right, i.e. exactly what a naive triple loop produces.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {list(a.shape)} @ {list(b.shape)}")
    m, inner = a.shape
    n = b.shape[1]
    dtype = np.result_type(a, b)
    out = np.zeros((m, n), dtype=dtype)
    if inner <= 32:
        for k in range(inner):
            out += a[:, k, None] * b[None, k, :]
        return out
    # long inner index: cumsum (sequential) over [acc, p_k0, p_k1, ...] keeps the loop's order
    bt = b.T
    block = max(1, _MATMUL_BLOCK // max(1, m * n))
    for k0 in range(0, inner, block):
        k1 = min(inner, k0 + block)
        buf = np.empty((m, n, k1 - k0 + 1), dtype=dtype)
        buf[..., 0] = out
        np.multiply(a[:, None, k0:k1], bt[None, :, k0:k1], out=buf[..., 1:])
        out = np.cumsum(buf, axis=2)[..., -1]
    return out


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    """Sum with a fixed left-to-right order (np.sum uses pairwise summation)."""
    if axis is None:
        a = a.reshape(-1)
        axis = 0
    if a.shape[axis] == 0:
        return np.zeros(np.delete(a.shape, axis), dtype=a.dtype)
    return np.take(np.cumsum(a, axis=axis), -1, axis=axis)


def all_finite(a: Tensor) -> bool:
    return bool(np.all(np.isfinite(a)))
