"""Bit-exact framing for the split-training protocol.

Layout (all integers little-endian)::

    "SPLT" | version u8 | msg_type u8 | step u64 | dtype u8 | ndim u8
    | dims u32 * ndim | payload | crc32 u32 over everything before it
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

MAGIC = b"SPLT"
VERSION = 0x01
HEADER = struct.Struct("<4sBBQBB")
CRC = struct.Struct("<I")


class MsgType(IntEnum):
    CONSENT_REQ = 0x01
    CONSENT_ACK = 0x02
    CONSENT_DENY = 0x03
    FORWARD_ACT = 0x04
    BACKWARD_GRAD = 0x05
    STEP_COMMIT = 0x06
    ABORT = 0x07


TENSOR_MSGS = (MsgType.FORWARD_ACT, MsgType.BACKWARD_GRAD)
DTYPE_CODES = {0x04: np.dtype("<f4"), 0x08: np.dtype("<f8")}
DTYPE_NONE = 0x00


class FrameError(ValueError):
    pass


class BadMagic(FrameError):
    pass


class BadVersion(FrameError):
    pass


class BadCrc(FrameError):
    pass


class UnknownMsgType(FrameError):
    pass


class BadDtype(FrameError):
    pass


class Truncated(FrameError):
    pass


@dataclass(eq=False)
class WireFrame:
    msg_type: MsgType
    step: int
    payload: np.ndarray | None = None
    dtype: int = DTYPE_NONE

    def __post_init__(self):
        self.msg_type = MsgType(self.msg_type)
        if self.payload is not None:
            if self.dtype == DTYPE_NONE:
                self.dtype = 0x08 if self.payload.dtype == np.float64 else 0x04
            self.payload = np.ascontiguousarray(self.payload, dtype=DTYPE_CODES[self.dtype])

    @property
    def dims(self) -> tuple[int, ...]:
        return () if self.payload is None else tuple(self.payload.shape)

    def __eq__(self, other):
        if not isinstance(other, WireFrame):
            return NotImplemented
        return encode_frame(self) == encode_frame(other)

    def __repr__(self):
        return f"WireFrame({self.msg_type.name}, step={self.step}, dims={list(self.dims)})"


def encode_frame(frame: WireFrame) -> bytes:
    if not 0 <= frame.step < 1 << 64:
        raise FrameError(f"step {frame.step} does not fit in 64 bits")
    payload = frame.payload
    if frame.msg_type in TENSOR_MSGS:
        if payload is None or payload.ndim == 0:
            raise FrameError(f"{frame.msg_type.name} frame needs a tensor payload with ndim >= 1")
    elif payload is not None:
        raise FrameError(f"{frame.msg_type.name} frames carry no payload")
    dims = frame.dims
    if len(dims) > 255:
        raise FrameError("too many dimensions")
    dtype = frame.dtype if payload is not None else DTYPE_NONE
    buf = bytearray(HEADER.pack(MAGIC, VERSION, int(frame.msg_type), frame.step, dtype, len(dims)))
    buf += struct.pack(f"<{len(dims)}I", *dims)
    if payload is not None:
        buf += payload.tobytes()
    buf += CRC.pack(zlib.crc32(buf))
    return bytes(buf)


def _check_prefix(data: bytes):
    if len(data) >= 4 and data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    if len(data) >= 5 and data[4] != VERSION:
        raise BadVersion(f"unsupported version {data[4]}")


def frame_length(header: bytes, dims: tuple[int, ...]) -> int:
    """Total frame size implied by a parsed header and its dims."""
    dtype = header[14]
    width = 0 if dtype == DTYPE_NONE else (DTYPE_CODES[dtype].itemsize if dtype in DTYPE_CODES else None)
    if width is None:
        raise BadDtype(f"unknown dtype code 0x{dtype:02x}")
    n = 1
    for d in dims:
        n *= d
    payload = width * n if dims else 0
    return HEADER.size + 4 * len(dims) + payload + CRC.size


def decode_frame(data: bytes) -> WireFrame:
    """Parse one frame. Checks run in order: magic, version, length, crc, msg_type, dtype."""
    data = bytes(data)
    _check_prefix(data)
    if len(data) < HEADER.size + CRC.size:
        raise Truncated(f"frame of {len(data)} bytes is shorter than the fixed header")
    _, _, msg, step, dtype, ndim = HEADER.unpack_from(data)
    if len(data) < HEADER.size + 4 * ndim:
        raise Truncated("frame truncated inside dims")
    dims = struct.unpack_from(f"<{ndim}I", data, HEADER.size)
    try:
        total = frame_length(data[:HEADER.size], dims)
    except BadDtype:
        total = None
    if total is not None and len(data) < total:
        raise Truncated(f"frame needs {total} bytes, got {len(data)}")
    end = total if total is not None else len(data)
    (crc,) = CRC.unpack_from(data, end - CRC.size)
    if zlib.crc32(data[:end - CRC.size]) != crc:
        raise BadCrc("crc32 mismatch")
    if total is not None and len(data) > total:
        raise FrameError(f"{len(data) - total} trailing bytes after frame")
    try:
        msg = MsgType(msg)
    except ValueError:
        raise UnknownMsgType(f"unknown msg_type 0x{msg:02x}") from None
    if total is None:
        raise BadDtype(f"unknown dtype code 0x{dtype:02x}")
    if msg in TENSOR_MSGS:
        if dtype == DTYPE_NONE or ndim == 0:
            raise BadDtype(f"{msg.name} frame without a tensor dtype")
        start = HEADER.size + 4 * ndim
        payload = np.frombuffer(data, DTYPE_CODES[dtype], count=int(np.prod(dims)), offset=start)
        return WireFrame(msg, step, payload.reshape(dims).copy(), dtype)
    if ndim or dtype != DTYPE_NONE:
        raise FrameError(f"{msg.name} frames must have ndim 0 and no dtype")
    return WireFrame(msg, step)


def read_frame(recv_exact) -> bytes:
    """Pull exactly one encoded frame off a stream via ``recv_exact(n)``."""
    head = recv_exact(HEADER.size)
    _check_prefix(head)
    ndim = head[15]
    raw_dims = recv_exact(4 * ndim)
    dims = struct.unpack(f"<{ndim}I", raw_dims)
    rest = frame_length(head, dims) - HEADER.size - 4 * ndim
    return head + raw_dims + recv_exact(rest)
