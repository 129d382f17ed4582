"""Dataset sources: a synthetic toy task, IDX files and CSV files."""
from __future__ import annotations

import csv
import gzip
import struct
from pathlib import Path

import numpy as np

from .runs import Dataset, TaskData
from .tensor import STREAM_TOY, RngStream

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class DatasetError(ValueError):
    pass


def make_toy(n_train=600, n_test=400, n_features=10, n_classes=4, clusters_per_class=2,
             spread=2.5, noise=1.0, seed=0) -> TaskData:
    """Gaussian blobs, several per class, so a linear readout alone cannot fit it."""
    gen = RngStream(seed, STREAM_TOY).generator()
    centers = gen.normal(0.0, spread, size=(n_classes * clusters_per_class, n_features))
    owner = np.repeat(np.arange(n_classes), clusters_per_class)

    def draw(n):
        c = gen.integers(len(centers), size=n)
        x = centers[c] + gen.normal(0.0, noise, size=(n, n_features))
        return Dataset(x, owner[c])

    return TaskData(draw(n_train), draw(n_test))


def _open(path):
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"no such file: {path}")
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Raw unsigned-byte IDX array (images 0x803 or labels 0x801)."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise DatasetError(f"{path}: empty or truncated IDX file")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IDX_IMAGES, IDX_LABELS):
        raise DatasetError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    if len(raw) < 4 + 4 * ndim:
        raise DatasetError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    body = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if body.size != int(np.prod(dims)):
        raise DatasetError(f"{path}: header promises {int(np.prod(dims))} values, file holds {body.size}")
    if dims[0] == 0:
        raise DatasetError(f"{path}: IDX file holds no examples")
    return body.reshape(dims)


def write_idx(path, array: np.ndarray):
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(f">I{array.ndim}I", magic, *array.shape))
        f.write(array.tobytes())


def ingest_idx(images_path, labels_path, input_shape=None) -> Dataset:
    """Images scaled to [0, 1] with a trailing channel axis, plus integer labels."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise DatasetError(f"{images_path}: expected a 3-d image IDX file, got {images.ndim} dims")
    if labels.ndim != 1:
        raise DatasetError(f"{labels_path}: expected a 1-d label IDX file")
    if len(images) != len(labels):
        raise DatasetError(f"{len(images)} images but {len(labels)} labels")
    x = images.astype(np.float64)[..., None] / 255.0
    if input_shape is not None:
        x = _fit(x, tuple(input_shape))
    return Dataset(x, labels.astype(np.int64))


def _fit(x: np.ndarray, shape: tuple) -> np.ndarray:
    if tuple(x.shape[1:]) == shape:
        return x
    if int(np.prod(x.shape[1:])) == int(np.prod(shape)) and len(shape) == 1:
        return x.reshape(len(x), -1)
    raise DatasetError(f"examples of shape {list(x.shape[1:])} do not match model input {list(shape)}")


def ingest_csv(path, label_column: str = "label", input_shape=None) -> Dataset:
    """Feature columns min-max scaled to [0, 1]; labels mapped to indices in sorted order."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"no such file: {path}")
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise DatasetError(f"{path}: empty CSV file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if label_column not in header:
        raise DatasetError(f"{path}: no label column {label_column!r} in header {header}")
    if not body:
        raise DatasetError(f"{path}: CSV has a header but no rows")
    li = header.index(label_column)
    try:
        feats = np.array([[float(v) for j, v in enumerate(r) if j != li] for r in body])
    except ValueError as e:
        raise DatasetError(f"{path}: non-numeric feature value ({e})") from None
    raw_labels = [r[li] for r in body]
    classes = sorted(set(raw_labels), key=lambda v: (not v.lstrip("-").isdigit(), int(v) if v.lstrip("-").isdigit() else 0, v))
    y = np.array([classes.index(v) for v in raw_labels])
    lo, hi = feats.min(axis=0), feats.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    x = (feats - lo) / span
    if input_shape is not None:
        x = _fit(x, tuple(input_shape))
    return Dataset(x, y)
