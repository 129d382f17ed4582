import struct

import numpy as np
import pytest

from modelsplit.datasets import DatasetError, ingest_csv, ingest_idx, make_toy, read_idx


def _idx(path, magic, dims, body):
    path.write_bytes(struct.pack(f">I{len(dims)}I", magic, *dims) + bytes(body))
    return path


def test_hand_built_idx(tmp_path):
    pixels = list(range(0, 256, 16))  # 16 bytes for 4 images of 2x2
    img = _idx(tmp_path / "img.idx", 0x00000803, (4, 2, 2), pixels)
    lab = _idx(tmp_path / "lab.idx", 0x00000801, (4,), [3, 1, 4, 1])
    ds = ingest_idx(img, lab)
    assert ds.x.shape == (4, 2, 2, 1)
    assert ds.x[0, :, :, 0].tolist() == [[0.0, 16 / 255], [32 / 255, 48 / 255]]
    assert ds.y.tolist() == [3, 1, 4, 1]
    assert read_idx(img).shape == (4, 2, 2)
    assert ingest_idx(img, lab, input_shape=(4,)).x.shape == (4, 4)


def test_idx_count_mismatch(tmp_path):
    img = _idx(tmp_path / "img.idx", 0x00000803, (4, 2, 2), range(16))
    lab = _idx(tmp_path / "lab.idx", 0x00000801, (3,), [0, 1, 2])
    with pytest.raises(DatasetError, match="4 images but 3 labels"):
        ingest_idx(img, lab)


def test_idx_bad_magic_and_truncation(tmp_path):
    with pytest.raises(DatasetError, match="magic"):
        read_idx(_idx(tmp_path / "a", 0x00000804, (1,), [0]))
    with pytest.raises(DatasetError, match="promises"):
        read_idx(_idx(tmp_path / "b", 0x00000801, (5,), [0, 1]))
    (tmp_path / "c").write_bytes(b"")
    with pytest.raises(DatasetError):
        read_idx(tmp_path / "c")


def test_idx_shape_mismatch_with_model(tmp_path):
    img = _idx(tmp_path / "img.idx", 0x00000803, (4, 2, 2), range(16))
    lab = _idx(tmp_path / "lab.idx", 0x00000801, (4,), [0, 1, 0, 1])
    with pytest.raises(DatasetError, match="do not match"):
        ingest_idx(img, lab, input_shape=(3, 3, 1))


def test_csv_three_rows(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,label\n1,10,cat\n2,20,dog\n3,40,cat\n")
    ds = ingest_csv(p)
    assert ds.x.shape == (3, 2) and len(ds) == 3
    assert ds.x[:, 0].tolist() == [0.0, 0.5, 1.0]
    assert ds.y.tolist() == [0, 1, 0]


def test_csv_errors(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(DatasetError, match="empty"):
        ingest_csv(p)
    p.write_text("a,b\n1,2\n")
    with pytest.raises(DatasetError, match="label column"):
        ingest_csv(p)
    p.write_text("a,label\nx,1\n")
    with pytest.raises(DatasetError, match="non-numeric"):
        ingest_csv(p)
    with pytest.raises(DatasetError):
        ingest_csv(tmp_path / "missing.csv")


def test_toy_deterministic():
    a, b = make_toy(seed=3), make_toy(seed=3)
    assert np.array_equal(a.train.x, b.train.x) and np.array_equal(a.test.y, b.test.y)
    assert not np.array_equal(a.train.x, make_toy(seed=4).train.x)
