import struct

import numpy as np
import pytest

from natgrad.datasets import (CIFAR_RECORD_BYTES, IDX_MAGIC_IMAGES,
                              IDX_MAGIC_LABELS, BatchSampler, Dataset,
                              DatasetFormatError, blobs, load_cifar10_batch,
                              load_dataset, load_idx, spirals)


def _write_idx(tmp_path, n=10, rows=4, cols=4, magic_img=IDX_MAGIC_IMAGES,
               magic_lbl=IDX_MAGIC_LABELS, truncate_img=0, truncate_lbl=0):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, size=(n, rows, cols), dtype=np.uint8)
    lbls = rng.integers(0, 3, size=n, dtype=np.uint8)
    ip = tmp_path / "images.idx"
    lp = tmp_path / "labels.idx"
    iraw = struct.pack(">IIII", magic_img, n, rows, cols) + imgs.tobytes()
    lraw = struct.pack(">II", magic_lbl, n) + lbls.tobytes()
    if truncate_img:
        iraw = iraw[:-truncate_img]
    if truncate_lbl:
        lraw = lraw[:-truncate_lbl]
    ip.write_bytes(iraw)
    lp.write_bytes(lraw)
    return ip, lp, imgs, lbls


def test_format_constants():
    assert IDX_MAGIC_IMAGES == 0x803
    assert IDX_MAGIC_LABELS == 0x801
    assert CIFAR_RECORD_BYTES == 3073


def test_spirals_deterministic_and_shapes():
    a = spirals(n_per_class=50, classes=3, seed=4)
    b = spirals(n_per_class=50, classes=3, seed=4)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.y, b.y)
    assert a.x.shape == (150, 2)
    assert a.n_classes == 3
    c = spirals(n_per_class=50, classes=3, seed=5)
    assert not np.array_equal(a.x, c.x)


def test_normalization_zero_mean_unit_variance():
    ds = spirals(n_per_class=200, classes=2, seed=0)
    assert np.allclose(ds.x.mean(axis=0), 0.0, atol=1e-10)
    assert np.allclose(ds.x.std(axis=0), 1.0, atol=1e-10)


def test_split_three_fifths_disjoint():
    ds = blobs(n_per_class=50, classes=2, seed=1)
    n = len(ds.y)
    assert len(ds.train_idx) == (3 * n) // 5
    assert len(ds.train_idx) + len(ds.val_idx) == n
    assert len(np.intersect1d(ds.train_idx, ds.val_idx)) == 0


def test_blobs_classes_separable():
    ds = blobs(n_per_class=100, classes=3, spread=0.05, seed=2)
    # tight blobs: class means are far apart relative to spread
    for c in range(3):
        pts = ds.x[ds.y == c]
        assert np.all(pts.std(axis=0) < 0.5)


def test_idx_roundtrip(tmp_path):
    ip, lp, imgs, lbls = _write_idx(tmp_path)
    ds = load_idx(str(ip), str(lp), split="none")
    assert ds.x.shape == (10, 1, 4, 4)
    assert np.array_equal(ds.y, lbls)


def test_idx_bad_magic(tmp_path):
    ip, lp, _, _ = _write_idx(tmp_path, magic_img=0x123)
    with pytest.raises(DatasetFormatError):
        load_idx(str(ip), str(lp))


def test_idx_truncated_payload(tmp_path):
    ip, lp, _, _ = _write_idx(tmp_path, truncate_img=5)
    with pytest.raises(DatasetFormatError):
        load_idx(str(ip), str(lp))


def test_idx_truncated_labels(tmp_path):
    ip, lp, _, _ = _write_idx(tmp_path, truncate_lbl=2)
    with pytest.raises(DatasetFormatError):
        load_idx(str(ip), str(lp))


def test_idx_count_mismatch(tmp_path):
    ip, _, _, _ = _write_idx(tmp_path, n=10)
    _, lp, _, _ = _write_idx(tmp_path / "..", n=10)
    # rewrite labels with a different count
    lp2 = tmp_path / "short.idx"
    lp2.write_bytes(struct.pack(">II", IDX_MAGIC_LABELS, 4) + bytes(4))
    with pytest.raises(DatasetFormatError):
        load_idx(str(ip), str(lp2))


def test_cifar_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    n = 6
    rec = np.zeros((n, CIFAR_RECORD_BYTES), dtype=np.uint8)
    rec[:, 0] = rng.integers(0, 10, size=n)
    rec[:, 1:] = rng.integers(0, 256, size=(n, 3072))
    p = tmp_path / "batch.bin"
    p.write_bytes(rec.tobytes())
    ds = load_cifar10_batch(str(p), split="none")
    assert ds.x.shape == (n, 3, 32, 32)
    assert np.array_equal(ds.y, rec[:, 0])


def test_cifar_truncated(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(bytes(CIFAR_RECORD_BYTES + 1))
    with pytest.raises(DatasetFormatError):
        load_cifar10_batch(str(p))


def test_load_dataset_dispatch_and_unknown():
    ds = load_dataset({"kind": "spirals", "n_per_class": 20, "classes": 2})
    assert ds.x.shape == (40, 2)
    with pytest.raises(DatasetFormatError):
        load_dataset({"kind": "nope"})
    with pytest.raises(DatasetFormatError):
        load_dataset({})


def test_batch_sampler_deterministic():
    ds = spirals(n_per_class=30, classes=2, seed=0)
    a = BatchSampler(ds.x, ds.y, 8, seed=3)
    b = BatchSampler(ds.x, ds.y, 8, seed=3)
    for _ in range(5):
        xa, ya = a()
        xb, yb = b()
        assert np.array_equal(xa, xb)
        assert np.array_equal(ya, yb)


def test_batch_sampler_shapes_and_membership():
    ds = spirals(n_per_class=30, classes=2, seed=0)
    s = BatchSampler(ds.x, ds.y, 8, seed=0)
    x, y = s()
    assert x.shape == (8, 2)
    assert y.shape == (8,)
    assert np.all(np.isin(y, ds.y))
