"""Dataset ingestion and synthesis.

Supports synthetic two-spirals and Gaussian-blob generators, IDX image
files and CIFAR-10 binary batches.  Features are normalized to zero
mean, unit variance per channel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801
CIFAR_RECORD_BYTES = 1 + 3072


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray          # features, (N, ...) float64
    y: np.ndarray          # integer labels, (N,)
    train_idx: np.ndarray
    val_idx: np.ndarray

    @property
    def n_classes(self):
        return int(self.y.max()) + 1

    def train(self):
        return self.x[self.train_idx], self.y[self.train_idx]

    def val(self):
        return self.x[self.val_idx], self.y[self.val_idx]


def _split(n, mode, rng=None):
    idx = np.arange(n)
    if mode == "first_3_5":
        # meta-train on the leading 3/5, validate training on the rest
        cut = (3 * n) // 5
        return idx[:cut], idx[cut:]
    if mode == "none":
        return idx, idx[:0]
    raise DatasetFormatError(f"unknown split mode: {mode}")


def _normalize(x):
    """Zero mean, unit variance per channel (last axis for flat data,
    channel axis for NCHW images)."""
    if x.ndim == 4:
        axes = (0, 2, 3)
        m = x.mean(axis=axes, keepdims=True)
        s = x.std(axis=axes, keepdims=True)
    else:
        m = x.mean(axis=0, keepdims=True)
        s = x.std(axis=0, keepdims=True)
    s = np.where(s == 0, 1.0, s)
    return (x - m) / s


def spirals(n_per_class=256, classes=3, noise=0.15, turns=1.25, seed=0,
            split="first_3_5"):
    """Interleaved 2-d spirals, one arm per class."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c in range(classes):
        t = np.linspace(0.25, 1.0, n_per_class)
        angle = 2 * np.pi * (turns * t + c / classes)
        r = t
        pts = np.stack([r * np.cos(angle), r * np.sin(angle)], axis=1)
        pts += noise * rng.standard_normal(pts.shape) * t[:, None]
        xs.append(pts)
        ys.append(np.full(n_per_class, c))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    perm = rng.permutation(len(y))
    x, y = x[perm], y[perm]
    tr, va = _split(len(y), split)
    return Dataset(_normalize(x), y.astype(np.int64), tr, va)


def blobs(n_per_class=256, classes=3, spread=0.35, seed=0, split="first_3_5"):
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((classes, 2)) * 2.0
    xs, ys = [], []
    for c in range(classes):
        xs.append(centers[c] + spread * rng.standard_normal((n_per_class, 2)))
        ys.append(np.full(n_per_class, c))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    perm = rng.permutation(len(y))
    tr, va = _split(len(y), split)
    return Dataset(_normalize(x[perm]), y[perm].astype(np.int64), tr, va)


def load_idx_images(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise DatasetFormatError("truncated IDX image file")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_MAGIC_IMAGES:
        raise DatasetFormatError(f"bad IDX image magic: {magic:#010x}")
    body = np.frombuffer(raw, dtype=np.uint8, offset=16)
    if body.size != n * rows * cols:
        raise DatasetFormatError("truncated IDX image payload")
    return body.reshape(n, 1, rows, cols).astype(np.float64) / 255.0


def load_idx_labels(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise DatasetFormatError("truncated IDX label file")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_MAGIC_LABELS:
        raise DatasetFormatError(f"bad IDX label magic: {magic:#010x}")
    body = np.frombuffer(raw, dtype=np.uint8, offset=8)
    if body.size != n:
        raise DatasetFormatError("truncated IDX label payload")
    return body.astype(np.int64)


def load_idx(image_path, label_path, limit=None, split="first_3_5"):
    x = load_idx_images(image_path)
    y = load_idx_labels(label_path)
    if len(x) != len(y):
        raise DatasetFormatError("image/label count mismatch")
    if limit:
        x, y = x[:limit], y[:limit]
    tr, va = _split(len(y), split)
    return Dataset(_normalize(x), y, tr, va)


def load_cifar10_batch(path, limit=None, split="first_3_5"):
    with open(path, "rb") as f:
        raw = np.frombuffer(f.read(), dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD_BYTES != 0:
        raise DatasetFormatError("truncated CIFAR-10 binary batch")
    rec = raw.reshape(-1, CIFAR_RECORD_BYTES)
    y = rec[:, 0].astype(np.int64)
    x = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    if limit:
        x, y = x[:limit], y[:limit]
    tr, va = _split(len(y), split)
    return Dataset(_normalize(x), y, tr, va)


def load_dataset(spec: dict) -> Dataset:
    """Build a dataset from a config subtree (key ``kind`` selects)."""
    kind = spec.get("kind")
    split = spec.get("split", "first_3_5")
    if kind == "spirals":
        return spirals(n_per_class=spec.get("n_per_class", 256),
                       classes=spec.get("classes", 3),
                       noise=spec.get("noise", 0.15),
                       seed=spec.get("seed", 0), split=split)
    if kind == "blobs":
        return blobs(n_per_class=spec.get("n_per_class", 256),
                     classes=spec.get("classes", 3),
                     spread=spec.get("spread", 0.35),
                     seed=spec.get("seed", 0), split=split)
    if kind == "idx":
        return load_idx(spec["images"], spec["labels"],
                        limit=spec.get("limit"), split=split)
    if kind == "cifar10":
        return load_cifar10_batch(spec["path"], limit=spec.get("limit"),
                                  split=split)
    raise DatasetFormatError(f"unknown dataset kind: {kind}")


class BatchSampler:
    """Deterministic with-replacement mini-batch stream."""

    def __init__(self, x, y, batch_size, seed=0):
        self.x, self.y = x, y
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)

    def __call__(self, rng=None):
        r = rng if rng is not None else self.rng
        idx = r.integers(len(self.y), size=self.batch_size)
        return self.x[idx], self.y[idx]
