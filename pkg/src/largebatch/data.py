"""Synthetic Gaussian-cluster datasets and a small binary dataset format."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .numeric_core import Rng, as_tensor, rand_normal

DATASET_MAGIC = 0x44534554
_HEADER = struct.Struct("<IIII")
TRAIN_FRACTION = 0.8


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    classes: int

    def __post_init__(self):
        if len(self.train_x) != len(self.train_y) or len(self.val_x) != len(self.val_y):
            raise ValueError("feature and label counts differ")
        if len(self.train_y) == 0 or len(self.val_y) == 0:
            raise ValueError("both splits must be non-empty")

    @property
    def input_dim(self) -> int:
        return self.train_x.shape[1]


def class_means(classes, input_dim, separation, rng=None) -> np.ndarray:
    """Cluster centres with pairwise distance ``separation``.

    With ``input_dim >= classes`` the centres are scaled one-hot vectors, so
    every pair is exactly ``separation`` apart. Otherwise random unit
    directions are used and the spacing holds only on average.
    """
    if input_dim >= classes:
        means = np.zeros((classes, input_dim))
        means[np.arange(classes), np.arange(classes)] = separation / np.sqrt(2.0)
        return means
    dirs = rand_normal(rng, (classes, input_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * separation / np.sqrt(2.0)


def _split(x, y, classes, rng):
    order = rng.permutation(len(y))
    n_train = int(round(TRAIN_FRACTION * len(y)))
    tr, va = order[:n_train], order[n_train:]
    return Dataset(x[tr], y[tr], x[va], y[va], classes)


def make_synthetic_dataset(rng: Rng, classes=10, examples=51200, input_dim=64, separation=6.0):
    """Balanced class-conditional unit Gaussians, split 80/20 train/validation."""
    if separation < 0:
        raise ValueError("separation must be >= 0")
    if examples < classes:
        raise ValueError("need at least one example per class")
    means = class_means(classes, input_dim, separation, rng.spawn(0))
    labels = np.arange(examples) % classes
    noise = rand_normal(rng.spawn(1), (examples, input_dim))
    x = means[labels] + noise
    return _split(x, labels.astype(np.int64), classes, rng.spawn(2))


def save_dataset_file(path, x, y, classes):
    x = np.asarray(x, dtype="<f4")
    y = np.asarray(y, dtype="<u2")
    n, d = x.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, n, d, classes))
        fh.write(x.tobytes(order="C"))
        fh.write(y.tobytes())


def load_dataset_file(path, rng: Rng) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, n, d, classes = _HEADER.unpack_from(blob)
    if magic != DATASET_MAGIC:
        raise ValueError(f"{path}: bad magic 0x{magic:08x}")
    expected = _HEADER.size + 4 * n * d + 2 * n
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(blob)}")
    off = _HEADER.size
    x = np.frombuffer(blob, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    y = np.frombuffer(blob, dtype="<u2", count=n, offset=off + 4 * n * d)
    if (y >= classes).any():
        raise ValueError(f"{path}: label out of range")
    return _split(as_tensor(x), y.astype(np.int64), classes, rng)


def nearest_mean_accuracy(means, x, y) -> float:
    """Accuracy of the classifier that picks the closest cluster centre."""
    d2 = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return float((d2.argmin(axis=1) == y).mean())
