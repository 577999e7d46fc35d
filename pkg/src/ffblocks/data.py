"""Dataset construction: synthetic Gaussian blobs and IDX image files."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .numerics import Array

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Base class for malformed IDX files."""


class IdxMagicError(IdxFormatError):
    """The magic number does not match the expected IDX type."""


class IdxTruncatedError(IdxFormatError):
    """The payload is shorter than the header promises."""


class IdxCountMismatchError(IdxFormatError):
    """Image and label files disagree on the example count."""


class ExampleSet(NamedTuple):
    x: Array
    y: Array


@dataclass(frozen=True)
class DatasetSpec:
    """Selector plus parameters for either dataset kind.

    ``blobs``: ``class_count`` Gaussian clusters with means placed
    uniformly on a sphere of ``radius`` in ``dim`` dimensions,
    ``noise_std`` isotropic noise, split by the three fractions.
    ``idx``: big-endian IDX image/label file pairs, pixels scaled by
    ``pixel_scale`` into [0, 1].
    """

    kind: str = "blobs"
    class_count: int = 4
    dim: int = 32
    per_class: int = 150
    radius: float = 5.0
    noise_std: float = 1.0
    split_train: float = 0.6
    split_val: float = 0.2
    split_test: float = 0.2
    seed: int = 0
    idx_train_images: str = ""
    idx_train_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    pixel_scale: float = 255.0

    def __post_init__(self):
        if self.kind not in ("blobs", "idx"):
            raise ValueError(f"dataset kind must be 'blobs' or 'idx', got {self.kind!r}")
        if self.kind == "blobs":
            if self.class_count < 2:
                raise ValueError(f"blobs need class_count >= 2, got {self.class_count}")
            if min(self.dim, self.per_class) < 1:
                raise ValueError("dim and per_class must be >= 1")
            total = self.split_train + self.split_val + self.split_test
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"split fractions must sum to 1, got {total}")


def blob_means(spec: DatasetSpec, rng: np.random.Generator) -> Array:
    """Class means drawn uniformly on the sphere of spec.radius."""
    v = rng.standard_normal((spec.class_count, spec.dim))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return spec.radius * v / norms


def make_blobs(spec: DatasetSpec, rng: np.random.Generator | None = None):
    """(train, val, test) ExampleSets; deterministic under spec.seed.

    The splits are disjoint: one shuffled pass over all points, cut at
    the rounded fraction boundaries.
    """
    if spec.kind != "blobs":
        raise ValueError("make_blobs needs a spec with kind='blobs'")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    means = blob_means(spec, rng)
    xs, ys = [], []
    for c in range(spec.class_count):
        xs.append(means[c] + spec.noise_std * rng.standard_normal((spec.per_class, spec.dim)))
        ys.append(np.full(spec.per_class, c, dtype=np.int64))
    x = np.concatenate(xs, axis=0)
    y = np.concatenate(ys, axis=0)
    order = rng.permutation(len(x))
    x, y = x[order], y[order]
    n = len(x)
    n_train = int(round(spec.split_train * n))
    n_val = int(round(spec.split_val * n))
    if n_train + n_val >= n:
        raise ValueError("split leaves no test examples")
    return (
        ExampleSet(x[:n_train], y[:n_train]),
        ExampleSet(x[n_train:n_train + n_val], y[n_train:n_train + n_val]),
        ExampleSet(x[n_train + n_val:], y[n_train + n_val:]),
    )


def _read_idx(path: str, expected_magic: int, expected_dims: int):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise IdxTruncatedError(f"{path}: shorter than a magic number")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic != expected_magic:
        raise IdxMagicError(
            f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    header_len = 4 + 4 * expected_dims
    if len(blob) < header_len:
        raise IdxTruncatedError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{expected_dims}I", blob[4:header_len])
    count = int(np.prod(dims))
    payload = blob[header_len:]
    if len(payload) < count:
        raise IdxTruncatedError(
            f"{path}: payload holds {len(payload)} bytes, header promises {count}")
    data = np.frombuffer(payload[:count], dtype=np.uint8)
    return dims, data


def read_idx_images(path: str) -> Array:
    """(n, rows*cols) float64 matrix of raw pixel bytes."""
    dims, data = _read_idx(path, IDX_IMAGE_MAGIC, 3)
    n, rows, cols = dims
    return data.astype(np.float64).reshape(n, rows * cols)


def read_idx_labels(path: str) -> Array:
    (dims, data) = _read_idx(path, IDX_LABEL_MAGIC, 1)
    return data.astype(np.int64)


def load_idx(image_path: str, label_path: str,
             pixel_scale: float = 255.0) -> ExampleSet:
    """Parse an IDX image/label pair; pixels scaled into [0, 1]."""
    x = read_idx_images(image_path)
    y = read_idx_labels(label_path)
    if len(x) != len(y):
        raise IdxCountMismatchError(
            f"{image_path} has {len(x)} images but {label_path} has {len(y)} labels")
    return ExampleSet(x / pixel_scale, y)


def load_dataset(spec: DatasetSpec):
    """(train, val, test) for either dataset kind.

    For IDX data the training file is split train/val by the spec's
    fractions (deterministic under spec.seed) and the test files are used
    as-is.
    """
    if spec.kind == "blobs":
        return make_blobs(spec)
    train_full = load_idx(spec.idx_train_images, spec.idx_train_labels,
                          spec.pixel_scale)
    test = load_idx(spec.idx_test_images, spec.idx_test_labels, spec.pixel_scale)
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(train_full.x))
    frac = spec.split_train / (spec.split_train + spec.split_val)
    n_train = int(round(frac * len(order)))
    tr, va = order[:n_train], order[n_train:]
    return (
        ExampleSet(train_full.x[tr], train_full.y[tr]),
        ExampleSet(train_full.x[va], train_full.y[va]),
        test,
    )


def dataset_class_count(spec: DatasetSpec, train: ExampleSet) -> int:
    if spec.kind == "blobs":
        return spec.class_count
    return int(train.y.max()) + 1
