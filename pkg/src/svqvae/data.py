"""Labeled datasets: MNIST IDX files, generic CSV matrices, splits and blobs."""

from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numeric import Rng, check_finite

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


class CsvFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """An immutable labeled feature matrix.

    ``image_shape`` is set for image data (e.g. ``(28, 28)``) so that
    prototypes and samples can also be written as pictures.
    """

    features: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    value_range: tuple[float, float]
    image_shape: tuple[int, int] | None = field(default=None)

    def __post_init__(self):
        x = check_finite(self.features, "features")
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError(f"features must be a non-empty 2-D matrix, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValueError(f"{y.shape[0]} labels for {x.shape[0]} samples")
        names = tuple(str(n) for n in self.class_names)
        if len(set(names)) != len(names) or not names:
            raise ValueError("class_names must be non-empty and unique")
        if y.min() < 0 or y.max() >= len(names):
            raise ValueError(f"labels must lie in [0, {len(names)})")
        lo, hi = (float(v) for v in self.value_range)
        if not lo < hi:
            raise ValueError(f"value_range must satisfy lo < hi, got ({lo}, {hi})")
        if x.min() < lo or x.max() > hi:
            raise ValueError(f"features fall outside declared value_range ({lo}, {hi})")
        x = x.copy()
        y = y.copy()
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "value_range", (lo, hi))

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.features[index], self.labels[index], self.class_names,
                       self.value_range, self.image_shape)


def _read_idx(path, expected_magic: int, ndim: int) -> np.ndarray:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 + 4 * ndim:
        raise IdxTruncatedError(f"{path}: header is truncated ({len(blob)} bytes)")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    dims = struct.unpack(">" + "I" * ndim, blob[4:4 + 4 * ndim])
    payload = blob[4 + 4 * ndim:]
    needed = math.prod(dims)
    if len(payload) < needed:
        raise IdxTruncatedError(f"{path}: payload has {len(payload)} bytes, header promises {needed}")
    return np.frombuffer(payload, dtype=np.uint8, count=needed).reshape(dims)


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair; pixels map from [0, 255] to [-1, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}")
    n, rows, cols = images.shape
    x = images.reshape(n, rows * cols).astype(np.float64) * (2.0 / 255.0) - 1.0
    return Dataset(x, labels.astype(np.int64), tuple(str(d) for d in range(10)), (-1.0, 1.0),
                   image_shape=(rows, cols))


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array (1-D labels or 3-D images) in IDX format."""
    array = np.asarray(array, dtype=np.uint8)
    magic = {1: IDX_LABELS_MAGIC, 3: IDX_IMAGES_MAGIC}[array.ndim]
    header = struct.pack(">I", magic) + struct.pack(">" + "I" * array.ndim, *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def load_labeled_csv(path, label_column: str, value_range: tuple[float, float] | None = None) -> Dataset:
    """Read a header-first CSV; every non-label column is a numeric feature.

    Labels are indexed by first appearance.  ``value_range`` declares the
    feature range (e.g. ``(-10, 10)`` for clipped z-scores); without it the
    observed (min, max) is used.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise CsvFormatError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        dupes = sorted({h for h in header if header.count(h) > 1})
        raise CsvFormatError(f"{path}: duplicate header names {dupes}")
    if label_column not in header:
        raise CsvFormatError(f"{path}: label column {label_column!r} not in header")
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise CsvFormatError(f"{path}: no data rows")
    li = header.index(label_column)
    names: dict[str, int] = {}
    labels, feats = [], []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise CsvFormatError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        name = row[li].strip()
        if not name:
            raise CsvFormatError(f"{path}:{lineno}: missing label")
        labels.append(names.setdefault(name, len(names)))
        try:
            feats.append([float(c) for j, c in enumerate(row) if j != li])
        except ValueError as exc:
            raise CsvFormatError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
    x = np.array(feats, dtype=np.float64)
    if x.shape[1] == 0:
        raise CsvFormatError(f"{path}: no feature columns")
    if not np.all(np.isfinite(x)):
        raise CsvFormatError(f"{path}: non-finite feature value")
    if value_range is None:
        value_range = (float(x.min()), float(x.max()))
    elif x.min() < value_range[0] or x.max() > value_range[1]:
        raise CsvFormatError(f"{path}: values [{x.min()}, {x.max()}] exceed declared range {value_range}")
    return Dataset(x, np.array(labels), tuple(names), value_range)


def stratified_split(ds: Dataset, train_fraction: float, rng: Rng) -> tuple[Dataset, Dataset]:
    """Shuffle each class and cut it at ``round(fraction * n_c)``.

    A class with at least two samples always keeps one in each part; a
    singleton class goes to the training part.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    train_idx, test_idx = [], []
    for c in range(ds.n_classes):
        members = np.flatnonzero(ds.labels == c)
        n = members.size
        if n == 0:
            continue
        members = members[rng.permutation(n)]
        k = math.floor(train_fraction * n + 0.5)
        k = n if n == 1 else min(max(k, 1), n - 1)
        train_idx.append(members[:k])
        test_idx.append(members[k:])
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx))
    if test.size == 0:
        raise ValueError("split leaves the test part empty")
    return ds.subset(train), ds.subset(test)


def rescale_output(y_hat, value_range: tuple[float, float]) -> np.ndarray:
    """Affine map from [-1, 1] onto ``value_range``."""
    lo, hi = value_range
    if not lo < hi:
        raise ValueError(f"value_range must satisfy lo < hi, got {value_range}")
    return np.asarray(y_hat, dtype=np.float64) * (0.5 * (hi - lo)) + 0.5 * (hi + lo)


def make_blobs(rng: Rng, classes: int, dims: int, per_class: int,
               center_spread: float = 1.0, noise_std: float = 0.1) -> tuple[Dataset, np.ndarray]:
    """Gaussian clusters around centers drawn from N(0, spread^2 I).

    Returns the dataset and the planted ``classes x dims`` centers.
    """
    if min(classes, dims, per_class) <= 0:
        raise ValueError("classes, dims and per_class must be positive")
    centers = center_spread * rng.normal((classes, dims))
    labels = np.repeat(np.arange(classes), per_class)
    x = centers[labels] + noise_std * rng.normal((labels.size, dims))
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        lo, hi = lo - 1.0, hi + 1.0
    names = tuple(f"c{c}" for c in range(classes))
    return Dataset(x, labels, names, (lo, hi)), centers
