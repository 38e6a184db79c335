"""
Labeled datasets for the gradient-noise measurements: synthetic generators,
the MNIST IDX container and plain CSV tables.
"""
import csv
import logging
import math
import struct
from dataclasses import dataclass

import numpy as np

from errors import DatasetFormatError, IdxFormatError, ParameterDomainError, require
from stable_sampler import make_rng

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

SYNTH_SPECS = ('gaussian-blobs', 'ring-mixture')


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        require(features.ndim == 2 and features.shape[0] >= 1 and features.shape[1] >= 1,
                'features', f"need an n x d matrix with n, d >= 1, got shape {features.shape}")
        require(labels.shape == (features.shape[0],), 'labels',
                f"need {features.shape[0]} labels, got shape {labels.shape}")
        require(np.all(np.isfinite(features)), 'features', "must be finite")
        require(np.all((labels >= 0) & (labels < self.num_classes)), 'labels',
                f"every label must lie in [0, {self.num_classes})")
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'labels', labels)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def subset(self, rows):
        return self.features[rows], self.labels[rows]


def _balanced_labels(n, num_classes, rng):
    return rng.permutation(np.arange(n) % num_classes)


def synth_dataset(n, d, num_classes, spec, seed, separation=4.0):
    """
    Reproducible labeled data with class sizes balanced within one.

    gaussian-blobs: unit-variance clouds whose means sit `separation` apart.
    ring-mixture: class k spread around a ring of radius (k + 1) * separation / 2
    in the first two coordinates, unit Gaussian noise elsewhere.
    """
    require(n >= 1, 'n', f"must be at least 1, got {n}")
    require(d >= 1, 'd', f"must be at least 1, got {d}")
    require(num_classes >= 2, 'num_classes', f"need at least two classes, got {num_classes}")
    require(separation > 0, 'separation', f"must be positive, got {separation}")
    if spec not in SYNTH_SPECS:
        raise ParameterDomainError('spec', f"must be one of {SYNTH_SPECS}, got {spec!r}")

    rng = make_rng(seed)
    labels = _balanced_labels(n, num_classes, rng)

    if spec == 'gaussian-blobs':
        if num_classes <= d:
            # axis-aligned means are pairwise exactly `separation` apart
            means = np.eye(num_classes, d) * separation / math.sqrt(2.0)
        else:
            directions = rng.standard_normal((num_classes, d))
            means = directions / np.linalg.norm(directions, axis=1, keepdims=True) * separation
        features = means[labels] + rng.standard_normal((n, d))
    else:
        require(d >= 2, 'd', "ring-mixture needs at least two dimensions")
        angle = rng.uniform(0.0, 2.0 * math.pi, size=n)
        radius = (labels + 1) * separation / 2.0 + 0.1 * separation * rng.standard_normal(n)
        features = rng.standard_normal((n, d))
        features[:, 0] = radius * np.cos(angle)
        features[:, 1] = radius * np.sin(angle)

    return Dataset(features=features, labels=labels, num_classes=num_classes)


def _read_be32(data, offset, what):
    if len(data) < offset + 4:
        raise IdxFormatError(f"file ends before the {what} field", offset=len(data))
    value, = struct.unpack_from('>I', data, offset)
    return value


def _read_idx(path, magic, header_fields):
    with open(path, 'rb') as f:
        data = f.read()
    found = _read_be32(data, 0, 'magic')
    if found != magic:
        raise IdxFormatError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}", offset=0)
    dims = [_read_be32(data, 4 * (i + 1), name) for i, name in enumerate(header_fields)]
    start = 4 * (len(header_fields) + 1)
    need = int(np.prod(dims))
    if len(data) < start + need:
        raise IdxFormatError(f"{path}: truncated payload, need {need} bytes after the header",
                             offset=len(data))
    return dims, np.frombuffer(data, dtype=np.uint8, count=need, offset=start)


def load_idx(images_path, labels_path, limit=None):
    """
    MNIST-style IDX pair: big-endian 32-bit header fields, one unsigned byte
    per pixel (scaled to [0, 1]) and per label. `limit` keeps the first rows.
    """
    (count, rows, cols), pixels = _read_idx(images_path, IDX_IMAGE_MAGIC, ('count', 'rows', 'cols'))
    (label_count,), labels = _read_idx(labels_path, IDX_LABEL_MAGIC, ('count',))
    if label_count != count:
        raise IdxFormatError(f"{labels_path}: {label_count} labels for {count} images", offset=4)

    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if limit is not None:
        require(limit >= 1, 'limit', f"must be at least 1, got {limit}")
        features, labels = features[:limit], labels[:limit]
    logger.info("loaded %d IDX examples of %dx%d", len(labels), rows, cols)
    num_classes = max(2, int(labels.max()) + 1) if len(labels) else 2
    return Dataset(features=features, labels=labels, num_classes=num_classes)


def load_csv_dataset(path, limit=None):
    """CSV with a header row; the `label` column holds class indices, the rest are features"""
    with open(path, newline='') as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file")
        if 'label' not in header:
            raise DatasetFormatError(f"{path}: no 'label' column in header {header}")
        label_col = header.index('label')

        features, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetFormatError(f"{path}:{line_no}: {len(row)} fields, header has {len(header)}")
            try:
                labels.append(int(row[label_col]))
                features.append([float(v) for i, v in enumerate(row) if i != label_col])
            except ValueError as e:
                raise DatasetFormatError(f"{path}:{line_no}: {e}")
            if limit is not None and len(labels) >= limit:
                break

    if not labels:
        raise DatasetFormatError(f"{path}: no data rows")
    if min(labels) < 0:
        raise DatasetFormatError(f"{path}: negative class label")
    return Dataset(features=np.array(features), labels=np.array(labels),
                   num_classes=max(2, max(labels) + 1))
