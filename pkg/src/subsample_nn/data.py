"""Dataset ingestion (IDX files), splitting, and synthetic generators.

The only binary ingestion format is IDX as published for MNIST-family sets:
big-endian, images magic 0x00000803 followed by (count, rows, cols) and raw
unsigned bytes; labels magic 0x00000801 followed by count and label bytes.
Pixel bytes are scaled by 1/255 so features always live in [0, 1].
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError
from .linalg import stream

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Feature matrix in [0,1] with integer class labels."""

    features: np.ndarray  # (n_samples, n_features) float64
    labels: np.ndarray  # (n_samples,) int64
    n_classes: int

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ParameterError("features must be 2-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ParameterError("features/labels length mismatch")
        if self.labels.size and int(self.labels.max()) >= self.n_classes:
            raise ParameterError("label id out of range")
        if self.labels.size and int(self.labels.min()) < 0:
            raise ParameterError("negative label id")

    def __len__(self):
        return self.features.shape[0]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


@dataclass(frozen=True)
class Split:
    train: Dataset
    validation: Dataset
    test: Dataset


def _read_exact(f, n, path, offset):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"{path}: truncated at byte {offset + len(buf)} (wanted {n} more bytes)")
    return buf


def _read_u32(f, path, offset):
    return struct.unpack(">I", _read_exact(f, 4, path, offset))[0]


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair into a Dataset."""
    with open(images_path, "rb") as f:
        magic = _read_u32(f, images_path, 0)
        if magic != IMAGES_MAGIC:
            raise FormatError(f"{images_path}: bad magic 0x{magic:08x} at byte 0")
        count = _read_u32(f, images_path, 4)
        rows = _read_u32(f, images_path, 8)
        cols = _read_u32(f, images_path, 12)
        raw = _read_exact(f, count * rows * cols, images_path, 16)
    pixels = np.frombuffer(raw, dtype=np.uint8)

    with open(labels_path, "rb") as f:
        magic = _read_u32(f, labels_path, 0)
        if magic != LABELS_MAGIC:
            raise FormatError(f"{labels_path}: bad magic 0x{magic:08x} at byte 0")
        label_count = _read_u32(f, labels_path, 4)
        raw = _read_exact(f, label_count, labels_path, 8)
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if label_count != count:
        raise FormatError(
            f"{labels_path}: label count {label_count} at byte 4 does not match image count {count}"
        )

    features = pixels.astype(np.float64).reshape(count, rows * cols) / 255.0
    n_classes = int(labels.max()) + 1 if count else 0
    return Dataset(features, labels, n_classes)


def write_idx(ds: Dataset, images_path, labels_path, rows=28, cols=28):
    """Write a Dataset back to an IDX pair (features are quantized to bytes)."""
    if ds.features.shape[1] != rows * cols:
        raise ParameterError(f"features have {ds.features.shape[1]} columns, expected {rows * cols}")
    pixels = np.clip(np.rint(ds.features * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, len(ds), rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, len(ds)))
        f.write(ds.labels.astype(np.uint8).tobytes())


def split(ds: Dataset, train_n: int, test_n: int, val_n: int, seed: int) -> Split:
    """Deterministic shuffle by seed, then partition into train/test/validation."""
    total = train_n + test_n + val_n
    if min(train_n, test_n, val_n) < 0:
        raise ParameterError("split sizes must be non-negative")
    if total > len(ds):
        raise ParameterError(f"requested {total} samples but dataset has {len(ds)}")
    order = stream(seed, "split").permutation(len(ds))
    train_idx = order[:train_n]
    test_idx = order[train_n : train_n + test_n]
    val_idx = order[train_n + test_n : total]
    return Split(ds.subset(train_idx), ds.subset(val_idx), ds.subset(test_idx))


def synth_blobs(n_samples, n_features, n_classes, separation, seed) -> Dataset:
    """Gaussian class clusters with means `separation` apart, scaled into [0,1]."""
    if min(n_samples, n_features, n_classes) < 1:
        raise ParameterError("counts must be positive")
    if not separation > 0:
        raise ParameterError("separation must be positive")
    rng = stream(seed, "blobs")
    means = np.zeros((n_classes, n_features))
    for c in range(n_classes):
        axis = c % n_features
        means[c, axis] = separation * (1 + c // n_features)
    labels = rng.integers(0, n_classes, size=n_samples)
    features = means[labels] + rng.standard_normal((n_samples, n_features))
    # Affine min-max rescale keeps cluster geometry while restoring the [0,1] range.
    lo, hi = features.min(), features.max()
    if hi > lo:
        features = (features - lo) / (hi - lo)
    else:
        features = np.zeros_like(features)
    return Dataset(features, labels.astype(np.int64), n_classes)


# ---------------------------------------------------------------------------
# Synthetic digits: a deterministic desk-scale stand-in for handwritten-digit
# IDX data. Each class is a seven-segment-style glyph with per-sample jitter
# (translation, stroke intensity, pixel noise, occlusion) so a small MLP can
# learn it well but not trivially.
# ---------------------------------------------------------------------------

# segments: top, top-left, top-right, middle, bottom-left, bottom-right, bottom
_SEGMENTS = {
    0: (1, 1, 1, 0, 1, 1, 1),
    1: (0, 0, 1, 0, 0, 1, 0),
    2: (1, 0, 1, 1, 1, 0, 1),
    3: (1, 0, 1, 1, 0, 1, 1),
    4: (0, 1, 1, 1, 0, 1, 0),
    5: (1, 1, 0, 1, 0, 1, 1),
    6: (1, 1, 0, 1, 1, 1, 1),
    7: (1, 0, 1, 0, 0, 1, 0),
    8: (1, 1, 1, 1, 1, 1, 1),
    9: (1, 1, 1, 1, 0, 1, 1),
}


def _glyph(digit, size=28):
    """Rasterize one 28x28 glyph centered with margin for shifts."""
    img = np.zeros((size, size))
    x0, x1 = 9, 18  # left/right stroke columns
    y0, ym, y1 = 5, 13, 21  # top/middle/bottom stroke rows
    t = 2  # stroke half-thickness
    seg = _SEGMENTS[digit]

    def hbar(y):
        img[y - 1 : y + t, x0 - 1 : x1 + t] = 1.0

    def vbar(x, ya, yb):
        img[ya - 1 : yb + t, x - 1 : x + t] = 1.0

    if seg[0]:
        hbar(y0)
    if seg[1]:
        vbar(x0, y0, ym)
    if seg[2]:
        vbar(x1, y0, ym)
    if seg[3]:
        hbar(ym)
    if seg[4]:
        vbar(x0, ym, y1)
    if seg[5]:
        vbar(x1, ym, y1)
    if seg[6]:
        hbar(y1)
    return img


def synth_digits(n_samples, seed, noise=0.12, max_shift=3, occlusion=0) -> Dataset:
    """Deterministic 10-class 28x28 digit-like dataset in IDX-compatible layout."""
    if n_samples < 1:
        raise ParameterError("n_samples must be positive")
    rng = stream(seed, "digits")
    glyphs = np.stack([_glyph(d) for d in range(10)])
    labels = rng.integers(0, 10, size=n_samples)
    out = np.empty((n_samples, 28 * 28))
    for i, lab in enumerate(labels):
        img = glyphs[lab] * rng.uniform(0.6, 1.0)
        dx, dy = rng.integers(-max_shift, max_shift + 1, size=2)
        img = np.roll(np.roll(img, dy, axis=0), dx, axis=1)
        if occlusion:
            oy, ox = rng.integers(0, 28 - occlusion, size=2)
            img[oy : oy + occlusion, ox : ox + occlusion] = 0.0
        img = img + rng.standard_normal((28, 28)) * noise
        out[i] = np.clip(img, 0.0, 1.0).ravel()
    return Dataset(out, labels.astype(np.int64), 10)


def to_csv(ds: Dataset, path):
    """Debug export: header `label,f0..fN` then one row per sample."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["label"] + [f"f{i}" for i in range(ds.features.shape[1])])
        for lab, row in zip(ds.labels, ds.features):
            writer.writerow([int(lab)] + [repr(v) for v in row])
