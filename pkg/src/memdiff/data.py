"""Datasets: synthetic ring, EMNIST IDX ingestion, synthetic glyph fallback.

EMNIST files use the big-endian IDX layout (magic 0x803 for images, 0x801
for labels), optionally gzip-compressed. Images are normalized to [-1, 1],
mean-pooled 28 -> 14 and center-cropped to 12x12. When no EMNIST files are
available, procedurally rasterized H/K/U glyphs stand in with the same
schema.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

# EMNIST-letters labels are 1..26 for a..z (merged case).
EMNIST_LETTER_LABELS = {8: 0, 11: 1, 21: 2}  # H, K, U
CLASS_NAMES = ("H", "K", "U")


class DataError(Exception):
    pass


@dataclass(frozen=True)
class RingSpec:
    radius: float = 1.0
    radial_sigma: float = 0.05
    n: int = 1000

    def __post_init__(self):
        if self.radius <= 0 or self.radial_sigma < 0:
            raise DataError("need radius > 0 and radial_sigma >= 0")


@dataclass
class ImageDataset:
    images: np.ndarray  # (N, 12, 12) in [-1, 1]
    labels: np.ndarray  # (N,) class indices into CLASS_NAMES


def ring_sampler(spec, rng):
    """n points with angle ~ U(0, 2 pi) and radius ~ N(radius, sigma^2)."""
    theta = rng.uniform(0.0, 2.0 * np.pi, spec.n)
    r = rng.normal(spec.radius, spec.radial_sigma, spec.n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(f, count, path):
    data = f.read(count)
    if len(data) != count:
        raise DataError(f"truncated IDX file {path}")
    return data


def load_idx_images(path):
    """Parse a big-endian IDX image file into (N, rows, cols) uint8."""
    if not Path(path).exists():
        raise DataError(
            f"missing IDX image file {path}; expected EMNIST files like "
            "emnist-letters-train-images-idx3-ubyte[.gz] (set "
            "MEMDIFF_DATA_DIR or pass --synthetic)")
    with _open(path) as f:
        magic, count, rows, cols = struct.unpack(">iiii", _read_exact(f, 16, path))
        if magic != IMAGE_MAGIC:
            raise DataError(f"bad image magic 0x{magic:08x} in {path}")
        raw = _read_exact(f, count * rows * cols, path)
    return np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)


def load_idx_labels(path):
    if not Path(path).exists():
        raise DataError(
            f"missing IDX label file {path}; expected EMNIST files like "
            "emnist-letters-train-labels-idx1-ubyte[.gz]")
    with _open(path) as f:
        magic, count = struct.unpack(">ii", _read_exact(f, 8, path))
        if magic != LABEL_MAGIC:
            raise DataError(f"bad label magic 0x{magic:08x} in {path}")
        raw = _read_exact(f, count, path)
    return np.frombuffer(raw, dtype=np.uint8).copy()


def save_idx_images(images, path):
    """Write (N, rows, cols) uint8 back to IDX (round-trip support)."""
    images = np.asarray(images, np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())


def save_idx_labels(labels, path):
    labels = np.asarray(labels, np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", LABEL_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def load_emnist(image_path, label_path):
    """Raw 28x28 images plus labels, with count consistency enforced."""
    images = load_idx_images(image_path)
    labels = load_idx_labels(label_path)
    if images.shape[0] != labels.shape[0]:
        raise DataError(
            f"image/label count mismatch: {images.shape[0]} vs {labels.shape[0]}")
    return images, labels


def preprocess(image):
    """28x28 grayscale 0-255 -> 12x12 in [-1, 1].

    Normalize v/127.5 - 1, 2x2 mean-pool to 14x14, drop the 1-pixel border.
    """
    image = np.asarray(image, float)
    if image.shape != (28, 28):
        raise DataError(f"expected 28x28 input, got {image.shape}")
    v = image / 127.5 - 1.0
    pooled = v.reshape(14, 2, 14, 2).mean(axis=(1, 3))
    return pooled[1:13, 1:13]


def emnist_letter_dataset(image_path, label_path):
    """Filter H/K/U from an EMNIST-letters split and preprocess."""
    raw_images, raw_labels = load_emnist(image_path, label_path)
    keep = np.isin(raw_labels, list(EMNIST_LETTER_LABELS))
    images = np.array([preprocess(im) for im in raw_images[keep]])
    labels = np.array([EMNIST_LETTER_LABELS[l] for l in raw_labels[keep]])
    return ImageDataset(images=images, labels=labels)


def _draw_line(canvas, x0, y0, x1, y1, value):
    n = int(max(abs(x1 - x0), abs(y1 - y0)) * 3) + 1
    for s in np.linspace(0.0, 1.0, n):
        x = x0 + s * (x1 - x0)
        y = y0 + s * (y1 - y0)
        i, j = int(round(y)), int(round(x))
        if 0 <= i < canvas.shape[0] and 0 <= j < canvas.shape[1]:
            canvas[i, j] = value

# Stroke endpoints on a 12x12 grid, (x0, y0, x1, y1).
_GLYPH_STROKES = {
    0: [(2, 1, 2, 10), (9, 1, 9, 10), (2, 5, 9, 5)],               # H
    1: [(2, 1, 2, 10), (9, 1, 2, 6), (2, 6, 9, 10)],               # K
    2: [(2, 1, 2, 8), (9, 1, 9, 8), (2, 8, 4, 10), (4, 10, 7, 10),
        (7, 10, 9, 8)],                                            # U
}


def synthetic_glyphs(per_class, rng, n_classes=3):
    """Procedural 12x12 H/K/U strokes with positional jitter and noise."""
    images = []
    labels = []
    for cls in range(n_classes):
        for _ in range(per_class):
            canvas = -np.ones((12, 12))
            dx = rng.integers(-1, 2)
            dy = rng.integers(-1, 2)
            value = rng.uniform(0.7, 1.0)
            for x0, y0, x1, y1 in _GLYPH_STROKES[cls]:
                _draw_line(canvas, x0 + dx, y0 + dy, x1 + dx, y1 + dy, value)
            canvas += rng.normal(0.0, 0.05, canvas.shape)
            images.append(np.clip(canvas, -1.0, 1.0))
            labels.append(cls)
    return ImageDataset(images=np.array(images), labels=np.array(labels))


def class_means(dataset):
    """Per-class mean image, shape (K, 12, 12)."""
    k = int(dataset.labels.max()) + 1
    return np.array([dataset.images[dataset.labels == c].mean(axis=0)
                     for c in range(k)])


def save_dataset_csv(dataset, path):
    """Cache as CSV: label, 144 pixel columns."""
    flat = dataset.images.reshape(len(dataset.images), -1)
    rows = np.column_stack([dataset.labels, flat])
    header = "label," + ",".join(f"p{i}" for i in range(flat.shape[1]))
    np.savetxt(path, rows, delimiter=",", header=header, comments="")


def load_dataset_csv(path):
    rows = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
    return ImageDataset(images=rows[:, 1:].reshape(-1, 12, 12),
                        labels=rows[:, 0].astype(int))
