"""Dataset ingestion: MNIST-style IDX files, CIFAR-10 binary batches and a
deterministic synthetic shapes set.

Every loader returns a :class:`LabeledImageSet` whose images are scaled
to [0, 1] and then standardized per channel. Standardization statistics
come from the training split; pass them back in as ``stats`` when
loading the matching test split.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import ConsistencyError, FormatError, LabelValueError, LengthError

__all__ = [
    "LabeledImageSet",
    "load_idx",
    "load_cifar_bin",
    "synthetic_shapes",
    "channel_stats",
    "data_dir",
    "IDX_IMAGES_MAGIC",
    "IDX_LABELS_MAGIC",
    "CIFAR_RECORD",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32

Stats = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True, eq=False)
class LabeledImageSet:
    """Images ``(n, channels, H, W)`` standardized with ``mean``/``std``."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConsistencyError("images and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelValueError("label outside [0, num_classes)")

    def __len__(self):
        return len(self.labels)

    @property
    def stats(self) -> Stats:
        return self.mean, self.std

    def subset(self, n: int) -> "LabeledImageSet":
        return LabeledImageSet(self.images[:n], self.labels[:n], self.num_classes,
                               self.mean, self.std)

    def to_bytes(self) -> np.ndarray:
        """Undo standardization and scaling; recovers the raw 8-bit pixels."""
        m = self.mean[None, :, None, None]
        s = self.std[None, :, None, None]
        return np.rint((self.images * s + m) * 255.0).astype(np.uint8)


def channel_stats(pixels01: np.ndarray) -> Stats:
    mean = pixels01.mean(axis=(0, 2, 3))
    std = pixels01.std(axis=(0, 2, 3))
    return mean, np.where(std > 0, std, 1.0)


def _standardize(raw: np.ndarray, labels: np.ndarray, num_classes: int,
                 stats: Optional[Stats]) -> LabeledImageSet:
    pixels = raw.astype(np.float64) / 255.0
    mean, std = channel_stats(pixels) if stats is None else (np.asarray(s, float) for s in stats)
    images = (pixels - mean[None, :, None, None]) / std[None, :, None, None]
    return LabeledImageSet(images, labels.astype(np.int64), num_classes, mean, std)


def _read_idx(path, magic: int):
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise LengthError(f"{path}: file too short for an IDX header")
    found, count = struct.unpack(">II", blob[:8])
    if found != magic:
        raise FormatError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise LengthError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    expected = int(np.prod(dims))
    payload = len(blob) - header
    if payload != expected:
        raise LengthError(f"{path}: payload has {payload} bytes, header declares {expected}")
    return np.frombuffer(blob, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(image_path, label_path, stats: Optional[Stats] = None,
             num_classes: int = 10, limit: Optional[int] = None) -> LabeledImageSet:
    """Load an MNIST-style pair of IDX files (big-endian, unsigned bytes)."""
    images = _read_idx(image_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(label_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise ConsistencyError(
            f"{len(images)} images but {len(labels)} labels")
    if len(labels) and labels.max() >= num_classes:
        raise LabelValueError(f"label {labels.max()} >= {num_classes}")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return _standardize(images[:, None], labels, num_classes, stats)


def load_cifar_bin(path, stats: Optional[Stats] = None,
                   limit: Optional[int] = None) -> LabeledImageSet:
    """Load a CIFAR-10 binary batch: 1 label byte + 3x32x32 channel-major pixels per record."""
    blob = Path(path).read_bytes()
    if len(blob) == 0 or len(blob) % CIFAR_RECORD:
        raise FormatError(f"{path}: size {len(blob)} is not a multiple of {CIFAR_RECORD}")
    records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0]
    if labels.max() > 9:
        raise LabelValueError(f"{path}: label {labels.max()} outside [0, 9]")
    if limit is not None:
        records, labels = records[:limit], labels[:limit]
    images = records[:, 1:].reshape(-1, 3, 32, 32)
    return _standardize(images, labels, 10, stats)


def synthetic_shapes(n: int, seed=0, size: int = 12, noise: float = 0.02,
                     stats: Optional[Stats] = None) -> LabeledImageSet:
    """Two-class set of soft-edged bars (class 0) and discs (class 1).

    Classes alternate (sample ``i`` has label ``i % 2``). Bars have a
    Gaussian cross-profile (sigma 0.8 px) and length 5-8, discs a logistic
    edge and radius 2.6-3.4. Total brightness alone separates the classes,
    so the set is linearly separable. The soft edges give the images the
    compact spectra of natural photographs. Gaussian pixel noise is
    clipped to [0, 1] and the result quantized to bytes.
    """
    if n < 2:
        raise ValueError("need at least two samples")
    rng = np.random.default_rng(seed)
    rr, cc = np.mgrid[0:size, 0:size].astype(np.float64)
    raw = np.zeros((n, 1, size, size), dtype=np.uint8)
    labels = np.arange(n) % 2
    for i in range(n):
        if labels[i] == 0:
            length = rng.uniform(5.0, 8.0)
            start = rng.uniform(1.0, size - 1.0 - length)
            across = rng.uniform(2.0, size - 3.0)
            along, perp = (cc, rr) if rng.random() < 0.5 else (rr, cc)
            ends = _logistic(along - start, 0.5) * _logistic(start + length - along, 0.5)
            img = np.exp(-0.5 * ((perp - across) / 0.8) ** 2) * ends
        else:
            radius = rng.uniform(2.6, 3.4)
            cy, cx = rng.uniform(radius, size - 1 - radius, size=2)
            dist = np.hypot(rr - cy, cc - cx)
            img = _logistic(radius - dist, 0.6)
        img = np.clip(img + noise * rng.standard_normal((size, size)), 0.0, 1.0)
        raw[i, 0] = np.rint(img * 255.0).astype(np.uint8)
    return _standardize(raw, labels, 2, stats)


def _logistic(t, width):
    return 1.0 / (1.0 + np.exp(-t / width))


def data_dir(explicit=None) -> Optional[Path]:
    """Dataset root from the argument or the SPECNET_DATA_DIR variable."""
    root = explicit or os.environ.get("SPECNET_DATA_DIR")
    return Path(root) if root else None
