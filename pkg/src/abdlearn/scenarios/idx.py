"""Reader and writer for the IDX binary format used by MNIST."""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    pass


def _read(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def load_idx(path) -> np.ndarray:
    """Images as ``(n, rows, cols)`` floats in [0, 1], or labels as ``(n,)`` ints."""
    data = _read(path)
    if len(data) < 8:
        raise IdxError(f"{path}: file too short for an IDX header ({len(data)} bytes)")
    (magic,) = struct.unpack(">I", data[:4])
    if magic == IMAGES_MAGIC:
        if len(data) < 16:
            raise IdxError(f"{path}: truncated image header")
        n, rows, cols = struct.unpack(">III", data[4:16])
        expected = 16 + n * rows * cols
        if len(data) != expected:
            raise IdxError(f"{path}: expected {expected} bytes for {n} images of {rows}x{cols}, got {len(data)}")
        raw = np.frombuffer(data, dtype=np.uint8, offset=16)
        return raw.reshape(n, rows, cols).astype(np.float32) / 255.0
    if magic == LABELS_MAGIC:
        (n,) = struct.unpack(">I", data[4:8])
        expected = 8 + n
        if len(data) != expected:
            raise IdxError(f"{path}: expected {expected} bytes for {n} labels, got {len(data)}")
        return np.frombuffer(data, dtype=np.uint8, offset=8).astype(np.int64)
    raise IdxError(f"{path}: bad magic number 0x{magic:08x}")


def load_idx_pair(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1:
        raise IdxError("expected an image file and a label file")
    if len(images) != len(labels):
        raise IdxError(f"image/label count mismatch: {len(images)} images, {len(labels)} labels")
    return images, labels


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images)
    n, rows, cols = images.shape
    raw = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8) if images.dtype != np.uint8 else images
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols))
        fh.write(raw.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


class ImageBank:
    """Real images per class, used in place of glyphs when an IDX set is given."""

    def __init__(self, images: np.ndarray, labels: np.ndarray):
        self.by_class = {int(c): images[labels == c].reshape(-1, images.shape[1] * images.shape[2]) for c in np.unique(labels)}
        self.dim = images.shape[1] * images.shape[2]

    def draw(self, cls: int, seed: int) -> np.ndarray:
        pool = self.by_class.get(cls)
        if pool is None or not len(pool):
            raise IdxError(f"no images of class {cls}")
        return pool[np.random.default_rng([int(seed), cls]).integers(len(pool))]
