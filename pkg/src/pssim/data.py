"""Dataset loading (IDX files), sharding, and a synthetic fallback.

IDX files are big-endian: a u32 magic (0x803 for image tensors, 0x801 for
label vectors), one u32 per dimension, then raw bytes.  Gzipped files are
detected by magic bytes and decompressed transparently.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IngestionError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


@dataclass
class Dataset:
    """Train/test splits; pixel data is float32 scaled to [0, 1]."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int

    def __post_init__(self):
        for name, x, y in (
            ("train", self.train_x, self.train_y),
            ("test", self.test_x, self.test_y),
        ):
            if len(x) != len(y):
                raise IngestionError(
                    f"{name} split: {len(x)} examples but {len(y)} labels"
                )
            if len(y) and y.max() >= self.num_classes:
                raise IngestionError(f"{name} split: label {y.max()} out of range")


def _read_file(path: str | Path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _header(buf: bytes, path, expected_magic: int, dims: int) -> tuple[int, ...]:
    size = 4 * (1 + dims)
    if len(buf) < size:
        raise IngestionError(f"{path}: truncated header at offset {len(buf)}")
    fields = struct.unpack(f">{1 + dims}I", buf[:size])
    if fields[0] != expected_magic:
        raise IngestionError(
            f"{path}: bad magic 0x{fields[0]:08x} at offset 0, "
            f"expected 0x{expected_magic:08x}"
        )
    return fields[1:]


def load_idx(images_path: str | Path, labels_path: str | Path):
    """Parse one images/labels IDX pair into (float32 images in [0, 1],
    int64 labels)."""
    img_buf = _read_file(images_path)
    count, rows, cols = _header(img_buf, images_path, IMAGES_MAGIC, 3)
    expected = 16 + count * rows * cols
    if len(img_buf) != expected:
        raise IngestionError(
            f"{images_path}: expected {expected} bytes, got {len(img_buf)} "
            f"(truncated at offset {len(img_buf)})"
        )
    images = np.frombuffer(img_buf, dtype=np.uint8, offset=16).reshape(
        count, rows, cols
    )

    lab_buf = _read_file(labels_path)
    (lab_count,) = _header(lab_buf, labels_path, LABELS_MAGIC, 1)
    if len(lab_buf) != 8 + lab_count:
        raise IngestionError(
            f"{labels_path}: expected {8 + lab_count} bytes, got {len(lab_buf)}"
        )
    if lab_count != count:
        raise IngestionError(
            f"label count {lab_count} does not match image count {count}"
        )
    labels = np.frombuffer(lab_buf, dtype=np.uint8, offset=8).astype(np.int64)
    return images.astype(np.float32) / 255.0, labels


def _find(data_dir: Path, stem: str) -> Path:
    for candidate in (data_dir / stem, data_dir / (stem + ".gz")):
        if candidate.exists():
            return candidate
    raise IngestionError(f"missing dataset file {stem}[.gz] under {data_dir}")


def load_mnist(data_dir: str | Path) -> Dataset:
    """Load the four standard IDX files (optionally gzipped) from a directory."""
    data_dir = Path(data_dir)
    train_x, train_y = load_idx(_find(data_dir, TRAIN_IMAGES), _find(data_dir, TRAIN_LABELS))
    test_x, test_y = load_idx(_find(data_dir, TEST_IMAGES), _find(data_dir, TEST_LABELS))
    return Dataset(train_x, train_y, test_x, test_y, num_classes=10)


def shard_indices(
    count: int, n: int, fraction: float, rng: np.random.Generator
) -> list[np.ndarray]:
    """Shuffle, keep floor(fraction * count) examples, and split them into n
    disjoint near-equal shards (sizes within one of each other)."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"shard fraction {fraction} not in (0, 1]")
    kept = int(fraction * count + 1e-9)
    if kept < n:
        raise ConfigurationError(
            f"cannot shard {kept} examples across {n} workers: a shard would be empty"
        )
    perm = rng.permutation(count)[:kept]
    return np.array_split(perm, n)


def synthetic_dataset(
    train_count: int,
    test_count: int,
    dims: int,
    classes: int,
    rng: np.random.Generator,
) -> Dataset:
    """Gaussian class blobs around fixed per-class means, unit noise; linearly
    separable with a wide margin.  Train and test are disjoint draws."""
    means = rng.normal(0.0, 1.0, size=(classes, dims))

    def split(count: int):
        labels = np.tile(np.arange(classes), count // classes + 1)[:count]
        labels = labels[rng.permutation(count)]
        x = means[labels] + rng.normal(0.0, 1.0, size=(count, dims))
        return x.astype(np.float32), labels.astype(np.int64)

    train_x, train_y = split(train_count)
    test_x, test_y = split(test_count)
    return Dataset(train_x, train_y, test_x, test_y, num_classes=classes)
