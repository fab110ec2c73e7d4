"""Dataset loading: IDX image files, CIFAR-10 binary batches, synthetic blobs.

IDX layout (all integers big-endian):
    images: u32 magic 0x00000803 | u32 count | u32 rows | u32 cols | u8 pixels
    labels: u32 magic 0x00000801 | u32 count | u8 labels
CIFAR-10 binary layout: records of 3073 bytes, one u8 label followed by
3072 pixel bytes in channel-planar order (R, G, B planes of 32x32).

Pixels are scaled to [0, 1] and normalized with the documented per-channel
constants; the applied transform is stored on the Dataset so it can be
inverted. Dataset digests are CRC32 over the raw payload bytes.
"""

from __future__ import annotations

import gzip
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from linpath.errors import DataFormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_MEAN = (0.1307,)
MNIST_STD = (0.3081,)
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)

_CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
_CIFAR_TEST_FILES = ("test_batch.bin",)
_CIFAR_RECORD = 3073


@dataclass
class Dataset:
    """Immutable-by-convention example collection with provenance metadata."""

    inputs: np.ndarray
    labels: np.ndarray
    split: str
    digest: int
    normalization: dict | None = None

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.labels) < 1:
            raise ValueError("a batch needs at least one example")
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels disagree on example count")


def as_batches(ds: Dataset, batch_size: int):
    """Sequential, order-preserving partition into batches."""
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    for start in range(0, len(ds), batch_size):
        yield Batch(ds.inputs[start:start + batch_size], ds.labels[start:start + batch_size])


def _read_file(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":  # transparently accept gzipped files
        raw = gzip.decompress(raw)
    return raw


def _normalize(pixels: np.ndarray, mean, std):
    x = pixels.astype(np.float32) / np.float32(255.0)
    mean = np.asarray(mean, dtype=np.float32)
    std = np.asarray(std, dtype=np.float32)
    return (x - mean) / std, {"scale": 255.0, "mean": mean.tolist(), "std": std.tolist()}


def denormalize(ds: Dataset) -> np.ndarray:
    """Invert the stored normalization, returning raw pixel values."""
    if ds.normalization is None:
        return ds.inputs
    meta = ds.normalization
    mean = np.asarray(meta["mean"], dtype=np.float32)
    std = np.asarray(meta["std"], dtype=np.float32)
    return (ds.inputs * std + mean) * np.float32(meta["scale"])


def load_idx(images_path, labels_path, split: str = "test",
             mean=MNIST_MEAN, std=MNIST_STD) -> Dataset:
    """Load an IDX image/label file pair (MNIST-compatible)."""
    img_raw = _read_file(images_path)
    lbl_raw = _read_file(labels_path)

    if len(img_raw) < 16:
        raise DataFormatError(f"{images_path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", img_raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(
            f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    img_payload = img_raw[16:]
    expected = count * rows * cols
    if len(img_payload) != expected:
        raise DataFormatError(
            f"{images_path}: payload holds {len(img_payload)} bytes, expected {expected}")

    if len(lbl_raw) < 8:
        raise DataFormatError(f"{labels_path}: truncated IDX header")
    lmagic, lcount = struct.unpack(">II", lbl_raw[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise DataFormatError(
            f"{labels_path}: bad magic 0x{lmagic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    lbl_payload = lbl_raw[8:]
    if len(lbl_payload) != lcount:
        raise DataFormatError(
            f"{labels_path}: payload holds {len(lbl_payload)} bytes, expected {lcount}")
    if count != lcount:
        raise DataFormatError(f"image count {count} != label count {lcount}")

    pixels = np.frombuffer(img_payload, dtype=np.uint8).reshape(count, rows, cols, 1)
    labels = np.frombuffer(lbl_payload, dtype=np.uint8).astype(np.int64)
    digest = zlib.crc32(lbl_payload, zlib.crc32(img_payload))
    inputs, norm = _normalize(pixels, mean, std)
    return Dataset(inputs=inputs, labels=labels, split=split, digest=digest,
                   normalization=norm)


def _cifar_paths(source, split):
    p = Path(source)
    if p.is_dir():
        names = _CIFAR_TRAIN_FILES if split == "train" else _CIFAR_TEST_FILES
        return [p / n for n in names]
    return [p]


def load_cifar10(source, split: str = "test", per_class: int | None = None,
                 seed: int = 0, mean=CIFAR10_MEAN, std=CIFAR10_STD) -> Dataset:
    """Load CIFAR-10 binary batches from a directory or explicit file path(s).

    `per_class` keeps a seeded random subsample of that many examples per
    class (file order preserved), for CPU-feasible experiments.
    """
    if isinstance(source, (list, tuple)):
        paths = [Path(s) for s in source]
    else:
        paths = _cifar_paths(source, split)
    records = []
    for path in paths:
        raw = _read_file(path)
        if len(raw) == 0 or len(raw) % _CIFAR_RECORD != 0:
            raise DataFormatError(
                f"{path}: size {len(raw)} is not a multiple of {_CIFAR_RECORD}")
        records.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, _CIFAR_RECORD))
    data = np.concatenate(records)
    labels = data[:, 0].astype(np.int64)
    if labels.max() >= 10:
        raise DataFormatError(f"label byte {labels.max()} out of range for CIFAR-10")

    if per_class is not None:
        rng = np.random.Generator(np.random.PCG64(seed))
        keep = []
        for c in range(10):
            idx = np.flatnonzero(labels == c)
            if len(idx) > per_class:
                idx = idx[rng.permutation(len(idx))[:per_class]]
            keep.append(idx)
        sel = np.sort(np.concatenate(keep))
        data = data[sel]
        labels = labels[sel]

    digest = zlib.crc32(data.tobytes())
    pixels = data[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    inputs, norm = _normalize(pixels, mean, std)
    return Dataset(inputs=inputs, labels=labels, split=split, digest=digest,
                   normalization=norm)


def synthetic_blobs(classes: int, dims: int, per_class: int, separation: float,
                    seed: int, split: str = "train", train_fraction: float = 0.8) -> Dataset:
    """Seeded Gaussian clusters; unit within-class std, class means at the
    given distance from the origin along random unit directions.

    The full pool is generated once from the seed and partitioned by a seeded
    permutation; `split` selects which side of the partition to return, so
    train and test requests with matching arguments are disjoint.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if per_class < 1:
        raise ValueError("need at least 1 example per class")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train fraction must be in (0, 1)")
    rng = np.random.Generator(np.random.PCG64(seed))
    means = rng.standard_normal((classes, dims))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    means *= separation
    inputs = np.repeat(means, per_class, axis=0) + rng.standard_normal(
        (classes * per_class, dims))
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    perm = rng.permutation(len(labels))
    inputs, labels = inputs[perm], labels[perm]
    n_train = int(round(train_fraction * len(labels)))
    sel = slice(0, n_train) if split == "train" else slice(n_train, None)
    inputs, labels = inputs[sel], labels[sel]
    if len(labels) == 0:
        raise ValueError(f"split {split!r} is empty with these sizes")
    digest = zlib.crc32(labels.tobytes(), zlib.crc32(np.ascontiguousarray(inputs).tobytes()))
    return Dataset(inputs=inputs, labels=labels, split=split, digest=digest)
