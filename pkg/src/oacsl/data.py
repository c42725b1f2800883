"""Datasets: the CIFAR-10 binary batches and a synthetic complex blob task."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .clinalg import DTYPE

__all__ = [
    "Dataset",
    "BlobConfig",
    "CifarFormatError",
    "RECORD_BYTES",
    "parse_cifar_records",
    "load_cifar10",
    "write_cifar_records",
    "synth_blobs",
    "to_complex",
    "batches",
]

RECORD_BYTES = 1 + 3 * 32 * 32
TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
TEST_FILE = "test_batch.bin"


@dataclass
class Dataset:
    samples: np.ndarray  # complex, N x feature_shape
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        if len(self.samples) != len(self.labels):
            raise ValueError(f"{len(self.samples)} samples but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("labels out of range")

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return tuple(self.samples.shape[1:])

    def __len__(self) -> int:
        return len(self.labels)


class CifarFormatError(ValueError):
    pass


def parse_cifar_records(raw: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Parse concatenated 3073-byte records into ``(uint8 N x 3 x 32 x 32, labels)``."""
    n, rem = divmod(len(raw), RECORD_BYTES)
    if rem:
        raise CifarFormatError(
            f"truncated record at byte offset {n * RECORD_BYTES} ({rem} trailing bytes)"
        )
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(n, RECORD_BYTES)
    labels = arr[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        i = int(bad[0])
        raise CifarFormatError(f"record {i}: label byte {labels[i]} is not a class in 0..9")
    images = arr[:, 1:].reshape(n, 3, 32, 32).copy()
    return images, labels


def _read_files(paths: list[Path]) -> tuple[np.ndarray, np.ndarray]:
    parts = []
    for p in paths:
        try:
            parts.append(parse_cifar_records(p.read_bytes()))
        except CifarFormatError as e:
            raise CifarFormatError(f"{p.name}: {e}") from None
    images = np.concatenate([im for im, _ in parts])
    labels = np.concatenate([lb for _, lb in parts])
    return images, labels


def load_cifar10(path) -> tuple[Dataset, Dataset]:
    """Load ``data_batch_1..5.bin`` and ``test_batch.bin`` from ``path``.

    Missing training batch files are skipped as long as at least one exists.
    Pixels go to [0, 1] and are standardized per channel with training-set
    statistics.
    """
    root = Path(path)
    train_paths = [root / f for f in TRAIN_FILES if (root / f).exists()]
    if not train_paths:
        raise FileNotFoundError(f"no CIFAR-10 training batches under {root}")
    if not (root / TEST_FILE).exists():
        raise FileNotFoundError(f"missing {TEST_FILE} under {root}")
    tr_x, tr_y = _read_files(train_paths)
    te_x, te_y = _read_files([root / TEST_FILE])
    tr = tr_x.astype(np.float64) / 255.0
    te = te_x.astype(np.float64) / 255.0
    mean = tr.mean(axis=(0, 2, 3), keepdims=True)
    std = tr.std(axis=(0, 2, 3), keepdims=True)
    std[std == 0] = 1.0
    train = Dataset(to_complex((tr - mean) / std), tr_y, 10)
    test = Dataset(to_complex((te - mean) / std), te_y, 10)
    return train, test


def write_cifar_records(path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images], axis=1)
    Path(path).write_bytes(rec.tobytes())


@dataclass(frozen=True)
class BlobConfig:
    class_count: int = 4
    feature_dim: int = 16
    separation: float = 4.0
    variance: float = 1.0
    samples_per_class: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.separation > 0:
            raise ValueError("separation must be positive")
        if not self.variance > 0:
            raise ValueError("variance must be positive")
        if self.class_count < 2 or self.feature_dim < 1 or self.samples_per_class < 1:
            raise ValueError("blob dataset needs >= 2 classes, >= 1 feature, >= 1 sample per class")


def blob_means(config: BlobConfig) -> np.ndarray:
    rng = np.random.default_rng([config.seed, 0])
    g = rng.standard_normal((config.class_count, config.feature_dim, 2))
    means = g[..., 0] + 1j * g[..., 1]
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    return config.separation * means


def synth_blobs(config: BlobConfig) -> tuple[Dataset, Dataset]:
    """Complex Gaussian clusters around random class means, split 80/20.

    Means are uniform on the unit sphere of C^d scaled by ``separation``;
    each sample adds circular noise of total variance ``variance`` per entry.
    """
    means = blob_means(config)
    rng = np.random.default_rng([config.seed, 1])
    n = config.samples_per_class
    labels = np.repeat(np.arange(config.class_count), n)
    noise = rng.standard_normal((labels.size, config.feature_dim, 2)) * np.sqrt(config.variance / 2)
    samples = means[labels] + noise[..., 0] + 1j * noise[..., 1]
    order = rng.permutation(labels.size)
    samples, labels = samples[order].astype(DTYPE), labels[order]
    cut = int(round(0.8 * labels.size))
    return (
        Dataset(samples[:cut], labels[:cut], config.class_count),
        Dataset(samples[cut:], labels[cut:], config.class_count),
    )


def to_complex(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) + 0j


def batches(
    d: Dataset, batch_size: int, shuffle: bool, rng: np.random.Generator | None = None
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(samples, labels)`` batches; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    if len(d) == 0:
        raise ValueError("cannot batch an empty dataset")
    if shuffle:
        if rng is None:
            raise ValueError("shuffling needs a generator")
        order = rng.permutation(len(d))
    else:
        order = np.arange(len(d))
    for start in range(0, len(d), batch_size):
        idx = order[start : start + batch_size]
        yield d.samples[idx], d.labels[idx]
