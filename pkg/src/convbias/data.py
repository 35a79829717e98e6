"""MNIST (IDX) and CIFAR binary loaders, batching and augmentation.

Images are kept as uint8 ``[N, C, H, W]``. Per-channel mean and standard
deviation (on the [0, 1] scale) come from the training split and travel with
every split derived from it.
"""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.dtype != np.uint8:
            raise ValueError("images must be uint8 [N, C, H, W]")
        if len(self.labels) != len(self.images):
            raise ValueError("image and label counts differ")
        if len(self.labels) and int(self.labels.max()) >= self.num_classes:
            raise ValueError("label out of range")

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def subset(self, indices):
        indices = np.asarray(indices)
        return replace(self, images=self.images[indices], labels=self.labels[indices])


def channel_stats(images):
    """Per-channel mean/std of ``images / 255``.

    Integer accumulation keeps the result independent of pixel order.
    """
    imgs = images.astype(np.int64)
    count = imgs.shape[0] * imgs.shape[2] * imgs.shape[3]
    s1 = imgs.sum(axis=(0, 2, 3))
    s2 = (imgs * imgs).sum(axis=(0, 2, 3))
    mean = s1 / count
    var = s2 / count - mean * mean
    return mean / 255.0, np.sqrt(np.maximum(var, 0.0)) / 255.0


def make_dataset(images, labels, num_classes, stats_from=None):
    images = np.ascontiguousarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.int64)
    if stats_from is None:
        mean, std = channel_stats(images)
    else:
        mean, std = stats_from.mean, stats_from.std
    return Dataset(images, labels, num_classes, mean, std)


# ---------------------------------------------------------------------------
# IDX (MNIST)
# ---------------------------------------------------------------------------

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_bytes(path):
    path = Path(path)
    if not path.exists() and Path(str(path) + ".gz").exists():
        path = Path(str(path) + ".gz")
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read(), path
    return path.read_bytes(), path


def read_idx(path, expected_magic):
    raw, path = _read_bytes(path)
    if len(raw) < 4:
        raise DataFormatError(f"{path}: file too short for an IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) != header + size:
        raise DataFormatError(
            f"{path}: expected {header + size} bytes for dims {dims}, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _load_idx_pair(directory, image_name, label_name):
    images = read_idx(Path(directory) / image_name, IDX_IMAGES_MAGIC)
    labels = read_idx(Path(directory) / label_name, IDX_LABELS_MAGIC)
    if images.ndim != 3:
        raise DataFormatError(f"{image_name}: expected 3 dims, got {images.ndim}")
    if labels.ndim != 1 or len(labels) != len(images):
        raise DataFormatError(
            f"{label_name}: {len(labels)} labels for {len(images)} images")
    if len(labels) and labels.max() > 9:
        raise DataFormatError(f"{label_name}: label {labels.max()} out of range")
    return images[:, None, :, :], labels


def load_mnist(directory):
    """Return ``(train, test)`` from the four standard IDX files (optionally gzipped)."""
    tr_x, tr_y = _load_idx_pair(directory, *MNIST_FILES["train"])
    te_x, te_y = _load_idx_pair(directory, *MNIST_FILES["test"])
    train = make_dataset(tr_x, tr_y, 10)
    return train, make_dataset(te_x, te_y, 10, stats_from=train)


# ---------------------------------------------------------------------------
# CIFAR binary batches
# ---------------------------------------------------------------------------

CIFAR_PIXELS = 3 * 32 * 32
CIFAR10_TRAIN = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR10_TEST = ["test_batch.bin"]


def read_cifar_batch(path, label_bytes=1, num_classes=10):
    """Parse one binary batch file into ``(images [N,3,32,32], labels)``.

    CIFAR-100 records carry two label bytes (coarse, fine); the fine label is
    used.
    """
    raw = Path(path).read_bytes()
    record = label_bytes + CIFAR_PIXELS
    complete = len(raw) // record
    if len(raw) % record:
        raise DataFormatError(
            f"{path}: truncated record at byte offset {complete * record} "
            f"(file size {len(raw)} is not a multiple of {record})")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(complete, record)
    labels = arr[:, label_bytes - 1].astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        i = int(bad[0])
        raise DataFormatError(
            f"{path}: label {labels[i]} >= {num_classes} at byte offset "
            f"{i * record + label_bytes - 1}")
    images = arr[:, label_bytes:].reshape(complete, 3, 32, 32)
    return images, labels


def write_cifar_batch(path, images, labels, coarse_labels=None):
    images = np.ascontiguousarray(images, dtype=np.uint8).reshape(len(images), -1)
    if images.shape[1] != CIFAR_PIXELS:
        raise ValueError("CIFAR images must be 3x32x32")
    cols = [np.asarray(labels, dtype=np.uint8)[:, None]]
    if coarse_labels is not None:
        cols.insert(0, np.asarray(coarse_labels, dtype=np.uint8)[:, None])
    Path(path).write_bytes(np.hstack(cols + [images]).tobytes())


def _load_cifar(directory, train_files, test_files, label_bytes, num_classes):
    def read_all(files):
        parts = [read_cifar_batch(Path(directory) / f, label_bytes, num_classes)
                 for f in files]
        return (np.concatenate([p[0] for p in parts]),
                np.concatenate([p[1] for p in parts]))

    tr_x, tr_y = read_all(train_files)
    te_x, te_y = read_all(test_files)
    train = make_dataset(tr_x, tr_y, num_classes)
    return train, make_dataset(te_x, te_y, num_classes, stats_from=train)


def load_cifar10(directory):
    return _load_cifar(directory, CIFAR10_TRAIN, CIFAR10_TEST, 1, 10)


def load_cifar100(directory):
    return _load_cifar(directory, ["train.bin"], ["test.bin"], 2, 100)


LOADERS = {"mnist": load_mnist, "cifar10": load_cifar10, "cifar100": load_cifar100}


def load(name, directory):
    try:
        loader = LOADERS[name]
    except KeyError:
        raise ValueError(f"unknown dataset {name!r}; choose from {sorted(LOADERS)}") from None
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"dataset directory {directory} does not exist")
    return loader(directory)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    pad: int = 4
    hflip: bool = True
    enabled: bool = False


def normalize(images, mean, std, dtype=np.float32):
    """``(images / 255 - mean) / std`` per channel, computed in ``dtype``."""
    dtype = np.dtype(dtype)
    x = images.astype(dtype) / dtype.type(255.0)
    m = np.asarray(mean, dtype=dtype).reshape(1, -1, 1, 1)
    s = np.asarray(std, dtype=dtype).reshape(1, -1, 1, 1)
    return (x - m) / s


def _augment(images, cfg: AugmentConfig, rng):
    N, C, H, W = images.shape
    if cfg.pad >= H:
        raise ValueError("crop padding must be smaller than the image")
    out = images
    if cfg.pad:
        p = cfg.pad
        padded = np.pad(images, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")
        dy = rng.integers(0, 2 * p + 1, size=N)
        dx = rng.integers(0, 2 * p + 1, size=N)
        out = np.empty_like(images)
        for n in range(N):
            out[n] = padded[n, :, dy[n]:dy[n] + H, dx[n]:dx[n] + W]
    if cfg.hflip:
        flip = rng.random(N) < 0.5
        out = out.copy() if out is images else out
        out[flip] = out[flip][..., ::-1]
    return out


def make_batch(dataset: Dataset, indices, augment: AugmentConfig | None = None,
               seed=0, dtype=np.float32):
    """Standardized float batch for ``indices``; augmentation is seeded."""
    images = dataset.images[np.asarray(indices)]
    if augment is not None and augment.enabled:
        images = _augment(images, augment, np.random.default_rng(seed))
    return normalize(images, dataset.mean, dataset.std, dtype)


def split_train_val(dataset: Dataset, val_fraction, seed=0):
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    n = len(dataset)
    n_val = int(round(n * val_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return dataset.subset(train_idx), dataset.subset(val_idx)
