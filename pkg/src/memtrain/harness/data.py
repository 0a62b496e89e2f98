"""MNIST (IDX) and CIFAR-10 (binary batch) readers."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
DATA_ENV = "MEMTRAIN_DATA"


class DataError(ValueError):
    pass


class FormatError(DataError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # N x C x H x W, uint8
    labels: np.ndarray  # N, int64
    num_classes: int = 10

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be N x C x H x W, got shape {self.images.shape}")
        if self.images.dtype != np.uint8:
            raise DataError(f"images must be uint8 pixels, got {self.images.dtype}")
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int | None) -> "Dataset":
        if n is None or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n], self.num_classes)

    def take(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.num_classes)

    def floats(self, idx=None) -> np.ndarray:
        """Pixels scaled to [0, 1] as float32."""
        imgs = self.images if idx is None else self.images[idx]
        return imgs.astype(np.float32) / np.float32(255.0)


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror or e}") from None


def _idx_header(data: bytes, path, magic: int, ndim: int) -> tuple[int, ...]:
    need = 4 + 4 * ndim
    if len(data) < need:
        raise FormatError(f"{path}: header needs {need} bytes, file has {len(data)}")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise FormatError(f"{path}: bad magic at byte 0: expected 0x{magic:08x}, found 0x{found:08x}")
    return struct.unpack(f">{ndim}I", data[4:need])


def load_mnist(images_path, labels_path) -> Dataset:
    img = _read(images_path)
    n, h, w = _idx_header(img, images_path, IMAGE_MAGIC, 3)
    if (h, w) != (28, 28):
        raise FormatError(f"{images_path}: image dims at byte 8 are {h}x{w}, expected 28x28")
    expected = 16 + n * h * w
    if len(img) != expected:
        raise FormatError(f"{images_path}: expected {expected} bytes for {n} images, available {len(img)}")
    lab = _read(labels_path)
    (m,) = _idx_header(lab, labels_path, LABEL_MAGIC, 1)
    if m != n:
        raise FormatError(f"{labels_path}: label count {m} at byte 4 does not match {n} images")
    if len(lab) != 8 + m:
        raise FormatError(f"{labels_path}: expected {8 + m} bytes for {m} labels, available {len(lab)}")
    labels = np.frombuffer(lab, dtype=np.uint8, offset=8)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise FormatError(f"{labels_path}: label {labels[bad]} at byte {8 + bad} is outside [0, 9]")
    images = np.frombuffer(img, dtype=np.uint8, offset=16).reshape(n, 1, h, w)
    return Dataset(images.copy(), labels.astype(np.int64))


def load_cifar10(batch_paths) -> Dataset:
    if isinstance(batch_paths, (str, os.PathLike)):
        batch_paths = [batch_paths]
    images, labels = [], []
    for path in batch_paths:
        data = _read(path)
        if len(data) == 0 or len(data) % CIFAR_RECORD:
            raise FormatError(
                f"{path}: length {len(data)} is not a positive multiple of the {CIFAR_RECORD}-byte record")
        rec = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        lab = rec[:, 0]
        if lab.max() > 9:
            bad = int(np.argmax(lab > 9))
            raise FormatError(f"{path}: label {lab[bad]} at byte {bad * CIFAR_RECORD} is outside [0, 9]")
        labels.append(lab.astype(np.int64))
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    if not images:
        raise DataError("no CIFAR-10 batch files given")
    return Dataset(np.concatenate(images), np.concatenate(labels))


def encode_cifar10(ds: Dataset) -> bytes:
    """Inverse of :func:`load_cifar10` for one batch."""
    if ds.images.shape[1:] != (3, 32, 32):
        raise DataError("CIFAR records hold 3 x 32 x 32 images")
    rec = np.empty((len(ds), CIFAR_RECORD), dtype=np.uint8)
    rec[:, 0] = ds.labels
    rec[:, 1:] = ds.images.reshape(len(ds), -1)
    return rec.tobytes()


def data_root(explicit=None) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get(DATA_ENV)
    if env:
        return Path(env)
    return Path("data")


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}


def _find(root: Path, sub: str, names) -> list[Path]:
    for base in (root / sub, root):
        paths = [base / n for n in names]
        if all(p.exists() for p in paths):
            return paths
    raise DataError(f"dataset files {list(names)} not found under {root / sub} or {root}")


def mnist_split(split: str, root=None) -> Dataset:
    return load_mnist(*_find(data_root(root), "mnist", MNIST_FILES[split]))


def cifar10_split(split: str, root=None) -> Dataset:
    root = data_root(root)
    for sub in ("cifar10", "cifar-10-batches-bin"):
        try:
            return load_cifar10(_find(root, sub, CIFAR_FILES[split]))
        except DataError:
            continue
    raise DataError(f"CIFAR-10 {split} batches not found under {root}")


def load_split(dataset: str, split: str, root=None) -> Dataset:
    if dataset == "mnist":
        return mnist_split(split, root)
    if dataset == "cifar10":
        return cifar10_split(split, root)
    raise DataError(f"unknown dataset {dataset!r}")


def synthetic_cifar10(n: int, seed: int = 0, split: int = 0) -> Dataset:
    """Learnable stand-in with the CIFAR-10 layout: a smooth per-class template plus noise.

    Splits of the same ``seed`` share templates and draw independent samples.
    """
    coarse = np.random.default_rng(np.random.SeedSequence([seed, 0xC1FA])).uniform(0, 255, size=(10, 3, 4, 4))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC1FA, split + 1]))
    templates = coarse.repeat(8, axis=2).repeat(8, axis=3)
    labels = rng.integers(0, 10, size=n)
    imgs = templates[labels] + rng.normal(0, 48, size=(n, 3, 32, 32))
    return Dataset(np.clip(np.rint(imgs), 0, 255).astype(np.uint8), labels)
