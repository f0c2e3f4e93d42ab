"""Datasets: MNIST IDX files, synthetic Gaussian blobs, normalisation."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import PURPOSE_DATA, NoiseStream

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"

#: Environment variable naming the directory that holds the MNIST files.
DATA_DIR_ENV = "SPECTRAL_DP_DATA"

MNIST_MEAN = 0.1307
MNIST_STD = 0.3081


class IdxParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Dataset:
    """Immutable image/label collection.

    ``images`` is ``N x H x W`` float64; ``labels`` is ``N`` ints in
    ``[0, classes)``.
    """

    images: np.ndarray
    labels: np.ndarray
    classes: int
    transform: tuple = field(default=(0.0, 1.0))  # (mean, std) applied so far

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 3:
            raise ValueError(f"images must be N x H x W, got {images.shape}")
        if images.shape[0] != labels.shape[0]:
            raise ValueError(f"{images.shape[0]} images but {labels.shape[0]} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.classes):
            raise ValueError(f"labels must lie in [0, {self.classes})")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.images[idx], self.labels[idx], self.classes, self.transform)

    def head(self, n: int) -> "Dataset":
        return self.subset(np.arange(min(n, len(self))))


def _maybe_gunzip(data: bytes) -> bytes:
    if data[:2] == GZIP_MAGIC:
        return gzip.decompress(data)
    return data


def _header(data: bytes, magic: int, ndims: int):
    need = 4 * (1 + ndims)
    if len(data) < need:
        raise IdxParseError(f"truncated header: need {need} bytes, have {len(data)}", len(data))
    fields = struct.unpack(f">{1 + ndims}I", data[:need])
    if fields[0] != magic:
        raise IdxParseError(f"bad magic number {fields[0]} (expected {magic})", 0)
    return fields[1:], need


def load_idx_images(data: bytes) -> np.ndarray:
    """Parse an IDX3 image stream into ``count x rows x cols`` floats in [0, 1]."""
    data = _maybe_gunzip(bytes(data))
    (count, rows, cols), off = _header(data, IMAGE_MAGIC, 3)
    n = count * rows * cols
    if len(data) - off < n:
        raise IdxParseError(f"truncated pixel data: expected {n} bytes, found {len(data) - off}", len(data))
    if len(data) - off > n:
        raise IdxParseError(f"dimension mismatch: {len(data) - off - n} trailing bytes", off + n)
    pixels = np.frombuffer(data, dtype=np.uint8, count=n, offset=off)
    return pixels.reshape(count, rows, cols) / 255.0


def load_idx_labels(data: bytes) -> np.ndarray:
    """Parse an IDX1 label stream."""
    data = _maybe_gunzip(bytes(data))
    (count,), off = _header(data, LABEL_MAGIC, 1)
    if len(data) - off < count:
        raise IdxParseError(f"truncated labels: expected {count} bytes, found {len(data) - off}", len(data))
    if len(data) - off > count:
        raise IdxParseError(f"dimension mismatch: {len(data) - off - count} trailing bytes", off + count)
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=off).astype(np.int64)


def dump_idx_images(images) -> bytes:
    """Serialise images in [0, 1] as an IDX3 stream (pixels rounded to bytes)."""
    images = np.asarray(images)
    count, rows, cols = images.shape
    pixels = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    return struct.pack(">4I", IMAGE_MAGIC, count, rows, cols) + pixels.tobytes()


def dump_idx_labels(labels) -> bytes:
    labels = np.asarray(labels)
    return struct.pack(">2I", LABEL_MAGIC, labels.shape[0]) + labels.astype(np.uint8).tobytes()


_MNIST_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, Path.home() / ".cache" / "spectral_dp" / "mnist"))


def _find(directory: Path, stem: str) -> Path:
    # both the dash and the dot spelling of the canonical names are in circulation
    alt = stem.replace("-idx", ".idx")
    for name in (stem, alt):
        for suffix in ("", ".gz"):
            p = directory / (name + suffix)
            if p.exists():
                return p
    raise FileNotFoundError(f"no {stem}[.gz] (or {alt}) in {directory}")


def load_mnist(directory=None, split: str = "train") -> Dataset:
    """Load an MNIST split from ``directory`` (default: ``$SPECTRAL_DP_DATA``)."""
    directory = Path(directory) if directory is not None else default_data_dir()
    img_name, lbl_name = _MNIST_NAMES[split]
    images = load_idx_images(_find(directory, img_name).read_bytes())
    labels = load_idx_labels(_find(directory, lbl_name).read_bytes())
    return Dataset(images, labels, 10)


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 2
    samples_per_class: int = 250
    dim: int = 16
    separation: float = 6.0
    seed: int = 0

    def __post_init__(self):
        if self.classes < 1 or self.samples_per_class < 1 or self.dim < 1:
            raise ValueError("classes, samples_per_class and dim must be positive")


def make_blobs(spec: SyntheticSpec) -> Dataset:
    """Isotropic unit-variance Gaussian clusters.

    Class centres are mutually orthogonal random directions scaled so that
    every pair of centres is exactly ``separation`` apart (this needs
    ``dim >= classes``).  Samples are shuffled; images have shape ``1 x dim``.
    """
    if spec.dim < spec.classes:
        raise ValueError(f"dim={spec.dim} cannot hold {spec.classes} orthogonal centres")
    stream = NoiseStream(spec.seed).child(PURPOSE_DATA)
    g = stream.generator()
    basis, _ = np.linalg.qr(g.standard_normal((spec.dim, spec.classes)))
    centres = basis.T * (spec.separation / np.sqrt(2.0))
    labels = np.repeat(np.arange(spec.classes), spec.samples_per_class)
    x = centres[labels] + g.standard_normal((labels.size, spec.dim))
    order = g.permutation(labels.size)
    return Dataset(x[order][:, None, :], labels[order], spec.classes)


def train_test_split(ds: Dataset, test_fraction: float = 0.25):
    n_test = int(round(len(ds) * test_fraction))
    return ds.subset(np.arange(n_test, len(ds))), ds.subset(np.arange(n_test))


def normalize(ds: Dataset, mean: float, std: float) -> Dataset:
    """``(x - mean) / std``; the applied transform is remembered for :func:`denormalize`."""
    if not std > 0:
        raise ValueError("std must be > 0")
    m0, s0 = ds.transform
    return Dataset((ds.images - mean) / std, ds.labels, ds.classes, (m0 + mean * s0, s0 * std))


def denormalize(ds: Dataset) -> Dataset:
    mean, std = ds.transform
    return Dataset(ds.images * std + mean, ds.labels, ds.classes, (0.0, 1.0))
