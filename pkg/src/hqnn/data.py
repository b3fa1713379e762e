"""MNIST ingestion: IDX parsing, bilinear downscaling and seeded subsets."""
from __future__ import annotations

import enum
import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ConfigurationError, FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"

# Per-class counts of the official MNIST splits (digits 0..9).
MNIST_TRAIN_CLASS_COUNTS = (5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949)
MNIST_TEST_CLASS_COUNTS = (980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009)

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

BILINEAR_CONVENTION = "bilinear;half-pixel centers;clamped;no-antialias"

PathLike = Union[str, os.PathLike]


class Split(enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray  # (N, 1, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    split: Split = Split.TRAIN

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 1:
            raise FormatError(f"images must be N x 1 x H x W, got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise FormatError("pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class SubsetPlan:
    train_count: int
    test_count: int
    seed: int = 0


def _read_bytes(path: PathLike) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == GZIP_MAGIC:
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, ndim: int, path: PathLike) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) >= 4:
        (found,) = struct.unpack_from(">I", raw, 0)
        if found != magic:
            raise FormatError(f"{path}: bad magic 0x{found:08x} at offset 0, expected 0x{magic:08x}")
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header at offset {len(raw)} (need {header} bytes)")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise FormatError(f"{path}: truncated payload, file ends at offset {len(raw)} "
                          f"but {size} bytes are declared from offset {header}")
    if len(raw) - header > size:
        raise FormatError(f"{path}: {len(raw) - header - size} trailing bytes after offset {header + size}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path: PathLike, labels_path: PathLike, split: Split = Split.TRAIN) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to ``byte / 255``."""
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, 3, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, 1, labels_path)
    if len(images) != len(labels):
        raise FormatError(f"{images_path}: {len(images)} images at offset 4 but "
                          f"{labels_path} declares {len(labels)} labels at offset 4")
    pixels = images.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(pixels, labels.astype(np.int64), Split(split))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: PathLike, labels_path: PathLike,
              compress: bool = False) -> None:
    """Write uint8 images (N, H, W) and labels (N,) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    img = struct.pack(">4I", IMAGE_MAGIC, *images.shape) + images.tobytes()
    lab = struct.pack(">2I", LABEL_MAGIC, len(labels)) + labels.tobytes()
    opener = gzip.open if compress else open
    with opener(images_path, "wb") as fh:
        fh.write(img)
    with opener(labels_path, "wb") as fh:
        fh.write(lab)


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (directory / name).exists():
            return directory / name
    raise FileNotFoundError(f"no {stem}[.gz] in {directory}")


def load_mnist(directory: PathLike, split: Union[Split, str] = Split.TRAIN) -> Dataset:
    """Load one official MNIST split from a directory holding the four IDX files."""
    split = Split(split)
    images_name, labels_name = MNIST_FILES[split.value]
    directory = Path(directory)
    return load_idx(_find(directory, images_name), _find(directory, labels_name), split)


def mnist_available(directory: PathLike) -> bool:
    try:
        for split in Split:
            for stem in MNIST_FILES[split.value]:
                _find(Path(directory), stem)
    except FileNotFoundError:
        return False
    return True


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def bilinear_downsample(images: np.ndarray, out_h: int = 14, out_w: int = 14) -> np.ndarray:
    """Resize the last two axes with half-pixel-centered bilinear sampling (no antialias)."""
    images = np.asarray(images, dtype=np.float64)
    in_h, in_w = images.shape[-2:]
    if out_h > in_h or out_w > in_w or out_h < 1 or out_w < 1:
        raise ConfigurationError(f"cannot downsample {in_h}x{in_w} to {out_h}x{out_w}")
    y0, y1, wy = _axis_weights(in_h, out_h)
    x0, x1, wx = _axis_weights(in_w, out_w)
    rows = images[..., y0, :] * (1 - wy)[:, None] + images[..., y1, :] * wy[:, None]
    return rows[..., x0] * (1 - wx) + rows[..., x1] * wx


def downsample_dataset(dataset: Dataset, out_h: int = 14, out_w: int = 14) -> Dataset:
    return Dataset(bilinear_downsample(dataset.images, out_h, out_w), dataset.labels, dataset.split)


def make_subset(dataset: Dataset, plan: SubsetPlan) -> Dataset:
    """Seeded shuffle, then keep the first ``train_count`` / ``test_count`` samples of the split."""
    count = plan.train_count if dataset.split is Split.TRAIN else plan.test_count
    if count < 0 or count > len(dataset):
        raise ConfigurationError(f"requested {count} {dataset.split.value} samples, only {len(dataset)} available")
    stream = 0 if dataset.split is Split.TRAIN else 1
    order = np.random.default_rng([plan.seed, stream]).permutation(len(dataset))[:count]
    return Dataset(dataset.images[order], dataset.labels[order], dataset.split)
