"""
SpecNet - Dataset Loader
MNIST IDX files, CIFAR-10 binary batches and a seeded synthetic shapes set
"""
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    ConsistencyError, DatasetMissingError, FormatError, LabelValueError, PayloadLengthError, UsageError,
)

logger = logging.getLogger("DatasetLoader")

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CIFAR_SIDE = 32
CIFAR_CHANNELS = 3
CIFAR_RECORD = 1 + CIFAR_CHANNELS * CIFAR_SIDE * CIFAR_SIDE   # 3073

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"

SYNTHETIC_SIDE = 12
DATASETS = ("mnist", "cifar10", "synthetic")

PathLike = Union[str, Path]


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel mean/std of [0,1]-scaled pixels"""
    mean: Tuple[float, ...]
    std: Tuple[float, ...]

    @classmethod
    def from_raw(cls, raw: np.ndarray) -> "NormalizationStats":
        scaled = raw.astype(np.float64) / 255.0
        mean = scaled.mean(axis=(0, 2, 3))
        std = scaled.std(axis=(0, 2, 3))
        std = np.where(std > 0, std, 1.0)
        return cls(tuple(float(m) for m in mean), tuple(float(s) for s in std))

    def apply(self, raw: np.ndarray) -> np.ndarray:
        mean = np.asarray(self.mean)[:, None, None]
        std = np.asarray(self.std)[:, None, None]
        return (raw.astype(np.float64) / 255.0 - mean) / std

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NormalizationStats":
        return cls(tuple(data["mean"]), tuple(data["std"]))


@dataclass(frozen=True)
class LabeledImageSet:
    images: np.ndarray       # (n, channels, rows, cols), standardized
    labels: np.ndarray       # (n,)
    num_classes: int
    stats: NormalizationStats

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ConsistencyError(f"images must be (n, channels, rows, cols), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ConsistencyError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelValueError(f"labels must lie in [0, {self.num_classes - 1}]")
        self.images.setflags(write=False)
        self.labels.setflags(write=False)

    @classmethod
    def from_raw(cls, raw: np.ndarray, labels: np.ndarray, num_classes: int,
                 stats: Optional[NormalizationStats] = None) -> "LabeledImageSet":
        """Scale uint8 pixels to [0,1] and standardize per channel"""
        raw = np.asarray(raw, dtype=np.uint8)
        if stats is None:
            stats = NormalizationStats.from_raw(raw)
        return cls(stats.apply(raw), np.asarray(labels, dtype=np.int64), num_classes, stats)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def sample_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices: Sequence[int]) -> "LabeledImageSet":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledImageSet(self.images[indices].copy(), self.labels[indices].copy(), self.num_classes, self.stats)


def denormalize(image: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Inverse of the affine normalization, back to raw uint8 pixels"""
    mean = np.asarray(stats.mean)[:, None, None]
    std = np.asarray(stats.std)[:, None, None]
    return np.rint((np.asarray(image) * std + mean) * 255.0).astype(np.uint8)


# ============== IDX (MNIST) ==============

def _read(path: Path) -> bytes:
    if not path.is_file():
        raise DatasetMissingError(f"dataset file not found: {path}")
    return path.read_bytes()


def parse_idx_images(payload: bytes) -> np.ndarray:
    if len(payload) < 16:
        raise FormatError(f"IDX image header needs 16 bytes, got {len(payload)}")
    magic, count, rows, cols = struct.unpack_from(">IIII", payload)
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"bad IDX image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    expected = 16 + count * rows * cols
    if len(payload) != expected:
        raise PayloadLengthError(f"IDX image payload is {len(payload)} bytes, header promises {expected}")
    return np.frombuffer(payload, dtype=np.uint8, offset=16).reshape(count, 1, rows, cols)


def parse_idx_labels(payload: bytes) -> np.ndarray:
    if len(payload) < 8:
        raise FormatError(f"IDX label header needs 8 bytes, got {len(payload)}")
    magic, count = struct.unpack_from(">II", payload)
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"bad IDX label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(payload) != 8 + count:
        raise PayloadLengthError(f"IDX label payload is {len(payload)} bytes, header promises {8 + count}")
    labels = np.frombuffer(payload, dtype=np.uint8, offset=8).astype(np.int64)
    if count and labels.max() > 9:
        raise LabelValueError(f"IDX label {int(labels.max())} outside [0, 9]")
    return labels


def _load_idx_raw(image_path: PathLike, label_path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    images = parse_idx_images(_read(Path(image_path)))
    labels = parse_idx_labels(_read(Path(label_path)))
    if len(images) != len(labels):
        raise ConsistencyError(f"{image_path} holds {len(images)} images but {label_path} holds {len(labels)} labels")
    return images, labels


def load_idx(image_path: PathLike, label_path: PathLike,
             stats: Optional[NormalizationStats] = None) -> LabeledImageSet:
    images, labels = _load_idx_raw(image_path, label_path)
    logger.info(f"Loaded {len(labels)} IDX samples of {images.shape[2]}x{images.shape[3]} from {image_path}")
    return LabeledImageSet.from_raw(images, labels, 10, stats)


# ============== CIFAR-10 binary ==============

def _load_cifar_raw(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    payload = _read(Path(path))
    if not payload or len(payload) % CIFAR_RECORD:
        raise FormatError(f"{path}: {len(payload)} bytes is not a whole number of {CIFAR_RECORD}-byte records")
    records = np.frombuffer(payload, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise LabelValueError(f"{path}: record {bad} has label {int(labels[bad])}, expected 0-9")
    images = records[:, 1:].reshape(-1, CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE)
    return images, labels


def load_cifar_bin(path: PathLike, stats: Optional[NormalizationStats] = None) -> LabeledImageSet:
    images, labels = _load_cifar_raw(path)
    logger.info(f"Loaded {len(labels)} CIFAR-10 records from {path}")
    return LabeledImageSet.from_raw(images, labels, 10, stats)


# ============== Synthetic ==============

def _synthetic_raw(n: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.Generator(np.random.PCG64(seed))
    side = SYNTHETIC_SIDE
    yy, xx = np.mgrid[0:side, 0:side]
    images = np.empty((n, 1, side, side), dtype=np.uint8)
    labels = np.arange(n, dtype=np.int64) % 2
    for i in range(n):
        canvas = np.full((side, side), 0.1)
        if labels[i] == 0:
            # full-length bar, 2 pixels wide: 24 bright pixels
            start = int(rng.integers(1, side - 2))
            if rng.integers(0, 2):
                canvas[start:start + 2, :] = 0.9
            else:
                canvas[:, start:start + 2] = 0.9
        else:
            # radius-2 disc: 13 bright pixels
            cy, cx = rng.integers(3, side - 3, size=2)
            canvas[(yy - cy) ** 2 + (xx - cx) ** 2 <= 4] = 0.9
        canvas += rng.normal(0.0, 0.05, size=canvas.shape)
        images[i, 0] = np.rint(np.clip(canvas, 0.0, 1.0) * 255.0).astype(np.uint8)
    return images, labels


def synthetic_shapes(n: int, seed: int = 0, stats: Optional[NormalizationStats] = None) -> LabeledImageSet:
    """
    Two-class 12x12 set, labels alternate 0/1.
    Class 0 is an axis-aligned bar, class 1 a disc; the bar always covers more
    bright pixels, so total intensity alone separates the classes.
    """
    if n < 2:
        raise UsageError(f"synthetic set needs at least 2 samples, got {n}")
    images, labels = _synthetic_raw(n, seed)
    return LabeledImageSet.from_raw(images, labels, 2, stats)


# ============== Dispatcher ==============

def resolve_data_dir(data_dir: Optional[PathLike] = None) -> Path:
    return Path(data_dir or os.getenv("SPECNET_DATA_DIR") or "data")


def _pick(count: int, limit: Optional[int], seed: int) -> np.ndarray:
    """Seeded subset of indices in file order"""
    if not limit or limit >= count:
        return np.arange(count)
    rng = np.random.Generator(np.random.PCG64(seed))
    return np.sort(rng.permutation(count)[:limit])


def eval_cap(subset: Optional[int]) -> Optional[int]:
    return max(subset // 5, 1) if subset else None


def _split(train_raw: Tuple[np.ndarray, np.ndarray], test_raw: Tuple[np.ndarray, np.ndarray],
           subset: Optional[int], seed: int, num_classes: int) -> Tuple[LabeledImageSet, LabeledImageSet]:
    train_idx = _pick(len(train_raw[1]), subset, seed)
    test_idx = _pick(len(test_raw[1]), eval_cap(subset), seed + 1)
    train = LabeledImageSet.from_raw(train_raw[0][train_idx], train_raw[1][train_idx], num_classes)
    test = LabeledImageSet.from_raw(test_raw[0][test_idx], test_raw[1][test_idx], num_classes, train.stats)
    return train, test


def load_dataset(
    name: str,
    data_dir: Optional[PathLike] = None,
    subset: Optional[int] = None,
    seed: int = 0,
    synthetic_size: int = 512,
) -> Tuple[LabeledImageSet, LabeledImageSet]:
    """
    (train, test) splits of the named dataset.
    Standardization statistics come from the training split only.
    """
    if name == "synthetic":
        n = subset or synthetic_size
        train = synthetic_shapes(n, seed)
        test = synthetic_shapes(max(n // 5, 2), seed + 1, train.stats)
        logger.info(f"Generated synthetic shapes: {len(train)} train / {len(test)} test")
        return train, test

    root = resolve_data_dir(data_dir)
    if name == "mnist":
        train_raw = _load_idx_raw(*(root / f for f in MNIST_FILES["train"]))
        test_raw = _load_idx_raw(*(root / f for f in MNIST_FILES["test"]))
        train, test = _split(train_raw, test_raw, subset, seed, 10)
    elif name == "cifar10":
        batches: List[Tuple[np.ndarray, np.ndarray]] = [_load_cifar_raw(root / f) for f in CIFAR_TRAIN_FILES]
        train_raw = (np.concatenate([b[0] for b in batches]), np.concatenate([b[1] for b in batches]))
        train, test = _split(train_raw, _load_cifar_raw(root / CIFAR_TEST_FILE), subset, seed, 10)
    else:
        raise UsageError(f"unknown dataset '{name}', expected one of {DATASETS}")
    logger.info(f"Loaded {name} from {root}: {len(train)} train / {len(test)} test")
    return train, test
