"""Datasets: seeded Gaussian blobs, IDX image files, splitting and batching.

Samples are stored one per column: ``X`` has shape (features, samples).
"""

from __future__ import annotations

import csv
import dataclasses
import gzip
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


@dataclasses.dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    feature_scaling: str = "none"

    def __post_init__(self):
        if self.X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {self.X.shape}")
        if self.y.shape != (self.X.shape[1],):
            raise ValueError(f"{self.y.shape[0]} labels for {self.X.shape[1]} samples")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    @property
    def n_features(self) -> int:
        return self.X.shape[0]

    def __len__(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return dataclasses.replace(self, X=np.ascontiguousarray(self.X[:, idx]), y=self.y[idx])


def make_blobs(n_classes: int, dim: int, per_class: int, spread: float, seed: int,
               radius: float = 4.0, clusters_per_class: int = 1) -> Dataset:
    """Isotropic Gaussian clusters with centres at ``radius`` along random directions.

    With ``clusters_per_class > 1`` each class owns several centres and the
    samples of a class are dealt round-robin over them.
    """
    if min(n_classes, dim, per_class, clusters_per_class) < 1:
        raise ValueError("counts must be >= 1")
    if spread <= 0:
        raise ValueError("spread must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    k = clusters_per_class
    dirs = rng.standard_normal((n_classes * k, dim))
    centers = radius * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    labels = np.repeat(np.arange(n_classes), per_class)
    which = labels * k + np.tile(np.arange(per_class) % k, n_classes)
    noise = rng.standard_normal((labels.size, dim))
    X = centers[which] + spread * noise
    return Dataset(np.ascontiguousarray(X.T), labels.astype(np.int64), n_classes)


def blob_centers(n_classes: int, dim: int, seed: int, radius: float = 4.0,
                 clusters_per_class: int = 1) -> np.ndarray:
    """Centres used by :func:`make_blobs` for the same arguments, one per row."""
    rng = np.random.Generator(np.random.PCG64(seed))
    dirs = rng.standard_normal((n_classes * clusters_per_class, dim))
    return radius * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _read_header(data: bytes, path, magic: int, ndim: int) -> tuple[int, ...]:
    if len(data) < 4:
        raise TruncatedError(f"{path}: file too short for an IDX header ({len(data)} bytes)")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise BadMagicError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    end = 4 + 4 * ndim
    if len(data) < end:
        raise TruncatedError(f"{path}: truncated dimension header")
    return struct.unpack(f">{ndim}I", data[4:end])


def _read_maybe_gzip(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise TruncatedError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def load_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled from bytes to [0, 1].

    Gzip-compressed files are recognised by their magic bytes.
    """
    img = _read_maybe_gzip(images_path)
    lab = _read_maybe_gzip(labels_path)
    count, rows, cols = _read_header(img, images_path, IDX_IMAGES_MAGIC, 3)
    (n_labels,) = _read_header(lab, labels_path, IDX_LABELS_MAGIC, 1)
    npix = count * rows * cols
    if len(img) - 16 < npix:
        raise TruncatedError(f"{images_path}: expected {npix} pixel bytes, found {len(img) - 16}")
    if len(lab) - 8 < n_labels:
        raise TruncatedError(f"{labels_path}: expected {n_labels} label bytes, found {len(lab) - 8}")
    if n_labels != count:
        raise CountMismatchError(f"{count} images but {n_labels} labels")
    pixels = np.frombuffer(img, dtype=np.uint8, count=npix, offset=16).reshape(count, rows * cols)
    y = np.frombuffer(lab, dtype=np.uint8, count=n_labels, offset=8).astype(np.int64)
    if n_classes is None:
        n_classes = int(y.max()) + 1 if y.size else 1
    X = np.ascontiguousarray(pixels.T, dtype=np.float64) / 255.0
    return Dataset(X, y, n_classes)


def write_idx(ds: Dataset, images_path, labels_path, image_shape: tuple[int, int] | None = None) -> None:
    """Write ``ds`` as IDX; X values are rounded to the nearest multiple of 1/255.

    Paths ending in ``.gz`` are gzip-compressed.
    """
    if image_shape is None:
        side = int(round(np.sqrt(ds.n_features)))
        image_shape = (side, side) if side * side == ds.n_features else (1, ds.n_features)
    rows, cols = image_shape
    if rows * cols != ds.n_features:
        raise ValueError(f"image shape {image_shape} does not hold {ds.n_features} features")
    if ds.y.size and (ds.y.max() > 255):
        raise ValueError("IDX labels are single bytes")
    pixels = np.clip(np.rint(ds.X.T * 255.0), 0, 255).astype(np.uint8)
    img = struct.pack(">4I", IDX_IMAGES_MAGIC, len(ds), rows, cols) + pixels.tobytes()
    lab = struct.pack(">2I", IDX_LABELS_MAGIC, len(ds)) + ds.y.astype(np.uint8).tobytes()
    for path, payload in ((images_path, img), (labels_path, lab)):
        if str(path).endswith(".gz"):
            payload = gzip.compress(payload, mtime=0)
        Path(path).write_bytes(payload)


def train_val_split(ds: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must lie in (0, 1)")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(len(ds))
    n_val = max(1, int(round(val_fraction * len(ds))))
    return ds.subset(np.sort(perm[n_val:])), ds.subset(np.sort(perm[:n_val]))


def standardize(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Scale features to zero mean / unit variance using statistics of ``train`` only."""
    mean = train.X.mean(axis=1, keepdims=True)
    std = train.X.std(axis=1, keepdims=True)
    std[std == 0] = 1.0
    return tuple(dataclasses.replace(d, X=(d.X - mean) / std, feature_scaling="standardize")
                 for d in (train, *others))


def batches(ds: Dataset, batch_size: int, seed: int, epoch: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Shuffled mini-batches; the order depends only on ``(seed, epoch)``.

    A trailing batch with fewer than 2 samples is dropped (batchnorm needs 2).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.Generator(np.random.PCG64([int(seed), int(epoch)]))
    perm = rng.permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = perm[start:start + batch_size]
        if idx.size < 2:
            break
        yield ds.X[:, idx], ds.y[idx]


def write_csv(ds: Dataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(ds.n_features)] + ["label"])
        for k in range(len(ds)):
            w.writerow([repr(float(v)) for v in ds.X[:, k]] + [int(ds.y[k])])
