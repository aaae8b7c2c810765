"""Dataset ingestion: IDX files (MNIST), label transforms, synthetic Gaussians."""
from __future__ import annotations

import gzip
import math
import os
import struct

import numpy as np

from ..nn_core import LabeledDataset

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IDXFormatError(ValueError):
    pass


def _open(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Read an unsigned-byte IDX array, checking magic and payload length."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise IDXFormatError(f"{path}: truncated header, {len(raw)} of 4 magic bytes at offset 0")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IDXFormatError(f"{path}: wrong magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IDXFormatError(f"{path}: truncated header, {len(raw)} of {header} bytes")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    need = int(np.prod(dims, dtype=np.int64))
    have = len(raw) - header
    if have < need:
        raise IDXFormatError(
            f"{path}: truncated payload at byte offset {len(raw)}: {have} of {need} data bytes present "
            f"({need - have} missing)"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray):
    """Write a uint8 array in IDX format (magic 0x0801 for 1-D, 0x0803 for 3-D, ...)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x0800 | array.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        f.write(array.tobytes())


def load_idx(images_path, labels_path, standardize: bool = False) -> LabeledDataset:
    """Images scaled to [0, 1] (optionally standardised per feature) with 0..9 labels."""
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if standardize:
        X = (X - X.mean(axis=0)) / np.maximum(X.std(axis=0), 1e-8)
    n_classes = int(labels.max()) + 1 if labels.size else 1
    return LabeledDataset(X, labels.astype(np.int64), max(n_classes, 10), meta=dict(source=str(images_path)))


def load_mnist_dir(directory, split: str = "train", standardize: bool = False) -> LabeledDataset:
    names = MNIST_FILES[split]
    paths = []
    for name in names:
        for cand in (name, name + ".gz"):
            full = os.path.join(directory, cand)
            if os.path.exists(full):
                paths.append(full)
                break
        else:
            raise FileNotFoundError(f"{name} not found in {directory}")
    return load_idx(*paths, standardize=standardize)


def binarize_labels(ds: LabeledDataset) -> LabeledDataset:
    """Digits 0-4 become class 1, digits 5-9 class 0."""
    if ds.n_classes != 10:
        raise ValueError(f"binarize_labels expects 10-class input, got {ds.n_classes} classes")
    if ds.labels.size and (ds.labels.min() < 0 or ds.labels.max() > 9):
        raise ValueError("labels outside 0..9")
    y = (ds.labels <= 4).astype(np.int64)
    return LabeledDataset(ds.features, y, 2, ds.label_mode, ds.label_seed, dict(ds.meta, binarized=True))


def randomize_labels(ds: LabeledDataset, seed: int) -> LabeledDataset:
    """Replace labels by i.i.d. uniform draws over the classes; features are untouched."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, ds.n_classes, size=len(ds))
    return LabeledDataset(ds.features, y, ds.n_classes, "random", seed, dict(ds.meta))


def seeded_subset(ds: LabeledDataset, n: int, seed: int) -> LabeledDataset:
    """First ``n`` examples after a seeded shuffle."""
    if n > len(ds):
        raise ValueError(f"subset of {n} requested from {len(ds)} examples")
    idx = np.random.default_rng(seed).permutation(len(ds))[:n]
    return ds.take(np.sort(idx))


def synthetic_gaussians(m: int, d: int, separation: float, seed: int,
                        m_test: int | None = None) -> tuple[LabeledDataset, LabeledDataset]:
    """Two balanced isotropic unit-variance classes at ``+-separation/2 * e1``.

    Class 1 sits at ``+separation/2``.  Train and test use independent seeds.
    """
    if m % 2:
        raise ValueError("m must be even for balanced classes")
    if separation < 0:
        raise ValueError("separation must be nonnegative")
    m_test = m if m_test is None else m_test
    ss = np.random.SeedSequence(seed)
    train_seed, test_seed = ss.spawn(2)

    def draw(n, sseq):
        rng = np.random.default_rng(sseq)
        y = np.repeat([1, 0], [n - n // 2, n // 2])
        X = rng.standard_normal((n, d))
        X[:, 0] += np.where(y == 1, separation / 2.0, -separation / 2.0)
        perm = rng.permutation(n)
        return LabeledDataset(X[perm], y[perm], 2, meta=dict(source="synthetic", separation=separation))

    return draw(m, train_seed), draw(m_test, test_seed)


def bayes_error(separation: float) -> float:
    """Bayes error of the two-Gaussian problem: ``Phi(-separation / 2)``."""
    return 0.5 * math.erfc(separation / 2.0 / math.sqrt(2.0))
