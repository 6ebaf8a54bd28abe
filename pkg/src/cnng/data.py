"""IDX (MNIST/EMNIST) loading, seeded splits and stratified subsampling."""
from __future__ import annotations

import gzip
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxError(ValueError):
    """Base class for malformed IDX input."""


class IdxMagicError(IdxError):
    pass


class IdxCountMismatch(IdxError):
    pass


class IdxTruncated(IdxError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray  # (n, features) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    num_classes: int
    name: str = ""

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a 2-D array")
        if len(self.inputs) != len(self.labels):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx, name: str | None = None) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes,
                       self.name if name is None else name)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()[:16]


def _read_bytes(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Parse a big-endian unsigned-byte IDX file into an array of its declared shape."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IdxTruncated(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncated(f"{path}: header declares {ndim} dimensions but file ends early")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise IdxTruncated(f"{path}: expected {size} payload bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx_pair(images_path, labels_path, name: str = "", transpose: bool = False) -> Dataset:
    """Load an image/label IDX pair; pixels are scaled to [0, 1].

    ``transpose`` swaps rows and columns of every image, which is how EMNIST
    files differ from MNIST ones.
    """
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatch(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    if transpose:
        images = images.transpose(0, 2, 1)
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    num_classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(inputs, labels, num_classes, name)


def write_idx_pair(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (n, rows, cols) and labels (n,) as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the first round(fraction * n) examples form the first part."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    n = len(dataset)
    cut = int(round(fraction * n))
    if cut == 0 or cut == n:
        raise ValueError(f"fraction {fraction} leaves one side of a {n}-example split empty")
    order = np.random.default_rng(seed).permutation(n)
    return dataset.take(order[:cut]), dataset.take(order[cut:])


def stratified_counts(labels: np.ndarray, n: int, num_classes: int) -> np.ndarray:
    freq = np.bincount(labels, minlength=num_classes)
    quota = (freq * n) // len(labels)
    remainder = n - int(quota.sum())
    # largest classes first, lowest id among equals
    for c in sorted(range(num_classes), key=lambda c: (-freq[c], c))[:remainder]:
        quota[c] += 1
    return quota


def subsample(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Class-stratified seeded sample of size n, kept in original order."""
    if n > len(dataset):
        raise ValueError(f"cannot draw {n} examples from a dataset of {len(dataset)}")
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = np.random.default_rng(seed)
    quota = stratified_counts(dataset.labels, n, dataset.num_classes)
    chosen = []
    for c in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == c)
        if quota[c]:
            chosen.append(rng.choice(members, size=int(quota[c]), replace=False))
    idx = np.sort(np.concatenate(chosen)) if chosen else np.array([], dtype=np.int64)
    return dataset.take(idx)
