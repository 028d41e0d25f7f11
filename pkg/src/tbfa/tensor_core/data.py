"""Labeled batches, the seeded Gaussian-blob generator and the IDX reader/writer."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class LabeledBatch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.inputs.ndim < 2:
            raise ValueError("inputs must have a leading batch dimension")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"batch size mismatch: {self.inputs.shape[0]} inputs vs {self.labels.shape[0]} labels")
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("labels must be non-negative class indices")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx) -> "LabeledBatch":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledBatch(self.inputs[idx], self.labels[idx])

    def check_classes(self, n_classes: int):
        if self.labels.size and self.labels.max() >= n_classes:
            raise ValueError(f"label {int(self.labels.max())} out of range for {n_classes} classes")


def concat_batches(*batches: LabeledBatch) -> LabeledBatch:
    return LabeledBatch(np.concatenate([b.inputs for b in batches]),
                        np.concatenate([b.labels for b in batches]))


def make_blobs(n_classes=10, n_features=16, n_train_per_class=200, n_test_per_class=100,
               separation=3.0, noise=1.0, seed=0):
    """Seeded isotropic Gaussian blobs, one cluster per class.

    Class centres are drawn from ``N(0, separation^2)`` per coordinate; samples
    add ``N(0, noise^2)``. Returns ``(train, test)`` ordered by class.
    """
    rng = np.random.default_rng(seed)
    centres = rng.normal(0.0, separation, size=(n_classes, n_features))

    def draw(per_class):
        labels = np.repeat(np.arange(n_classes), per_class)
        x = centres[labels] + rng.normal(0.0, noise, size=(labels.size, n_features))
        return LabeledBatch(x, labels)

    train = draw(n_train_per_class)
    test = draw(n_test_per_class)
    return train, test


# IDX type codes -> big-endian numpy dtypes
_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {dt.str[1:]: code for code, dt in _IDX_DTYPES.items()}


def _open(path, mode):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode)
    return open(path, mode)


def read_idx(path) -> np.ndarray:
    with _open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ValueError(f"{path}: not an IDX file (bad magic)")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_DTYPES:
        raise ValueError(f"{path}: unknown IDX element type 0x{code:02x}")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    dtype = _IDX_DTYPES[code]
    body = raw[4 + 4 * ndim:]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(body) != expected:
        raise ValueError(f"{path}: payload is {len(body)} bytes, header implies {expected}")
    return np.frombuffer(body, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array):
    array = np.asarray(array)
    key = array.dtype.newbyteorder(">").str[1:]
    if key not in _IDX_CODES:
        raise ValueError(f"dtype {array.dtype} has no IDX encoding")
    header = bytes([0, 0, _IDX_CODES[key], array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    with _open(path, "wb") as fh:
        fh.write(header + array.astype(array.dtype.newbyteorder(">")).tobytes())


def load_idx_dataset(images_path, labels_path, flatten=False, scale=255.0) -> LabeledBatch:
    """Load an IDX image/label pair (MNIST layout) as a float batch.

    Images of shape ``(B, H, W)`` become ``(B, 1, H, W)`` unless ``flatten``.
    Integer pixel types are divided by ``scale``.
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64)
    x = images.astype(np.float64)
    if np.issubdtype(images.dtype, np.integer) and scale:
        x = x / scale
    if flatten:
        x = x.reshape(x.shape[0], -1)
    elif x.ndim == 3:
        x = x[:, None, :, :]
    return LabeledBatch(x, labels)
