"""Dataset ingestion: IDX files and synthetic Gaussian blobs."""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dpcert.errors import IdxParseError, ValidationError
from dpcert.special import standard_normal

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass
class LabeledBatch:
    x: np.ndarray      # (n, d) float64
    y: np.ndarray      # (n,) int64

    def __len__(self):
        return self.y.shape[0]

    def take(self, count):
        return LabeledBatch(self.x[:count], self.y[:count])


def _read_header(path, raw, magic, ndims):
    if len(raw) < 4:
        raise IdxParseError(path, 0, "file shorter than the 4-byte magic")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise IdxParseError(path, 0, f"bad magic 0x{got:08x}, expected 0x{magic:08x}")
    end = 4 + 4 * ndims
    if len(raw) < end:
        raise IdxParseError(path, len(raw), f"truncated header, need {end} bytes")
    return struct.unpack(f">{ndims}I", raw[4:end]), end


def _read_body(path, raw, start, count):
    if len(raw) < start + count:
        raise IdxParseError(path, len(raw), f"truncated data, expected {start + count} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=start)


def load_idx(images_path, labels_path, limit=None):
    """Parse an IDX image/label pair; pixels are scaled to [0, 1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    raw_x = images_path.read_bytes()
    raw_y = labels_path.read_bytes()
    (n, rows, cols), start_x = _read_header(images_path, raw_x, IMAGES_MAGIC, 3)
    (m,), start_y = _read_header(labels_path, raw_y, LABELS_MAGIC, 1)
    if n != m:
        # the count field sits right after the magic
        raise IdxParseError(labels_path, 4, f"label count {m} does not match image count {n}")
    pixels = _read_body(images_path, raw_x, start_x, n * rows * cols)
    labels = _read_body(labels_path, raw_y, start_y, n)
    if limit is not None:
        n = min(n, int(limit))
    x = pixels[: n * rows * cols].reshape(n, rows * cols).astype(np.float64) / 255.0
    return LabeledBatch(x, labels[:n].astype(np.int64))


def write_idx(images_path, labels_path, images, labels):
    """Inverse of :func:`load_idx` for uint8 arrays of shape ``(n, rows, cols)``."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">4I", IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", LABELS_MAGIC, labels.size) + labels.tobytes())


def synth_blobs(n, d, classes, spread, seed):
    """Balanced Gaussian clusters around unit-norm class means."""
    if classes < 2 or d < 2:
        raise ValidationError("synth_blobs needs classes >= 2 and d >= 2")
    if n < 1 or spread < 0:
        raise ValidationError("synth_blobs needs n >= 1 and spread >= 0")
    rng = np.random.default_rng(seed)
    means = standard_normal(rng, (classes, d))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    y = np.arange(n) % classes
    y = y[rng.permutation(n)]
    x = means[y] + spread * standard_normal(rng, (n, d))
    return LabeledBatch(x, y.astype(np.int64))
