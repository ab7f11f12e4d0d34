"""Datasets encoded as input spike times.

Two sources live here: the three-class Yin Yang toy dataset (two
interlocking lobes plus the dots, all inside a disk) with a random
generator and a dense grid variant, and an IDX reader for MNIST-style
image files.  Features are used directly as spike times; coordinates
already live in [0, 1] and pixel bytes are rescaled there.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import InputError

__all__ = [
    "YIN",
    "YANG",
    "DOT",
    "CLASS_NAMES",
    "ParseError",
    "Sample",
    "YinYangConfig",
    "GridConfig",
    "classify",
    "encode_features",
    "generate_yinyang",
    "yinyang_grid",
    "stack_features",
    "write_yinyang_csv",
    "read_yinyang_csv",
    "load_idx",
    "write_idx",
]

YIN, YANG, DOT = 0, 1, 2
CLASS_NAMES = ("yin", "yang", "dot")

_CENTER = 0.5  # the disk lives in [0,1]^2 around (0.5, 0.5)

_IMAGE_MAGIC = 0x00000803
_LABEL_MAGIC = 0x00000801


class ParseError(ValueError):
    """A data file violates its binary format."""


@dataclass(frozen=True)
class Sample:
    """One data point: input spike times plus a class index."""

    features: np.ndarray
    label: int

    def __post_init__(self) -> None:
        f = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "label", int(self.label))
        if not np.all(np.isfinite(f)) or np.any(f < 0.0):
            raise InputError("features must be finite and non-negative")
        if self.label < 0:
            raise InputError("label must be a class index")


@dataclass(frozen=True)
class YinYangConfig:
    """count samples from the disk; balanced mode equalizes the classes."""

    count: int
    seed: int = 0
    r_big: float = 0.5
    r_small: float = 0.1
    balanced: bool = True

    def __post_init__(self) -> None:
        if self.count < 0:
            raise InputError("count must be non-negative")
        if not 0.0 < self.r_small < self.r_big:
            raise InputError("need 0 < r_small < r_big")


@dataclass(frozen=True)
class GridConfig:
    """resolution x resolution lattice over [0,1]^2, disk interior only."""

    resolution: int
    r_big: float = 0.5
    r_small: float = 0.1

    def __post_init__(self) -> None:
        if self.resolution < 2:
            raise InputError("grid resolution must be at least 2")
        if not 0.0 < self.r_small < self.r_big:
            raise InputError("need 0 < r_small < r_big")


# ---------------------------------------------------------------------------
# Yin Yang geometry
# ---------------------------------------------------------------------------


def classify(x: float, y: float, r_big: float = 0.5, r_small: float = 0.1) -> int:
    """Class of a point: the dots win, then the upper-half lobe rule.

    The figure is two semicircle lobes of radius r_big/2 centred on the
    horizontal diameter at +-r_big/2 from the middle.  Yin is the upper
    half without the right lobe's bulge, plus the left lobe's bulge into
    the lower half; yang is the rest.  Points within r_small of either
    lobe centre are dots.
    """
    d_l = float(np.hypot(x - (_CENTER - r_big / 2.0), y - _CENTER))
    d_r = float(np.hypot(x - (_CENTER + r_big / 2.0), y - _CENTER))
    if min(d_l, d_r) <= r_small:
        return DOT
    if (y >= _CENTER and d_r > r_big / 2.0) or (y < _CENTER and d_l <= r_big / 2.0):
        return YIN
    return YANG


def encode_features(x: float, y: float) -> np.ndarray:
    """Mirrored four-channel spike encoding (x, y, 1-x, 1-y)."""
    return np.array([x, y, 1.0 - x, 1.0 - y], dtype=np.float64)


def _inside_disk(x: np.ndarray, y: np.ndarray, r_big: float) -> np.ndarray:
    return (x - _CENTER) ** 2 + (y - _CENTER) ** 2 <= r_big**2


def generate_yinyang(config: YinYangConfig) -> list[Sample]:
    """Rejection-sample points uniformly from the disk.

    Unbalanced mode keeps the first `count` accepted points.  Balanced
    mode keeps per-class quotas of floor(count/3), the remainder going
    to the lowest class indices, and rejects draws whose class is full.
    """
    rng = np.random.default_rng(config.seed)
    base, extra = divmod(config.count, 3)
    quota = [base + (1 if c < extra else 0) for c in range(3)]
    taken = [0, 0, 0]
    out: list[Sample] = []
    lo, hi = _CENTER - config.r_big, _CENTER + config.r_big
    while len(out) < config.count:
        xs = rng.uniform(lo, hi, 512)
        ys = rng.uniform(lo, hi, 512)
        keep = _inside_disk(xs, ys, config.r_big)
        for x, y in zip(xs[keep], ys[keep]):
            label = classify(float(x), float(y), config.r_big, config.r_small)
            if config.balanced:
                if taken[label] >= quota[label]:
                    continue
                taken[label] += 1
            out.append(Sample(encode_features(float(x), float(y)), label))
            if len(out) == config.count:
                break
    return out


def yinyang_grid(config: GridConfig) -> list[Sample]:
    """All lattice points strictly inside the disk, row-major order."""
    axis = np.linspace(0.0, 1.0, config.resolution)
    yy, xx = np.meshgrid(axis, axis, indexing="ij")
    x = xx.ravel()
    y = yy.ravel()
    inside = (x - _CENTER) ** 2 + (y - _CENTER) ** 2 < config.r_big**2
    return [
        Sample(encode_features(float(xi), float(yi)),
               classify(float(xi), float(yi), config.r_big, config.r_small))
        for xi, yi in zip(x[inside], y[inside])
    ]


def stack_features(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """[N, F] feature matrix and [N] label vector for batch processing."""
    if not samples:
        raise InputError("no samples to stack")
    feats = np.stack([s.features for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return feats, labels


# ---------------------------------------------------------------------------
# CSV round trip for the two-coordinate datasets
# ---------------------------------------------------------------------------


def write_yinyang_csv(path, samples: Sequence[Sample]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "label"])
        for s in samples:
            writer.writerow([repr(float(s.features[0])), repr(float(s.features[1])), s.label])


def read_yinyang_csv(path) -> list[Sample]:
    import csv

    out: list[Sample] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["x", "y", "label"]:
            raise ParseError(f"{path}: expected header x,y,label")
        for row in reader:
            x, y = float(row["x"]), float(row["y"])
            out.append(Sample(encode_features(x, y), int(row["label"])))
    return out


# ---------------------------------------------------------------------------
# IDX image files
# ---------------------------------------------------------------------------


def _read_exact(fh, n: int, path, offset: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ParseError(f"{path}: truncated at offset {offset}, needed {n} bytes")
    return buf


def _parse_idx_images(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, path, 0))
        if magic != _IMAGE_MAGIC:
            raise ParseError(f"{path}: bad magic 0x{magic:08x} at offset 0")
        if rows < 1 or cols < 1:
            raise ParseError(f"{path}: bad image dimensions at offset 8")
        raw = _read_exact(fh, count * rows * cols, path, 16)
    return np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)


def _parse_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, count = struct.unpack(">II", _read_exact(fh, 8, path, 0))
        if magic != _LABEL_MAGIC:
            raise ParseError(f"{path}: bad magic 0x{magic:08x} at offset 0")
        raw = _read_exact(fh, count, path, 8)
    return np.frombuffer(raw, dtype=np.uint8)


def load_idx(images_path, labels_path, invert: bool = False) -> list[Sample]:
    """Samples from an IDX image/label file pair.

    Pixels are rescaled to [0, 1] and used as spike times, so bright
    pixels spike late; pass invert=True for t = 1 - value instead.
    """
    images = _parse_idx_images(images_path)
    labels = _parse_idx_labels(labels_path)
    if len(labels) != len(images):
        raise ParseError(
            f"{labels_path}: label count {len(labels)} != image count "
            f"{len(images)} (offset 4)"
        )
    times = images.reshape(len(images), -1).astype(np.float64) / 255.0
    if invert:
        times = 1.0 - times
    return [Sample(times[i], int(labels[i])) for i in range(len(labels))]


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write a fixture file pair in the same binary layout load_idx reads."""
    imgs = np.asarray(images, dtype=np.uint8)
    labs = np.asarray(labels, dtype=np.uint8)
    if imgs.ndim != 3 or labs.ndim != 1 or imgs.shape[0] != labs.shape[0]:
        raise InputError("need images [N, rows, cols] and labels [N]")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", _IMAGE_MAGIC, *imgs.shape))
        fh.write(imgs.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", _LABEL_MAGIC, labs.shape[0]))
        fh.write(labs.tobytes())
