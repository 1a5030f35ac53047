"""
Dataset loading and shaping.

IDX files are big-endian: a 4-byte magic (0x00000803 images, 0x00000801
labels), one 4-byte size per dimension, then unsigned bytes. Paths ending in
.gz are decompressed transparently. Images are stored as (N, 1, H, W) float64
in [0, 1].
"""

import gzip
import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ArgumentError, ConsistencyError, FormatError, InsufficientSamplesError, LengthError
from .file_handling import write_json

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

PathLike = Union[str, Path]


# =============================================================================
# DATASET VALUE OBJECT
# =============================================================================

@dataclass(frozen=True, eq=False)
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    class_names: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        images = np.array(self.images, dtype=float)
        if images.ndim == 3:
            images = images[:, None, :, :]
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if images.shape[0] != labels.shape[0]:
            raise ConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ArgumentError("pixel values must lie in [0, 1]")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_classes(self) -> int:
        if self.class_names:
            return len(self.class_names)
        return int(self.labels.max()) + 1 if len(self) else 0

    @property
    def image_shape(self) -> Tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def class_counts(self) -> List[int]:
        return np.bincount(self.labels, minlength=self.n_classes).tolist()

    def images_of(self, label: int) -> np.ndarray:
        return self.images[self.labels == label]

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.images).tobytes())
        digest.update(np.ascontiguousarray(self.labels).tobytes())
        return digest.hexdigest()

    def concat(self, images: np.ndarray, labels: Sequence[int]) -> "LabeledDataset":
        if len(labels) == 0:
            return self
        images = np.asarray(images, dtype=float).reshape((-1,) + self.image_shape)
        return LabeledDataset(np.concatenate([self.images, images]),
                              np.concatenate([self.labels, np.asarray(labels, dtype=np.int64)]),
                              self.class_names)


# =============================================================================
# IDX FORMAT
# =============================================================================

def _open(path: PathLike, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def _read_idx(path: PathLike, magic: int, ndim: int) -> np.ndarray:
    with _open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4 + 4 * ndim:
        raise LengthError(f"{path}: file too short for an IDX header")
    found, = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    body = raw[4 + 4 * ndim:]
    expected = int(np.prod(dims))
    if len(body) < expected:
        raise LengthError(f"{path}: header promises {expected} bytes, file has {len(body)}")
    return np.frombuffer(body, dtype=np.uint8, count=expected).reshape(dims)


def load_idx(images_path: PathLike, labels_path: PathLike) -> LabeledDataset:
    images = _read_idx(images_path, IMAGE_MAGIC, 3)
    labels = _read_idx(labels_path, LABEL_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(f"{images_path} has {images.shape[0]} images, {labels_path} has {labels.shape[0]} labels")
    class_names = tuple(str(c) for c in range(int(labels.max()) + 1)) if labels.size else ()
    logger.info("Loaded %d images of %dx%d from %s", images.shape[0], images.shape[1], images.shape[2], images_path)
    return LabeledDataset(images.astype(float) / 255.0, labels, class_names)


def write_idx(images: np.ndarray, labels: Sequence[int], images_path: PathLike, labels_path: PathLike) -> None:
    """Write uint8 images (N, H, W) and labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with _open(images_path, "wb") as f:
        f.write(struct.pack(">4I", IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())
    with _open(labels_path, "wb") as f:
        f.write(struct.pack(">2I", LABEL_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


# =============================================================================
# SHAPING
# =============================================================================

def subset(ds: LabeledDataset, classes: Sequence[int], per_class: int, seed: int) -> LabeledDataset:
    """per_class samples of each listed class, labels remapped to 0..len(classes)-1."""
    rng = np.random.default_rng(seed)
    picked_images, picked_labels = [], []
    for new_label, original in enumerate(classes):
        candidates = np.flatnonzero(ds.labels == original)
        if candidates.shape[0] < per_class:
            raise InsufficientSamplesError(f"class {original} has {candidates.shape[0]} samples, {per_class} requested")
        chosen = np.sort(rng.permutation(candidates)[:per_class])
        picked_images.append(ds.images[chosen])
        picked_labels.append(np.full(per_class, new_label, dtype=np.int64))
    names = tuple(ds.class_names[c] if c < len(ds.class_names) else str(c) for c in classes)
    return LabeledDataset(np.concatenate(picked_images), np.concatenate(picked_labels), names)


def _area_weights(source: int, target: int) -> np.ndarray:
    """Row i averages source pixels over [i*s, (i+1)*s), s = source/target."""
    scale = source / target
    weights = np.zeros((target, source))
    for i in range(target):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(np.floor(lo)), min(int(np.ceil(hi)), source)):
            weights[i, j] = max(0.0, min(hi, j + 1) - max(lo, j))
    return weights / scale


def downscale(ds: LabeledDataset, size: int) -> LabeledDataset:
    """Block-mean pooling for divisible sizes, area-weighted resize otherwise."""
    if len(ds) == 0:
        return ds
    _, _, h, w = ds.images.shape
    if h != w:
        raise ArgumentError(f"downscale expects square images, got {h}x{w}")
    if size > h or size < 1:
        raise ArgumentError(f"cannot downscale {h}x{h} to {size}x{size}")
    if size == h:
        return ds
    if h % size == 0:
        f = h // size
        images = ds.images.reshape(len(ds), 1, size, f, size, f).mean(axis=(3, 5))
    else:
        a = _area_weights(h, size)
        images = np.einsum("ij,bcjk,lk->bcil", a, ds.images, a)
    return LabeledDataset(np.clip(images, 0.0, 1.0), ds.labels, ds.class_names)


def weaken_class(ds: LabeledDataset, label: int, keep: int, seed: int) -> LabeledDataset:
    """Keep only `keep` random samples of one class (the deliberately weak class)."""
    rng = np.random.default_rng(seed)
    members = np.flatnonzero(ds.labels == label)
    dropped = rng.permutation(members)[keep:]
    mask = np.ones(len(ds), dtype=bool)
    mask[dropped] = False
    return LabeledDataset(ds.images[mask], ds.labels[mask], ds.class_names)


# =============================================================================
# SYNTHETIC DIGITS
# =============================================================================

def _glyph(digit: int, side: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(float)
    cy = side / 2 + rng.uniform(-1.5, 1.5)
    cx = side / 2 + rng.uniform(-1.5, 1.5)
    stroke = side / 14 * rng.uniform(0.8, 1.3)
    if digit == 0:
        ry, rx = side * rng.uniform(0.28, 0.34), side * rng.uniform(0.18, 0.26)
        dist = np.abs(np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2) - 1.0) * min(ry, rx)
    elif digit == 1:
        slant = rng.uniform(-0.25, 0.25)
        dist = np.abs((xx - cx) - slant * (yy - cy))
        dist[np.abs(yy - cy) > side * 0.34] = side
    elif digit == 2:
        top = side * 0.25
        bottom = side * 0.75
        arc = np.abs(np.sqrt((yy - (cy - side * 0.12)) ** 2 + (xx - cx) ** 2) - side * 0.18)
        arc[yy > cy - side * 0.05] = side
        diag = np.abs((yy - bottom) + (xx - (cx - side * 0.2)) * ((bottom - cy) / (side * 0.4)))
        diag[(yy < cy - side * 0.05) | (yy > bottom)] = side
        base = np.abs(yy - bottom)
        base[(xx < cx - side * 0.25) | (xx > cx + side * 0.25)] = side
        dist = np.minimum(np.minimum(arc, diag), base)
        dist[yy < top - stroke] = side
    else:
        raise ArgumentError(f"no synthetic glyph for digit {digit}")
    image = np.clip(1.5 - dist / stroke, 0.0, 1.0)
    image += rng.normal(0.0, 0.05, size=image.shape)
    return np.clip(image, 0.0, 1.0)


def make_synthetic_digits(per_class: int, classes: Sequence[int] = (0, 1, 2), side: int = 28,
                          seed: int = 0) -> LabeledDataset:
    """
    Deterministic stand-in for MNIST digits 0, 1 and 2 (ring, bar, hooked
    zig-zag with positional jitter and pixel noise). Labels are already
    remapped to 0..len(classes)-1.
    """
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for label, digit in enumerate(classes):
        for _ in range(per_class):
            images.append(_glyph(digit, side, rng))
            labels.append(label)
    if not images:
        return LabeledDataset(np.zeros((0, 1, side, side)), np.zeros(0, dtype=np.int64),
                              tuple(str(c) for c in classes))
    return LabeledDataset(np.stack(images), labels, tuple(str(c) for c in classes))


# =============================================================================
# MANIFEST
# =============================================================================

def subset_manifest(source_hashes: Dict[str, str], classes: Sequence[int], per_class: int,
                    seed: int, size: int, extra: Optional[Dict] = None) -> Dict:
    """Provenance record for a derived subset."""
    manifest = {
        "sources": dict(source_hashes),
        "classes": list(classes),
        "per_class": per_class,
        "seed": seed,
        "image_size": size,
    }
    manifest.update(extra or {})
    return manifest


def write_subset_manifest(path: PathLike, source_hashes: Dict[str, str], classes: Sequence[int], per_class: int,
                          seed: int, size: int, extra: Optional[Dict] = None) -> Path:
    return write_json(path, subset_manifest(source_hashes, classes, per_class, seed, size, extra))
