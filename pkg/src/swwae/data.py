"""Dataset ingestion, augmentation, and batch iteration.

Images travel as (N, C, H, W) float arrays scaled to [0, 1].  On disk the
library speaks the IDX format (big-endian magic + dims + raw u8 payload,
magic 0x00000803 for images and 0x00000801 for labels).

Training augmentation is pad-then-random-crop back to the native size plus
a horizontal mirror with probability 0.5, both driven by an explicit
generator so a seeded run reproduces the same crops.  Reconstruction
targets are the augmented images themselves, exactly what the encoder saw.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W), values in [0, 1]
    labels: np.ndarray  # (N,), int64

    @property
    def n(self) -> int:
        return self.images.shape[0]

    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.n else 0

    def subset(self, indices) -> "Dataset":
        return Dataset(self.images[indices], self.labels[indices])


def _read_be32(blob: bytes, offset: int, path) -> int:
    if offset + 4 > len(blob):
        raise DataError(f"{path}: truncated header at offset {offset}")
    return struct.unpack_from(">i", blob, offset)[0]


def load_idx(images_path, labels_path, dtype=np.float32) -> Dataset:
    """Parse an IDX image/label file pair; pixel bytes are scaled by 1/255."""
    with open(images_path, "rb") as fh:
        blob = fh.read()
    magic = _read_be32(blob, 0, images_path)
    if magic != IMAGE_MAGIC:
        raise DataError(f"{images_path}: bad magic 0x{magic:08x} at offset 0, expected 0x{IMAGE_MAGIC:08x}")
    count = _read_be32(blob, 4, images_path)
    rows = _read_be32(blob, 8, images_path)
    cols = _read_be32(blob, 12, images_path)
    expected = 16 + count * rows * cols
    if len(blob) != expected:
        raise DataError(f"{images_path}: {len(blob)} bytes, expected {expected} (truncated at offset {len(blob)})")
    images = np.frombuffer(blob, dtype=np.uint8, offset=16).reshape(count, 1, rows, cols)

    with open(labels_path, "rb") as fh:
        lblob = fh.read()
    magic = _read_be32(lblob, 0, labels_path)
    if magic != LABEL_MAGIC:
        raise DataError(f"{labels_path}: bad magic 0x{magic:08x} at offset 0, expected 0x{LABEL_MAGIC:08x}")
    lcount = _read_be32(lblob, 4, labels_path)
    if len(lblob) != 8 + lcount:
        raise DataError(f"{labels_path}: {len(lblob)} bytes, expected {8 + lcount} (truncated at offset {len(lblob)})")
    if lcount != count:
        raise DataError(f"label count {lcount} != image count {count}")
    labels = np.frombuffer(lblob, dtype=np.uint8, offset=8).astype(np.int64)
    return Dataset((images.astype(dtype) / 255.0), labels)


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Serialize back to IDX; images are quantized to u8 by round-half-up."""
    n, c, h, w = dataset.images.shape
    if c != 1:
        raise DataError(f"IDX writer handles single-channel images, got {c} channels")
    pixels = np.floor(np.clip(dataset.images, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">iiii", IMAGE_MAGIC, n, h, w))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">ii", LABEL_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


@dataclass(frozen=True)
class AugmentSpec:
    pad: int = 2
    crop_h: int = 28
    crop_w: int = 28
    mirror_prob: float = 0.5
    enabled: bool = True


def augment(images: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Random crop from a zero-padded canvas plus random horizontal mirror.

    Deterministic given the generator state; labels are untouched by
    construction.  Output spatial extent equals (crop_h, crop_w).
    """
    if not spec.enabled:
        return images
    n, c, h, w = images.shape
    if spec.crop_h > h + 2 * spec.pad or spec.crop_w > w + 2 * spec.pad:
        raise DataError(f"crop {spec.crop_h}x{spec.crop_w} exceeds padded extent")
    padded = np.pad(images, ((0, 0), (0, 0), (spec.pad, spec.pad), (spec.pad, spec.pad)))
    max_dy = padded.shape[2] - spec.crop_h
    max_dx = padded.shape[3] - spec.crop_w
    dy = rng.integers(0, max_dy + 1, size=n)
    dx = rng.integers(0, max_dx + 1, size=n)
    flip = rng.random(n) < spec.mirror_prob
    out = np.empty((n, c, spec.crop_h, spec.crop_w), dtype=images.dtype)
    for i in range(n):
        patch = padded[i, :, dy[i] : dy[i] + spec.crop_h, dx[i] : dx[i] + spec.crop_w]
        out[i] = patch[:, :, ::-1] if flip[i] else patch
    return out


def epoch_permutation(n: int, shuffle_seed: int, epoch: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([shuffle_seed, epoch])))
    return rng.permutation(n)


def batches(dataset: Dataset, batch_size: int, shuffle_seed: int, epoch: int):
    """Yield (images, labels) over one epoch; the short final batch is kept.

    The permutation is a pure function of (shuffle_seed, epoch), so every
    consumer sees the same order and no sample repeats within an epoch.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    perm = epoch_permutation(dataset.n, shuffle_seed, epoch)
    for start in range(0, dataset.n, batch_size):
        idx = perm[start : start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


# -- synthetic digit corpus ---------------------------------------------------
#
# Ten stroke-based glyphs rendered at 28x28 with a random affine jitter and
# pixel noise.  Keeps the full pipeline (IDX files, augmentation, training)
# exercising realistic data without shipping a corpus in the repository.

_GLYPH_STROKES = {
    0: [(0.50, 0.10, 0.75, 0.28), (0.75, 0.28, 0.75, 0.72), (0.75, 0.72, 0.50, 0.90),
        (0.50, 0.90, 0.25, 0.72), (0.25, 0.72, 0.25, 0.28), (0.25, 0.28, 0.50, 0.10)],
    1: [(0.35, 0.28, 0.55, 0.10), (0.55, 0.10, 0.55, 0.90), (0.35, 0.90, 0.75, 0.90)],
    2: [(0.25, 0.28, 0.40, 0.10), (0.40, 0.10, 0.62, 0.10), (0.62, 0.10, 0.75, 0.30),
        (0.75, 0.30, 0.25, 0.90), (0.25, 0.90, 0.78, 0.90)],
    3: [(0.25, 0.12, 0.70, 0.12), (0.70, 0.12, 0.72, 0.40), (0.72, 0.40, 0.45, 0.50),
        (0.45, 0.50, 0.72, 0.62), (0.72, 0.62, 0.70, 0.88), (0.70, 0.88, 0.25, 0.88)],
    4: [(0.62, 0.10, 0.25, 0.62), (0.25, 0.62, 0.80, 0.62), (0.65, 0.35, 0.65, 0.90)],
    5: [(0.72, 0.10, 0.30, 0.10), (0.30, 0.10, 0.28, 0.46), (0.28, 0.46, 0.60, 0.42),
        (0.60, 0.42, 0.75, 0.58), (0.75, 0.58, 0.72, 0.78), (0.72, 0.78, 0.52, 0.90),
        (0.52, 0.90, 0.25, 0.86)],
    6: [(0.65, 0.10, 0.38, 0.38), (0.38, 0.38, 0.28, 0.62), (0.28, 0.62, 0.36, 0.85),
        (0.36, 0.85, 0.62, 0.88), (0.62, 0.88, 0.72, 0.66), (0.72, 0.66, 0.55, 0.52),
        (0.55, 0.52, 0.32, 0.58)],
    7: [(0.25, 0.12, 0.75, 0.12), (0.75, 0.12, 0.42, 0.90), (0.35, 0.50, 0.68, 0.50)],
    8: [(0.50, 0.10, 0.70, 0.25), (0.70, 0.25, 0.50, 0.48), (0.50, 0.48, 0.30, 0.25),
        (0.30, 0.25, 0.50, 0.10), (0.50, 0.48, 0.74, 0.70), (0.74, 0.70, 0.50, 0.90),
        (0.50, 0.90, 0.26, 0.70), (0.26, 0.70, 0.50, 0.48)],
    9: [(0.68, 0.42, 0.45, 0.48), (0.45, 0.48, 0.28, 0.32), (0.28, 0.32, 0.40, 0.12),
        (0.40, 0.12, 0.64, 0.12), (0.64, 0.12, 0.70, 0.34), (0.70, 0.34, 0.62, 0.88),
        (0.62, 0.88, 0.40, 0.90)],
}


def _segment_distances(points: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Min distance from each pixel to each polyline, vectorized per class chunk.

    points: (P, 2); segs: (B, S, 4) as (x0, y0, x1, y1).  Returns (B, P).
    """
    p0 = segs[:, :, None, 0:2]  # (B,S,1,2)
    p1 = segs[:, :, None, 2:4]
    d = p1 - p0
    length_sq = np.maximum((d * d).sum(-1), 1e-12)
    rel = points[None, None, :, :] - p0  # (B,S,P,2)
    t = np.clip((rel * d).sum(-1) / length_sq, 0.0, 1.0)
    proj = p0 + t[..., None] * d
    diff = points[None, None, :, :] - proj
    return np.sqrt((diff * diff).sum(-1)).min(axis=1)


def synthetic_digits(n: int, seed: int, image_size: int = 28, noise: float = 0.06,
                     dtype=np.float32) -> Dataset:
    """Render n jittered stroke digits with balanced labels."""
    rng = np.random.Generator(np.random.PCG64(seed))
    labels = rng.integers(0, 10, size=n).astype(np.int64)
    coords = (np.arange(image_size) + 0.5) / image_size
    gy, gx = np.meshgrid(coords, coords, indexing="ij")
    points = np.stack([gx.ravel(), gy.ravel()], axis=1)

    images = np.empty((n, 1, image_size, image_size), dtype=np.float64)
    angles = rng.uniform(-0.20, 0.20, size=n)
    scales = rng.uniform(0.80, 1.05, size=n)
    shifts = rng.uniform(-0.08, 0.08, size=(n, 2))
    widths = rng.uniform(0.030, 0.055, size=n)

    for digit in range(10):
        idx = np.nonzero(labels == digit)[0]
        if idx.size == 0:
            continue
        base = np.asarray(_GLYPH_STROKES[digit], dtype=np.float64)  # (S,4)
        ends = base.reshape(-1, 2, 2) - 0.5  # centered endpoints
        cos, sin = np.cos(angles[idx]), np.sin(angles[idx])
        rot = np.stack([np.stack([cos, -sin], -1), np.stack([sin, cos], -1)], -2)  # (B,2,2)
        pts = np.einsum("bij,skj->bski", rot, ends) * scales[idx, None, None, None]
        pts = pts + 0.5 + shifts[idx][:, None, None, :]
        segs = pts.reshape(idx.size, -1, 4)
        dist = _segment_distances(points, segs)  # (B,P)
        ink = np.clip(1.0 - (dist - widths[idx][:, None]) / 0.04, 0.0, 1.0)
        images[idx, 0] = ink.reshape(idx.size, image_size, image_size)

    images += rng.normal(0.0, noise, size=images.shape)
    np.clip(images, 0.0, 1.0, out=images)
    # round-trip through u8 so generated corpora match their IDX serialization
    images = np.floor(images * 255.0 + 0.5) / 255.0
    return Dataset(images.astype(dtype), labels)
