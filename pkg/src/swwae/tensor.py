"""Dense tensor primitives and the binary tensor snapshot format.

Every value in the library is a C-contiguous (row-major) numpy array in one
of two precisions, float32 or float64, fixed per run.  Activations use the
NCHW layout (batch, channel, height, width); convolution weights use
(out_channels, in_channels, kernel_h, kernel_w).

Randomness is pinned to numpy's PCG64 so that identical (shape, stddev,
seed) arguments produce bit-identical tensors on every platform.
"""

from __future__ import annotations

import struct

import numpy as np

from .exceptions import ShapeError

PRECISIONS = {"f32": np.float32, "f64": np.float64}
_PRECISION_TAG = {"f32": 0, "f64": 1}
_TAG_PRECISION = {v: k for k, v in _PRECISION_TAG.items()}

SNAPSHOT_MAGIC = b"SWTN"


def precision_of(array: np.ndarray) -> str:
    if array.dtype == np.float32:
        return "f32"
    if array.dtype == np.float64:
        return "f64"
    raise ShapeError(f"unsupported dtype {array.dtype}; expected float32 or float64")


def check_shape(shape) -> tuple[int, ...]:
    """Validate a shape tuple: non-empty, all extents >= 1."""
    dims = tuple(int(d) for d in shape)
    if len(dims) == 0:
        raise ShapeError("shape must have at least one dimension")
    if any(d < 1 for d in dims):
        raise ShapeError(f"shape {dims} has a non-positive extent")
    return dims


def filled(shape, value: float, dtype=np.float32) -> np.ndarray:
    """Tensor of the given shape with every element equal to `value`."""
    return np.full(check_shape(shape), value, dtype=dtype)


def gaussian(shape, stddev: float, seed: int, dtype=np.float32) -> np.ndarray:
    """I.i.d. zero-mean normal samples from a seeded PCG64 stream.

    Samples are drawn in float64 and cast, so the f32 and f64 variants of
    the same (shape, stddev, seed) agree to rounding.
    """
    if stddev <= 0:
        raise ValueError(f"stddev must be positive, got {stddev}")
    dims = check_shape(shape)
    rng = np.random.Generator(np.random.PCG64(seed))
    return (rng.standard_normal(int(np.prod(dims))) * stddev).reshape(dims).astype(dtype)


def axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Elementwise alpha * x + y."""
    if x.shape != y.shape:
        raise ShapeError(f"axpy shape mismatch: {x.shape} vs {y.shape}")
    return alpha * x + y


def sum_sq_diff(a: np.ndarray, b: np.ndarray) -> float:
    """Sum over all elements of (a - b)**2, not normalized by element count."""
    if a.shape != b.shape:
        raise ShapeError(f"sum_sq_diff shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sum(d * d))


def flat_index(coord, shape) -> int:
    """Row-major flat offset of a coordinate, e.g. ((n*C + c)*H + h)*W + w."""
    return int(np.ravel_multi_index(tuple(coord), check_shape(shape)))


def unflat_index(index: int, shape) -> tuple[int, ...]:
    """Inverse of flat_index."""
    return tuple(int(c) for c in np.unravel_index(index, check_shape(shape)))


def save_tensor(array: np.ndarray, path) -> None:
    """Write a tensor snapshot.

    Layout: magic "SWTN", u8 precision tag (0=f32, 1=f64), u8 rank,
    rank x u32 little-endian dims, raw little-endian element data.
    """
    tag = _PRECISION_TAG[precision_of(array)]
    dims = check_shape(array.shape)
    if len(dims) > 255:
        raise ShapeError("tensor rank exceeds snapshot format limit")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<BB", tag, len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        fh.write(np.ascontiguousarray(array).astype(array.dtype.newbyteorder("<")).tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SNAPSHOT_MAGIC:
        raise ShapeError(f"{path}: bad snapshot magic {blob[:4]!r}")
    tag, rank = struct.unpack_from("<BB", blob, 4)
    if tag not in _TAG_PRECISION:
        raise ShapeError(f"{path}: unknown precision tag {tag}")
    dims = struct.unpack_from(f"<{rank}I", blob, 6)
    dtype = np.dtype(PRECISIONS[_TAG_PRECISION[tag]]).newbyteorder("<")
    offset = 6 + 4 * rank
    expected = int(np.prod(dims)) * dtype.itemsize
    data = blob[offset:]
    if len(data) != expected:
        raise ShapeError(
            f"{path}: payload is {len(data)} bytes, expected {expected} for dims {dims}"
        )
    array = np.frombuffer(data, dtype=dtype).reshape(dims)
    return np.ascontiguousarray(array.astype(dtype.newbyteorder("=")))
