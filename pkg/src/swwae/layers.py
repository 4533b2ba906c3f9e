"""Forward and backward kernels for every layer in the network.

Convolution here means cross-correlation (no kernel flip), the convention
of the mainstream frameworks, so a deconvolution weight tensor pairs with
its convolution counterpart without reindexing.  Deconvolution is the exact
adjoint of the paired convolution's linear map.

Max-pooling is non-overlapping (stride == window) and records a switch map:
for each pooled element, the row-major within-window index of the maximum,
ties broken toward the first occurrence.  Unpooling scatters pooled values
back either to those recorded locations ("known" switches) or to the
top-left corner of each window ("fixed" switches).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .exceptions import ShapeError, SwitchError


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one convolution layer and of its mirrored deconvolution."""

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    pad: int = 0
    has_bias: bool = True

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel_h, self.kernel_w) < 1:
            raise ShapeError(f"conv spec has non-positive extents: {self}")
        if self.stride < 1 or self.pad < 0:
            raise ShapeError(f"conv spec has invalid stride/pad: {self}")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    def out_size(self, in_h: int, in_w: int) -> tuple[int, int]:
        """Spatial output extent; exact division by the stride is enforced."""
        num_h = in_h + 2 * self.pad - self.kernel_h
        num_w = in_w + 2 * self.pad - self.kernel_w
        if num_h < 0 or num_w < 0 or num_h % self.stride or num_w % self.stride:
            raise ShapeError(
                f"conv output extent is not a positive integer for input "
                f"{in_h}x{in_w} with {self}"
            )
        return num_h // self.stride + 1, num_w // self.stride + 1

    def transposed_out_size(self, in_h: int, in_w: int) -> tuple[int, int]:
        out_h = (in_h - 1) * self.stride - 2 * self.pad + self.kernel_h
        out_w = (in_w - 1) * self.stride - 2 * self.pad + self.kernel_w
        if out_h < 1 or out_w < 1:
            raise ShapeError(f"deconv output extent collapses for {in_h}x{in_w} with {self}")
        return out_h, out_w


class LayerGrad(NamedTuple):
    grad_input: np.ndarray
    grad_weights: Optional[np.ndarray] = None
    grad_bias: Optional[np.ndarray] = None


def _check_input(x: np.ndarray, spec: ConvSpec, channels: int) -> None:
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW input, got shape {x.shape}")
    if x.shape[1] != channels:
        raise ShapeError(f"input has {x.shape[1]} channels, spec expects {channels}")


def _check_weights(w: np.ndarray, spec: ConvSpec) -> None:
    if w.shape != spec.weight_shape:
        raise ShapeError(f"weights shape {w.shape} does not match spec {spec.weight_shape}")


def im2col(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Unfold (N,C,H,W) into (N, C*kH*kW, outH*outW) patch columns."""
    n, c, h, w = x.shape
    oh, ow = spec.out_size(h, w)
    if spec.pad:
        x = np.pad(x, ((0, 0), (0, 0), (spec.pad, spec.pad), (spec.pad, spec.pad)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (spec.kernel_h, spec.kernel_w), axis=(2, 3))
    windows = windows[:, :, :: spec.stride, :: spec.stride]  # (N,C,oh,ow,kh,kw)
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * spec.kernel_h * spec.kernel_w, oh * ow)
    return np.ascontiguousarray(cols)


def col2im(cols: np.ndarray, x_shape, spec: ConvSpec) -> np.ndarray:
    """Adjoint of im2col: scatter-add patch columns back onto (N,C,H,W)."""
    n, c, h, w = x_shape
    oh, ow = spec.out_size(h, w)
    cols = cols.reshape(n, c, spec.kernel_h, spec.kernel_w, oh, ow)
    hp, wp = h + 2 * spec.pad, w + 2 * spec.pad
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    s = spec.stride
    for i in range(spec.kernel_h):
        for j in range(spec.kernel_w):
            out[:, :, i : i + s * oh : s, j : j + s * ow : s] += cols[:, :, i, j]
    if spec.pad:
        out = out[:, :, spec.pad : spec.pad + h, spec.pad : spec.pad + w]
    return np.ascontiguousarray(out)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray], spec: ConvSpec) -> np.ndarray:
    """out(n,o,y,x) = b_o + sum_{c,i,j} in(n,c,y*s-pad+i, x*s-pad+j) * w(o,c,i,j)."""
    _check_input(x, spec, spec.in_channels)
    _check_weights(w, spec)
    n = x.shape[0]
    oh, ow = spec.out_size(x.shape[2], x.shape[3])
    cols = im2col(x, spec)
    w2 = w.reshape(spec.out_channels, -1)
    out = np.matmul(w2, cols).reshape(n, spec.out_channels, oh, ow)
    if b is not None:
        if b.shape != (spec.out_channels,):
            raise ShapeError(f"bias shape {b.shape}, expected ({spec.out_channels},)")
        out += b[None, :, None, None]
    return out


def conv2d_backward(x: np.ndarray, w: np.ndarray, spec: ConvSpec, grad_out: np.ndarray) -> LayerGrad:
    _check_input(x, spec, spec.in_channels)
    _check_weights(w, spec)
    n = x.shape[0]
    oh, ow = spec.out_size(x.shape[2], x.shape[3])
    if grad_out.shape != (n, spec.out_channels, oh, ow):
        raise ShapeError(f"grad_out shape {grad_out.shape}, expected {(n, spec.out_channels, oh, ow)}")
    g2 = grad_out.reshape(n, spec.out_channels, oh * ow)
    cols = im2col(x, spec)
    w2 = w.reshape(spec.out_channels, -1)
    grad_w = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    grad_x = col2im(np.matmul(w2.T, g2), x.shape, spec)
    grad_b = grad_out.sum(axis=(0, 2, 3)) if spec.has_bias else None
    return LayerGrad(grad_x, grad_w, grad_b)


def deconv2d_forward(u: np.ndarray, w: np.ndarray, b: Optional[np.ndarray], spec: ConvSpec) -> np.ndarray:
    """Transposed convolution: the adjoint of conv2d_forward with the same spec.

    Maps out_channels back to in_channels; the output extent is
    (in-1)*stride - 2*pad + kernel, the paired convolution's input extent.
    """
    _check_input(u, spec, spec.out_channels)
    _check_weights(w, spec)
    n = u.shape[0]
    oh, ow = spec.transposed_out_size(u.shape[2], u.shape[3])
    u2 = u.reshape(n, spec.out_channels, -1)
    w2 = w.reshape(spec.out_channels, -1)
    out = col2im(np.matmul(w2.T, u2), (n, spec.in_channels, oh, ow), spec)
    if b is not None:
        if b.shape != (spec.in_channels,):
            raise ShapeError(f"deconv bias shape {b.shape}, expected ({spec.in_channels},)")
        out += b[None, :, None, None]
    return out


def deconv2d_backward(u: np.ndarray, w: np.ndarray, spec: ConvSpec, grad_out: np.ndarray) -> LayerGrad:
    """Reverse-mode rules dual to conv2d_backward; grad_input is a plain convolution."""
    _check_input(u, spec, spec.out_channels)
    _check_weights(w, spec)
    n = u.shape[0]
    oh, ow = spec.transposed_out_size(u.shape[2], u.shape[3])
    if grad_out.shape != (n, spec.in_channels, oh, ow):
        raise ShapeError(f"grad_out shape {grad_out.shape}, expected {(n, spec.in_channels, oh, ow)}")
    gcols = im2col(grad_out, spec)
    w2 = w.reshape(spec.out_channels, -1)
    grad_u = np.matmul(w2, gcols).reshape(u.shape)
    u2 = u.reshape(n, spec.out_channels, -1)
    grad_w = np.matmul(u2, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    grad_b = grad_out.sum(axis=(0, 2, 3)) if spec.has_bias else None
    return LayerGrad(grad_u, grad_w, grad_b)


def _pool_geometry(shape, kh: int, kw: int, stride: int) -> tuple[int, int]:
    if not (kh == kw == stride):
        raise ShapeError(f"pooling must be non-overlapping: window {kh}x{kw}, stride {stride}")
    n, c, h, w = shape
    if h % stride or w % stride:
        raise ShapeError(f"spatial extents {h}x{w} not divisible by pooling stride {stride}")
    return h // stride, w // stride


def _windowed(x: np.ndarray, k: int) -> np.ndarray:
    """View (N,C,H,W) as (N,C,oh,ow,k*k) with row-major window flattening."""
    n, c, h, w = x.shape
    return x.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h // k, w // k, k * k
    )


def _unwindowed(win: np.ndarray, out_shape) -> np.ndarray:
    n, c, h, w = out_shape
    k2 = win.shape[-1]
    k = int(round(k2 ** 0.5))
    return np.ascontiguousarray(
        win.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    )


def maxpool_forward(x: np.ndarray, kh: int, kw: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max pooling; returns (pooled, switches).

    switches[n,c,y,x] is the flat within-window index (0..kh*kw-1) of the
    selected maximum, first occurrence on ties.
    """
    _pool_geometry(x.shape, kh, kw, stride)
    win = _windowed(x, stride)
    switches = win.argmax(axis=-1)
    pooled = np.take_along_axis(win, switches[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(pooled), switches


def _check_switches(switches: np.ndarray, pooled_shape, k2: int) -> None:
    if switches.shape != tuple(pooled_shape):
        raise ShapeError(f"switch map shape {switches.shape}, expected {tuple(pooled_shape)}")
    if switches.size and (switches.min() < 0 or switches.max() >= k2):
        raise SwitchError(f"switch index out of range [0, {k2})")


def maxpool_backward(grad_out: np.ndarray, switches: np.ndarray, input_shape, kh: int, kw: int, stride: int) -> np.ndarray:
    """Route each upstream gradient to the recorded argmax position."""
    _pool_geometry(input_shape, kh, kw, stride)
    _check_switches(switches, grad_out.shape, kh * kw)
    n, c, oh, ow = grad_out.shape
    win = np.zeros((n, c, oh, ow, kh * kw), dtype=grad_out.dtype)
    np.put_along_axis(win, switches[..., None], grad_out[..., None], axis=-1)
    return _unwindowed(win, input_shape)


def unpool_known_forward(y: np.ndarray, switches: np.ndarray, kh: int, kw: int, stride: int, out_shape) -> np.ndarray:
    """Place each pooled element at its recorded in-window location, zeros elsewhere."""
    out_shape = tuple(out_shape)
    oh, ow = _pool_geometry(out_shape, kh, kw, stride)
    if y.shape != (out_shape[0], out_shape[1], oh, ow):
        raise ShapeError(f"pooled input shape {y.shape} inconsistent with output {out_shape}")
    _check_switches(switches, y.shape, kh * kw)
    win = np.zeros(y.shape + (kh * kw,), dtype=y.dtype)
    np.put_along_axis(win, switches[..., None], y[..., None], axis=-1)
    return _unwindowed(win, out_shape)


def unpool_fixed_forward(y: np.ndarray, kh: int, kw: int, stride: int, out_shape) -> np.ndarray:
    """Place each pooled element at the top-left corner of its window."""
    return unpool_known_forward(y, np.zeros(y.shape, dtype=np.int64), kh, kw, stride, out_shape)


def unpool_backward(grad_out: np.ndarray, switches: Optional[np.ndarray], kh: int, kw: int, stride: int) -> np.ndarray:
    """Adjoint of the unpooling scatter: gather grad_out at the routed locations.

    `switches=None` selects the fixed top-left routing.  The switches
    themselves carry no gradient.
    """
    _pool_geometry(grad_out.shape, kh, kw, stride)
    win = _windowed(grad_out, stride)
    if switches is None:
        switches = np.zeros(win.shape[:-1], dtype=np.int64)
    _check_switches(switches, win.shape[:-1], kh * kw)
    return np.ascontiguousarray(np.take_along_axis(win, switches[..., None], axis=-1)[..., 0])


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Masked upstream gradient; the subgradient at exactly 0 is 0."""
    if grad_out.shape != x.shape:
        raise ShapeError(f"relu grad shape {grad_out.shape} vs input {x.shape}")
    return np.where(x > 0, grad_out, 0)


def inner_product_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-row affine map on the flattened input: out = flat(x) @ w.T + b."""
    n = x.shape[0]
    flat = x.reshape(n, -1)
    if w.ndim != 2 or w.shape[1] != flat.shape[1]:
        raise ShapeError(f"weight shape {w.shape} incompatible with input features {flat.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape}, expected ({w.shape[0]},)")
    return flat @ w.T + b


def inner_product_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray) -> LayerGrad:
    n = x.shape[0]
    flat = x.reshape(n, -1)
    if grad_out.shape != (n, w.shape[0]):
        raise ShapeError(f"grad_out shape {grad_out.shape}, expected {(n, w.shape[0])}")
    grad_x = (grad_out @ w).reshape(x.shape)
    grad_w = grad_out.T @ flat
    grad_b = grad_out.sum(axis=0)
    return LayerGrad(grad_x, grad_w, grad_b)


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy under a softmax, with the stable max-subtraction form.

    Returns (loss, grad_logits) where grad = (softmax - onehot) / batch.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (batch, classes), got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape}, expected ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1
    grad /= n
    return loss, grad.astype(logits.dtype)


def weighted_l2_loss(pred: np.ndarray, target: np.ndarray, gamma: float) -> tuple[float, np.ndarray]:
    """gamma * sum((pred-target)^2), averaged over batch rows only.

    The target side is treated as a constant: the returned gradient is for
    the prediction branch alone, 2*gamma*(pred-target)/batch.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"l2 loss shape mismatch: {pred.shape} vs {target.shape}")
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    n = pred.shape[0]
    diff = pred - target
    loss = gamma * float(np.sum(diff * diff)) / n
    grad = (2.0 * gamma / n) * diff
    return loss, grad.astype(pred.dtype)
