"""Dense array kernels: convolution, pooling, matrix multiply, softmax.

Everything in this package operates on plain numpy arrays in row-major
(C-order) float64. Image batches use the NCHW layout
``[batch, channels, height, width]``. Float64 is the reference precision
so finite-difference gradient checks are meaningful; callers may cast to
float32 for speed at their own risk.

Convolution is cross-correlation (no kernel flip), zero-padded equally on
all four sides, matching the usual deep-learning convention. All kernels
are pure functions with a fixed reduction order, so repeated calls on the
same inputs are bitwise identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_f64(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    return arr


def conv_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    """Output extent floor((size + 2*padding - kernel) / stride) + 1."""
    return (size + 2 * padding - kernel) // stride + 1


@dataclass(frozen=True)
class Conv2DSpec:
    """Shape contract for a 2-D convolution.

    ``padding`` is zero-padding applied to all four sides. Output spatial
    extents follow ``conv_extent`` and must be >= 1 for any accepted input.
    """

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        for field in ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride"):
            if getattr(self, field) < 1:
                raise ValueError(f"Conv2DSpec.{field} must be positive, got {getattr(self, field)}")
        if self.padding < 0:
            raise ValueError(f"Conv2DSpec.padding must be non-negative, got {self.padding}")

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        oh = conv_extent(h, self.kernel_h, self.stride, self.padding)
        ow = conv_extent(w, self.kernel_w, self.stride, self.padding)
        if oh < 1 or ow < 1:
            raise ValueError(
                f"non-positive convolution output extent {oh}x{ow} for input "
                f"{h}x{w} with {self}"
            )
        return oh, ow

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Unfold NCHW input into columns of shape [C*kh*kw, N*oh*ow].

    Column j enumerates output positions with batch slowest, then rows,
    then cols; row i enumerates kernel taps with channel slowest.
    """
    n, c, h, w = x.shape
    oh = conv_extent(h, kh, stride, padding)
    ow = conv_extent(w, kw, stride, padding)
    if padding > 0:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.transpose(1, 2, 3, 0, 4, 5).reshape(c * kh * kw, n * oh * ow)


def col2im(
    cols: np.ndarray, x_shape: tuple[int, int, int, int], kh: int, kw: int, stride: int, padding: int
) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back to NCHW."""
    n, c, h, w = x_shape
    oh = conv_extent(h, kh, stride, padding)
    ow = conv_extent(w, kw, stride, padding)
    cols = cols.reshape(c, kh, kw, n, oh, ow).transpose(3, 0, 1, 2, 4, 5)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    if padding > 0:
        out = out[:, :, padding : padding + h, padding : padding + w]
    return out


def conv2d(x, weights, bias, spec: Conv2DSpec) -> np.ndarray:
    """Cross-correlate a [N,C,H,W] batch with [O,C,kh,kw] filters plus bias.

    Each output element is the inner product of one filter with its
    zero-padded receptive field, plus that filter's bias.
    """
    x = _as_f64(x, "input")
    weights = _as_f64(weights, "weights")
    bias = _as_f64(bias, "bias")
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be [N,C,H,W], got shape {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ValueError(
            f"conv2d input has {x.shape[1]} channels but spec expects {spec.in_channels} "
            f"(input shape {x.shape})"
        )
    if weights.shape != spec.weight_shape:
        raise ValueError(
            f"conv2d weights shape {weights.shape} does not match spec shape {spec.weight_shape}"
        )
    if bias.shape != (spec.out_channels,):
        raise ValueError(f"conv2d bias shape {bias.shape} != ({spec.out_channels},)")
    n, _, h, w = x.shape
    oh, ow = spec.out_hw(h, w)
    cols = im2col(x, spec.kernel_h, spec.kernel_w, spec.stride, spec.padding)
    out = weights.reshape(spec.out_channels, -1) @ cols
    out += bias[:, None]
    return out.reshape(spec.out_channels, n, oh, ow).transpose(1, 0, 2, 3)


def _pool_prep(x, window: int, stride: int):
    x = _as_f64(x, "input")
    if x.ndim != 4:
        raise ValueError(f"pooling input must be [N,C,H,W], got shape {x.shape}")
    if window < 1 or stride < 1:
        raise ValueError(f"window and stride must be positive, got {window}, {stride}")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ValueError(f"pooling window {window} larger than input {h}x{w}")
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    return x, n, c, h, w, oh, ow


def _pool_windows(x, window: int, stride: int, n, c, oh, ow) -> np.ndarray:
    """Gather window contents as [N,C,oh,ow,window*window], row-major taps."""
    vals = np.empty((n, c, oh, ow, window * window), dtype=np.float64)
    for i in range(window):
        for j in range(window):
            vals[..., i * window + j] = x[
                :, :, i : i + stride * oh : stride, j : j + stride * ow : stride
            ]
    return vals


def maxpool2d(x, window: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Max over each window; also return winner flat indices into ``x``.

    Ties break toward the lowest flat index (window taps are enumerated in
    row-major order, which matches global row-major order). The index
    array feeds the pooling backward pass.
    """
    x, n, c, h, w, oh, ow = _pool_prep(x, window, stride)
    vals = _pool_windows(x, window, stride, n, c, oh, ow)
    argk = np.argmax(vals, axis=-1)
    out = np.take_along_axis(vals, argk[..., None], axis=-1)[..., 0]
    wi, wj = argk // window, argk % window
    rows = np.arange(oh, dtype=np.int64)[None, None, :, None] * stride + wi
    cols = np.arange(ow, dtype=np.int64)[None, None, None, :] * stride + wj
    base = (np.arange(n, dtype=np.int64)[:, None] * c + np.arange(c, dtype=np.int64)[None, :]) * (h * w)
    argmax = base[:, :, None, None] + rows * w + cols
    return out, argmax


def maxpool2d_backward(grad_out, argmax, x_shape: tuple[int, int, int, int]) -> np.ndarray:
    """Scatter output gradients to the winning input positions."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != argmax.shape:
        raise ValueError(f"grad shape {grad_out.shape} != argmax shape {argmax.shape}")
    dx = np.zeros(int(np.prod(x_shape)), dtype=np.float64)
    np.add.at(dx, argmax.ravel(), grad_out.ravel())
    return dx.reshape(x_shape)


def avgpool2d(x, window: int, stride: int) -> np.ndarray:
    """Mean over each window."""
    x, n, c, h, w, oh, ow = _pool_prep(x, window, stride)
    vals = _pool_windows(x, window, stride, n, c, oh, ow)
    return vals.mean(axis=-1)


def avgpool2d_backward(grad_out, window: int, stride: int, x_shape: tuple[int, int, int, int]) -> np.ndarray:
    """Distribute each output gradient uniformly over its window."""
    n, c, h, w = x_shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != (n, c, oh, ow):
        raise ValueError(f"grad shape {grad_out.shape} != expected {(n, c, oh, ow)}")
    share = grad_out / (window * window)
    dx = np.zeros(x_shape, dtype=np.float64)
    for i in range(window):
        for j in range(window):
            dx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += share
    return dx


def matmul(a, b) -> np.ndarray:
    """Matrix product of 2-D arrays with validated inner dimensions."""
    a = _as_f64(a, "a")
    b = _as_f64(b, "b")
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def softmax(logits) -> np.ndarray:
    """Row-wise softmax of a [N,K] array, stabilized by max subtraction.

    Rows of the result are positive and sum to 1; the per-row argmax is
    preserved and adding a constant to a row leaves it unchanged.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < 1:
        raise ValueError(f"softmax expects a [N,K] array with K >= 1, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise ValueError("softmax input contains non-finite values")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
