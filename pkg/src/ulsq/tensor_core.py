"""Dense 4-D tensors and the operators the classifiers are assembled from.

A Tensor4 is a numpy array of shape (batch, height, width, channel), C-order
row-major. Training and inference run in float32; gradient checking recomputes
everything in float64. Every operator here is a pure function: inputs are
never modified and the result is a fresh array. Computation keeps the dtype
of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

VALID = "valid"
SAME = "same"

# Alias for documentation purposes; a Tensor4 is an ndarray shaped (n, h, w, c).
Tensor4 = np.ndarray


@dataclass
class ConvKernel:
    """Weights, bias, stride and padding mode of one 2-D convolution.

    weights are laid out (kh, kw, in_channels, out_channels); bias has one
    entry per output channel.
    """

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: str = VALID

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 4:
            raise ShapeError(
                f"kernel weights must be (kh, kw, in_c, out_c), got shape {self.weights.shape}"
            )
        if self.bias.shape != (self.weights.shape[3],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[3]} output channels"
            )
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if self.padding not in (VALID, SAME):
            raise ShapeError(f"padding must be {VALID!r} or {SAME!r}, got {self.padding!r}")

    @property
    def kh(self) -> int:
        return self.weights.shape[0]

    @property
    def kw(self) -> int:
        return self.weights.shape[1]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[2]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[3]

    @property
    def param_count(self) -> int:
        kh, kw, ci, co = self.weights.shape
        return kh * kw * ci * co + co

    def astype(self, dtype) -> "ConvKernel":
        return ConvKernel(self.weights.astype(dtype), self.bias.astype(dtype),
                          self.stride, self.padding)


def _require_tensor4(x, op: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected a (batch, height, width, channel) tensor, got shape {x.shape}")
    return x


def same_pads(extent: int, k: int, stride: int) -> tuple[int, int]:
    """Zero padding (low, high) for same mode; the odd zero goes on the high side."""
    out = -(-extent // stride)  # ceil
    total = max((out - 1) * stride + k - extent, 0)
    lo = total // 2
    return lo, total - lo


def sliding_windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Read-only view of shape (n, oh, ow, kh, kw, c) over all windows of x."""
    x = np.ascontiguousarray(x)
    n, h, w, c = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    sn, sh, sw, sc = x.strides
    return np.lib.stride_tricks.as_strided(
        x,
        (n, oh, ow, kh, kw, c),
        (sn, sh * stride, sw * stride, sh, sw, sc),
        writeable=False,
    )


def pad_same(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    ph = same_pads(x.shape[1], kh, stride)
    pw = same_pads(x.shape[2], kw, stride)
    if ph == (0, 0) and pw == (0, 0):
        return x
    return np.pad(x, ((0, 0), ph, pw, (0, 0)))


def conv2d(x: Tensor4, kernel: ConvKernel) -> Tensor4:
    """Direct 2-D cross-correlation of x with the kernel, plus bias.

    valid padding takes only fully covered windows; same padding zero-pads so
    the output spatial extent is ceil(extent / stride).
    """
    x = _require_tensor4(x, "conv2d")
    if x.shape[3] != kernel.in_channels:
        raise ShapeError(
            f"conv2d: input has {x.shape[3]} channels, kernel expects {kernel.in_channels}"
        )
    s = kernel.stride
    if kernel.padding == SAME:
        x = pad_same(x, kernel.kh, kernel.kw, s)
    if kernel.kh > x.shape[1] or kernel.kw > x.shape[2]:
        raise ShapeError(
            f"conv2d: kernel {kernel.kh}x{kernel.kw} larger than input {x.shape[1]}x{x.shape[2]}"
        )
    win = sliding_windows(x, kernel.kh, kernel.kw, s)
    out = np.tensordot(win, kernel.weights, axes=([3, 4, 5], [0, 1, 2]))
    out += kernel.bias
    return out


def maxpool2d(x: Tensor4, window: int, stride: int) -> Tensor4:
    """Per-channel max over square windows; valid coverage only."""
    x = _require_tensor4(x, "maxpool2d")
    if window < 1 or stride < 1:
        raise ShapeError(f"maxpool2d: window and stride must be >= 1, got {window}, {stride}")
    if window > x.shape[1] or window > x.shape[2]:
        raise ShapeError(
            f"maxpool2d: window {window} larger than input {x.shape[1]}x{x.shape[2]}"
        )
    win = sliding_windows(x, window, window, stride)
    return win.max(axis=(3, 4))


def relu(x: Tensor4) -> Tensor4:
    """Elementwise max(0, x)."""
    return np.maximum(np.asarray(x), 0)


def global_avg_pool(x: Tensor4) -> Tensor4:
    """Mean over the spatial axes, keeping (n, 1, 1, c)."""
    x = _require_tensor4(x, "global_avg_pool")
    if x.shape[1] == 0 or x.shape[2] == 0:
        raise ShapeError("global_avg_pool: empty spatial extent")
    return x.mean(axis=(1, 2), keepdims=True)


def channel_concat(a: Tensor4, b: Tensor4) -> Tensor4:
    """Concatenate along the channel axis; a's channels come first."""
    a = _require_tensor4(a, "channel_concat")
    b = _require_tensor4(b, "channel_concat")
    if a.shape[:3] != b.shape[:3]:
        raise ShapeError(
            f"channel_concat: batch/spatial dims differ, {a.shape} vs {b.shape}"
        )
    return np.concatenate([a, b], axis=3)


def softmax(x: Tensor4) -> Tensor4:
    """Softmax along the channel axis, stabilised by max subtraction."""
    x = _require_tensor4(x, "softmax")
    e = np.exp(x - x.max(axis=3, keepdims=True))
    return e / e.sum(axis=3, keepdims=True)
