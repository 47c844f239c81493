"""Differentiable kernels: conv2d, maxpool2d, dense, relu, and fused
softmax/cross-entropy, each with a hand-derived backward pass.

Conventions:
  * all values are float64 ndarrays in NHWC row-major layout,
  * convolution/pooling use valid padding: out = floor((in - k) / stride) + 1,
  * every backward computes the exact partials of sum(upstream * forward(...)).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError


@dataclass
class ConvParams:
    """Convolution weights: kernels (kh, kw, in_channels, out_channels) and bias."""

    kernels: np.ndarray
    bias: np.ndarray
    stride: tuple[int, int] = (1, 1)
    padding: str = "valid"

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.kernels.ndim != 4:
            raise ShapeError(f"kernels must be 4-d (kh, kw, cin, cout), got {self.kernels.shape}")
        if self.bias.shape != (self.kernels.shape[3],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match out_channels {self.kernels.shape[3]}")
        if self.padding != "valid":
            raise ValidationError(f"unsupported padding mode {self.padding!r}")
        sh, sw = self.stride
        if sh < 1 or sw < 1:
            raise ValidationError(f"stride must be positive, got {self.stride}")


@dataclass
class PoolSwitches:
    """Argmax bookkeeping from maxpool2d: per output element, the flat index of
    the winning input element (first occurrence on ties), plus the input shape."""

    indices: np.ndarray
    input_shape: tuple[int, ...]


def _out_dim(size: int, k: int, s: int) -> int:
    return (size - k) // s + 1


def _patches(x: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Strided view of all (kh, kw) windows: (n, oh, ow, kh, kw, c). No copy."""
    n, h, w, c = x.shape
    oh, ow = _out_dim(h, kh, sh), _out_dim(w, kw, sw)
    stn, sth, stw, stc = x.strides
    return np.lib.stride_tricks.as_strided(
        x,
        shape=(n, oh, ow, kh, kw, c),
        strides=(stn, sth * sh, stw * sw, sth, stw, stc),
    )


def _check_4d(x: np.ndarray, name: str) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-d NHWC, got shape {x.shape}")
    return x


def conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Valid-padding cross-correlation.

    out[n,y,x,f] = bias[f] + sum_{dy,dx,c} x[n, y*sh+dy, x*sw+dx, c] * kernels[dy,dx,c,f]
    """
    x = _check_4d(x, "input")
    n, h, w, c = x.shape
    kh, kw, cin, cout = p.kernels.shape
    if c != cin:
        raise ShapeError(f"input has {c} channels but kernels expect {cin}")
    if h < kh or w < kw:
        raise ShapeError(f"window ({kh},{kw}) larger than input ({h},{w})")
    sh, sw = p.stride
    oh, ow = _out_dim(h, kh, sh), _out_dim(w, kw, sw)
    cols = _patches(x, kh, kw, sh, sw).reshape(n * oh * ow, kh * kw * cin)
    out = cols @ p.kernels.reshape(kh * kw * cin, cout)
    out += p.bias
    return out.reshape(n, oh, ow, cout)


def conv2d_grad(x: np.ndarray, p: ConvParams,
                upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of sum(upstream * conv2d(x, p)) w.r.t. input, kernels, and bias."""
    x = _check_4d(x, "input")
    upstream = _check_4d(upstream, "upstream")
    n, h, w, c = x.shape
    kh, kw, cin, cout = p.kernels.shape
    if c != cin:
        raise ShapeError(f"input has {c} channels but kernels expect {cin}")
    sh, sw = p.stride
    oh, ow = _out_dim(h, kh, sh), _out_dim(w, kw, sw)
    if upstream.shape != (n, oh, ow, cout):
        raise ShapeError(
            f"upstream shape {upstream.shape} does not match conv output {(n, oh, ow, cout)}")

    up = upstream.reshape(n * oh * ow, cout)
    cols = _patches(x, kh, kw, sh, sw).reshape(n * oh * ow, kh * kw * cin)
    d_kernels = (cols.T @ up).reshape(kh, kw, cin, cout)
    d_bias = upstream.sum(axis=(0, 1, 2))

    # Scatter upstream back through each kernel tap; overlapping windows accumulate.
    dcols = (up @ p.kernels.reshape(kh * kw * cin, cout).T).reshape(n, oh, ow, kh, kw, cin)
    d_input = np.zeros_like(x)
    for dy in range(kh):
        for dx in range(kw):
            d_input[:, dy:dy + sh * oh:sh, dx:dx + sw * ow:sw, :] += dcols[:, :, :, dy, dx, :]
    return d_input, d_kernels, d_bias


def maxpool2d(x: np.ndarray, window: tuple[int, int] = (2, 2),
              stride: tuple[int, int] = (2, 2)) -> tuple[np.ndarray, PoolSwitches]:
    """Max pooling; trailing rows/columns not covered by a full window are dropped.

    Returns the pooled tensor and the argmax switches needed for the backward pass.
    """
    x = _check_4d(x, "input")
    n, h, w, c = x.shape
    wh, ww = window
    if h < wh or w < ww:
        raise ShapeError(f"window ({wh},{ww}) larger than input ({h},{w})")
    sh, sw = stride
    oh, ow = _out_dim(h, wh, sh), _out_dim(w, ww, sw)
    win = _patches(x, wh, ww, sh, sw).reshape(n, oh, ow, wh * ww, c)
    arg = win.argmax(axis=3)  # first max in row-major window order
    out = np.take_along_axis(win, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    dy, dx = arg // ww, arg % ww
    iy = np.arange(oh)[None, :, None, None] * sh + dy
    ix = np.arange(ow)[None, None, :, None] * sw + dx
    nn = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, None, None, :]
    flat = ((nn * h + iy) * w + ix) * c + cc
    return out, PoolSwitches(indices=flat, input_shape=(n, h, w, c))


def maxpool2d_grad(switches: PoolSwitches, upstream: np.ndarray) -> np.ndarray:
    """Route upstream values to the recorded argmax positions (accumulating)."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != switches.indices.shape:
        raise ShapeError(
            f"upstream shape {upstream.shape} does not match pooled shape {switches.indices.shape}")
    d_input = np.zeros(int(np.prod(switches.input_shape)), dtype=np.float64)
    np.add.at(d_input, switches.indices.ravel(), upstream.ravel())
    return d_input.reshape(switches.input_shape)


def dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map: out[n,j] = bias[j] + sum_i x[n,i] * weights[i,j]."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.ndim != 2 or weights.ndim != 2:
        raise ShapeError(f"dense expects 2-d input/weights, got {x.shape} and {weights.shape}")
    if x.shape[1] != weights.shape[0]:
        raise ShapeError(f"inner dimensions disagree: input {x.shape} vs weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"bias shape {bias.shape} does not match output width {weights.shape[1]}")
    return x @ weights + bias


def dense_grad(x: np.ndarray, weights: np.ndarray,
               upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of sum(upstream * dense(x, weights, bias))."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (x.shape[0], weights.shape[1]):
        raise ShapeError(
            f"upstream shape {upstream.shape} does not match ({x.shape[0]}, {weights.shape[1]})")
    d_input = upstream @ weights.T
    d_weights = x.T @ upstream
    d_bias = upstream.sum(axis=0)
    return d_input, d_weights, d_bias


def relu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise max(0, x); the mask records x > 0 (derivative at 0 is 0)."""
    x = np.asarray(x, dtype=np.float64)
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_grad(mask: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != mask.shape:
        raise ShapeError(f"upstream shape {upstream.shape} does not match mask {mask.shape}")
    return np.where(mask, upstream, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for stability."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Fused softmax and sparse cross-entropy, reduced by mean over the batch.

    Returns (loss, d_logits) where d_logits[n] = (softmax(logits[n]) - onehot(label_n)) / batch.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (batch, classes), got {logits.shape}")
    n, num_classes = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValidationError("labels must be integers")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError(f"labels must lie in [0, {num_classes})")

    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(z)
    loss = float(-log_probs[np.arange(n), labels].mean())

    d_logits = e / z
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    return loss, d_logits
