"""Shared resampling primitives: reflection indexing, bilinear sampling, resizing,
and separable Gaussian smoothing.

Bilinear work is split into a geometry-only SamplePlan (gather indices plus
fractional weights) and a cheap apply step, so fixed-geometry operators can
reuse one plan across many images. Blending uses the lerp form
v0 + f*(v1 - v0), which keeps constant inputs and on-grid samples exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ValidationError


def reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Fold integer indices into [0, n) by reflection with edge repeat.

    Pattern for n=4: ... d c b a | a b c d | d c b a ...
    """
    if n == 1:
        return np.zeros_like(idx)
    out = np.array(idx, copy=True)
    bad = (out < 0) | (out >= n)
    if bad.any():
        m = np.mod(out[bad], 2 * n)
        out[bad] = np.where(m >= n, 2 * n - 1 - m, m)
    return out


@dataclass
class SamplePlan:
    """Flat gather indices of the four bilinear neighbors (stacked 4 x m, in
    00/01/10/11 order) plus fractional weights."""

    neighbors: np.ndarray
    fy: np.ndarray
    fx: np.ndarray


def build_plan(h: int, w: int, ys: np.ndarray, xs: np.ndarray,
               border: str = "reflect") -> SamplePlan:
    y0f = np.floor(ys)
    x0f = np.floor(xs)
    fy = (ys - y0f).astype(np.float32)
    fx = (xs - x0f).astype(np.float32)
    y0 = y0f.astype(np.int64)
    x0 = x0f.astype(np.int64)
    y1 = y0 + 1
    x1 = x0 + 1
    if border == "reflect":
        y0, y1 = reflect_index(y0, h), reflect_index(y1, h)
        x0, x1 = reflect_index(x0, w), reflect_index(x1, w)
    elif border == "clamp":
        y0, y1 = np.clip(y0, 0, h - 1), np.clip(y1, 0, h - 1)
        x0, x1 = np.clip(x0, 0, w - 1), np.clip(x1, 0, w - 1)
    else:
        raise ValidationError(f"unknown border mode {border!r}")
    neighbors = np.empty((4, len(fy)), dtype=np.intp)
    yw0 = y0 * w
    yw1 = y1 * w
    np.add(yw0, x0, out=neighbors[0])
    np.add(yw0, x1, out=neighbors[1])
    np.add(yw1, x0, out=neighbors[2])
    np.add(yw1, x1, out=neighbors[3])
    return SamplePlan(neighbors=neighbors, fy=fy, fx=fx)


def apply_plan(img: np.ndarray, plan: SamplePlan) -> np.ndarray:
    """Sample a (h, w) or (h, w, c) float image; returns (m,) or (m, c)."""
    if img.dtype.kind != "f":
        img = img.astype(np.float64)
    if img.ndim == 3:
        flat = img.reshape(-1, img.shape[2])
        fy = plan.fy[:, None]
        fx = plan.fx[:, None]
    else:
        flat = img.reshape(-1)
        fy = plan.fy
        fx = plan.fx
    # corner-by-corner lerp keeps the live temporaries small
    top = np.take(flat, plan.neighbors[1], axis=0)
    v00 = np.take(flat, plan.neighbors[0], axis=0)
    top -= v00
    top *= fx
    top += v00
    bot = np.take(flat, plan.neighbors[3], axis=0)
    v10 = np.take(flat, plan.neighbors[2], axis=0)
    bot -= v10
    bot *= fx
    bot += v10
    bot -= top
    bot *= fy
    bot += top
    return bot


def bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray,
                    border: str = "reflect") -> np.ndarray:
    """Sample img at fractional coordinates (ys, xs) with bilinear interpolation.

    img is (h, w) or (h, w, c); ys/xs are flat float arrays of equal length.
    Out-of-bounds neighbors are reflected or clamped per `border`.
    """
    h, w = img.shape[:2]
    return apply_plan(img, build_plan(h, w, ys, xs, border))


@lru_cache(maxsize=128)
def _resize_plan(in_h: int, in_w: int, out_h: int, out_w: int) -> SamplePlan:
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    return build_plan(in_h, in_w, np.repeat(ys, out_w), np.tile(xs, out_h), border="clamp")


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (h, w[, c]) to (out_h, out_w[, c]) with half-pixel-center bilinear.

    A same-size resize is an exact identity.
    """
    if out_h < 1 or out_w < 1:
        raise ValidationError("output dimensions must be positive")
    h, w = img.shape[:2]
    flat = apply_plan(img, _resize_plan(h, w, out_h, out_w))
    if img.ndim == 3:
        return flat.reshape(out_h, out_w, img.shape[2])
    return flat.reshape(out_h, out_w)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps truncated at 3 sigma."""
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    radius = max(1, int(round(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


@lru_cache(maxsize=64)
def _blur_matrix(n: int, sigma: float, dtype: str) -> np.ndarray:
    """Dense 1-D convolution matrix with reflected borders folded in, so the
    whole smoothing pass becomes two matmuls."""
    k = gaussian_kernel1d(sigma)
    radius = (len(k) - 1) // 2
    mat = np.zeros((n, n))
    cols = reflect_index(np.arange(n)[:, None] + np.arange(-radius, radius + 1)[None, :], n)
    np.add.at(mat, (np.repeat(np.arange(n), len(k)), cols.ravel()),
              np.tile(k, n))
    return mat.astype(dtype)


def gaussian_blur(field: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing over the last two axes, reflected borders.

    Accepts (h, w) or a stack (..., h, w); extra leading axes are independent.
    Float32 input stays in float32; everything else runs in float64.
    """
    field = np.asarray(field)
    if field.dtype != np.float32:
        field = field.astype(np.float64)
    h, w = field.shape[-2:]
    rows = _blur_matrix(h, sigma, field.dtype.name)
    cols = _blur_matrix(w, sigma, field.dtype.name)
    return (rows @ field) @ cols.T
