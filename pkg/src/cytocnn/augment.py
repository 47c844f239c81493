"""Image augmentation operators and the dataset-expansion procedure.

All operators take and return uint8 (h, w, 3) images of unchanged size.
Geometric operators use bilinear sampling with reflected borders; their
sampling plans are cached per geometry so expansion stays fast.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dataio import Dataset, LabeledSample, sample_image
from .errors import ValidationError
from .interp import SamplePlan, apply_plan, build_plan, gaussian_blur

OPERATORS = ("rotate", "vflip", "zoom", "elastic", "clahe")


@dataclass
class AugmentConfig:
    rotation_degrees: float = 45.0
    vflip: bool = True
    zoom_factor: float = 1.2
    elastic_alpha: float = 15.0  # displacement amplitude, pixels
    elastic_sigma: float = 8.0   # smoothing std, pixels
    clahe_clip: float = 2.0
    clahe_grid: tuple[int, int] = (8, 8)

    def __post_init__(self):
        if self.zoom_factor < 1:
            raise ValidationError(f"zoom_factor must be >= 1, got {self.zoom_factor}")
        if self.elastic_sigma <= 0:
            raise ValidationError(f"elastic_sigma must be positive, got {self.elastic_sigma}")
        if self.clahe_clip < 1:
            raise ValidationError(f"clahe_clip must be >= 1, got {self.clahe_clip}")
        if any(g < 1 for g in self.clahe_grid):
            raise ValidationError(f"clahe_grid dims must be >= 1, got {self.clahe_grid}")


def _to_uint8(values: np.ndarray) -> np.ndarray:
    """Round half-up into the byte range. Mutates its (temporary) argument."""
    np.add(values, 0.5, out=values)
    np.floor(values, out=values)
    np.clip(values, 0, 255, out=values)
    return values.astype(np.uint8)


@lru_cache(maxsize=32)
def _grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys = np.repeat(np.arange(h, dtype=np.float32), w)
    xs = np.tile(np.arange(w, dtype=np.float32), h)
    return ys, xs


@lru_cache(maxsize=64)
def _rotate_plan(h: int, w: int, degrees: float) -> SamplePlan:
    theta = np.deg2rad(degrees)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = _grid(h, w)
    dy, dx = ys - cy, xs - cx
    # inverse map: pull each output pixel from the un-rotated source location
    src_y = cy + cos_t * dy - sin_t * dx
    src_x = cx + sin_t * dy + cos_t * dx
    return build_plan(h, w, src_y, src_x, border="reflect")


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image center; same output size, reflected borders."""
    h, w = img.shape[:2]
    out = apply_plan(img.astype(np.float32), _rotate_plan(h, w, float(degrees)))
    return _to_uint8(out.reshape(img.shape))


def vflip(img: np.ndarray) -> np.ndarray:
    """Reverse row order."""
    return np.ascontiguousarray(img[::-1])


@lru_cache(maxsize=64)
def _zoom_plan(h: int, w: int, factor: float) -> SamplePlan:
    ch = max(1, int(round(h / factor)))
    cw = max(1, int(round(w / factor)))
    top, left = (h - ch) // 2, (w - cw) // 2
    # resize coordinates in crop space, clamped to the crop, then offset into
    # the full image so the crop itself never has to be materialized
    ys = np.clip((np.arange(h, dtype=np.float64) + 0.5) * (ch / h) - 0.5, 0, ch - 1) + top
    xs = np.clip((np.arange(w, dtype=np.float64) + 0.5) * (cw / w) - 0.5, 0, cw - 1) + left
    return build_plan(h, w, np.repeat(ys, w), np.tile(xs, h), border="clamp")


def zoom(img: np.ndarray, factor: float) -> np.ndarray:
    """Central crop of size (h/factor, w/factor), resized back to (h, w)."""
    if factor < 1:
        raise ValidationError(f"zoom factor must be >= 1, got {factor}")
    h, w = img.shape[:2]
    out = apply_plan(img.astype(np.float32), _zoom_plan(h, w, float(factor)))
    return _to_uint8(out.reshape(img.shape))


def elastic(img: np.ndarray, alpha: float, sigma: float,
            rng: np.random.Generator) -> np.ndarray:
    """Warp by smoothed random displacement fields.

    Per-pixel uniform(-1, 1) fields are Gaussian-smoothed with std sigma and
    scaled by alpha; the image is sampled at the displaced coordinates.
    """
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    h, w = img.shape[:2]
    fields = rng.uniform(-1.0, 1.0, size=(2, h, w)).astype(np.float32)  # x first, then y
    v = gaussian_blur(fields, sigma)
    v *= np.float32(alpha)
    ys, xs = _grid(h, w)
    plan = build_plan(h, w, ys + v[1].ravel(), xs + v[0].ravel(), border="reflect")
    out = apply_plan(img.astype(np.float32), plan)
    return _to_uint8(out.reshape(img.shape))


@lru_cache(maxsize=64)
def _tile_layout(h: int, w: int, gh: int, gw: int, c: int):
    """Precomputed per-pixel gather bases and blend weights for a CLAHE grid.

    Index convention into the flattened (gh*gw, c, 256) map table:
    (tile*c + channel)*256 + intensity.
    """
    y_edges = np.round(np.arange(gh + 1) * h / gh).astype(np.int64)
    x_edges = np.round(np.arange(gw + 1) * w / gw).astype(np.int64)
    row_tile = np.searchsorted(y_edges, np.arange(h), side="right") - 1
    col_tile = np.searchsorted(x_edges, np.arange(w), side="right") - 1
    tile_id = row_tile[:, None] * gw + col_tile[None, :]
    tile_sizes = np.bincount(tile_id.ravel(), minlength=gh * gw).astype(np.float64)

    ci = np.arange(c)
    hist_base = (tile_id[:, :, None] * c + ci) * 256

    cy = (y_edges[:-1] + y_edges[1:] - 1) / 2.0
    cx = (x_edges[:-1] + x_edges[1:] - 1) / 2.0

    def axis_blend(coords, centers):
        i = np.searchsorted(centers, coords, side="right") - 1
        i0 = np.clip(i, 0, len(centers) - 1)
        i1 = np.clip(i + 1, 0, len(centers) - 1)
        span = centers[i1] - centers[i0]
        frac = np.where(span > 0, (coords - centers[i0]) / np.where(span > 0, span, 1.0), 0.0)
        return i0, i1, frac.astype(np.float32)

    ty0, ty1, wy = axis_blend(np.arange(h, dtype=np.float64), cy)
    tx0, tx1, wx = axis_blend(np.arange(w, dtype=np.float64), cx)

    def corner_base(ty, tx):
        corner = ty[:, None] * gw + tx[None, :]
        return (corner[:, :, None] * c + ci) * 256

    bases = np.stack([corner_base(ty0, tx0), corner_base(ty0, tx1),
                      corner_base(ty1, tx0), corner_base(ty1, tx1)]).astype(np.intp)
    return (hist_base, tile_sizes, np.repeat(tile_sizes, c)[:, None].astype(np.float32),
            bases, wy[:, None, None], wx[None, :, None])


def clahe(img: np.ndarray, clip: float = 2.0, grid: tuple[int, int] = (8, 8)) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization, per channel.

    Each grid tile gets a 256-bin histogram clipped at clip * (tile_pixels/256)
    with the excess redistributed uniformly; its cumulative map is scaled to
    [0, 255], and each pixel blends the maps of its four neighboring tile
    centers bilinearly.
    """
    if clip < 1:
        raise ValidationError(f"clip must be >= 1, got {clip}")
    gh, gw = grid
    h, w = img.shape[:2]
    if gh < 1 or gw < 1:
        raise ValidationError(f"grid dims must be >= 1, got {grid}")
    if gh > h or gw > w:
        raise ValidationError(f"grid {grid} larger than image ({h}, {w})")

    c = img.shape[2]
    hist_base, tile_sizes, sizes_c, bases, wy, wx = _tile_layout(h, w, gh, gw, c)
    v = img.astype(np.int64)
    idx = hist_base + v
    # one histogram pass over all tiles and channels at once; float32 holds
    # pixel counts exactly and keeps the per-tile tables cache-resident
    hists = np.bincount(idx.ravel(), minlength=gh * gw * c * 256)
    hists = hists.reshape(gh * gw * c, 256).astype(np.float32)
    limits = np.float32(clip / 256.0) * sizes_c
    clipped = np.minimum(hists, limits)
    # redistribute what clipping removed; row sums are the tile sizes
    excess = sizes_c - clipped.sum(axis=1, keepdims=True)
    clipped += np.float32(1.0 / 256.0) * excess
    cdf = np.cumsum(clipped, axis=1)
    cdf *= np.float32(255.0) / sizes_c
    np.add(cdf, 0.5, out=cdf)
    flat_maps = np.floor(cdf, out=cdf).ravel()

    def corner(i):
        np.add(bases[i], v, out=idx)
        return np.take(flat_maps, idx)

    top = corner(1)
    m00 = corner(0)
    top -= m00
    top *= wx
    top += m00
    bot = corner(3)
    m10 = corner(2)
    bot -= m10
    bot *= wx
    bot += m10
    bot -= top
    bot *= wy
    bot += top
    return _to_uint8(bot)


def apply_operator(name: str, img: np.ndarray, cfg: AugmentConfig,
                   rng: np.random.Generator) -> np.ndarray:
    if name == "rotate":
        return rotate(img, cfg.rotation_degrees)
    if name == "vflip":
        return vflip(img)
    if name == "zoom":
        return zoom(img, cfg.zoom_factor)
    if name == "elastic":
        return elastic(img, cfg.elastic_alpha, cfg.elastic_sigma, rng)
    if name == "clahe":
        return clahe(img, cfg.clahe_clip, cfg.clahe_grid)
    raise ValidationError(f"unknown operator {name!r}")


@dataclass
class GeneratedRecord:
    """Provenance of one generated image, mirrored into the CLI manifest."""

    class_name: str
    item: int
    source_id: str
    operator: str
    seed: int


def generation_plan(seed: int, class_index: int, item: int,
                    n_sources: int) -> tuple[str, int, np.random.Generator]:
    """Deterministic (operator, source index, rng) for one generated image.

    Seeded by (seed, class, item) so generation order and parallelism cannot
    change the output.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, class_index, item]))
    op = OPERATORS[int(rng.integers(len(OPERATORS)))]
    src = int(rng.integers(n_sources))
    return op, src, rng


def expand_dataset(dataset: Dataset, target_per_class: int = 5000,
                   cfg: AugmentConfig | None = None, seed: int = 0,
                   records: list[GeneratedRecord] | None = None) -> Dataset:
    """Grow every class to target_per_class by augmenting uniformly drawn originals.

    Originals pass through unchanged; each generated image applies exactly one
    operator, chosen uniformly, to one uniformly drawn source of its class.
    Classes already at or above target are left alone.
    """
    if target_per_class < 1:
        raise ValidationError(f"target_per_class must be >= 1, got {target_per_class}")
    cfg = cfg if cfg is not None else AugmentConfig()

    by_class: list[list[LabeledSample]] = [[] for _ in dataset.class_names]
    for s in dataset.samples:
        by_class[s.label].append(s)

    out = list(dataset.samples)
    for label, originals in enumerate(by_class):
        name = dataset.class_names[label]
        if not originals:
            raise ValidationError(f"class {name!r} is empty; nothing to augment")
        n_gen = target_per_class - len(originals)
        if n_gen <= 0:
            continue
        sources = [sample_image(s) for s in originals]
        for item in range(n_gen):
            op, src, rng = generation_plan(seed, label, item, len(sources))
            img = apply_operator(op, sources[src], cfg, rng)
            out.append(LabeledSample(image=img, label=label,
                                     source_id=originals[src].source_id))
            if records is not None:
                records.append(GeneratedRecord(name, item, originals[src].source_id, op, seed))
    return Dataset(samples=out, class_names=list(dataset.class_names), mode=dataset.mode)
