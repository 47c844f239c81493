#!/usr/bin/env python3
"""Generate a small synthetic cell-image dataset for smoke-testing the pipeline.

Each class gets a distinct base color with blob-like texture so a classifier
can separate them quickly. With --classes 5 the directories use the five
cell-type names, so the three-class relabeling path works on the output.
"""
import argparse
from pathlib import Path

import numpy as np
from PIL import Image

FIVE = ("dyskeratotic", "koilocytotic", "metaplastic", "parabasal",
        "superficial_intermediate")
COLORS = [(214, 58, 58), (58, 196, 58), (58, 58, 214), (196, 196, 58), (176, 58, 196)]


def make_image(rng, size, color):
    img = np.full((size, size, 3), color, dtype=np.float64)
    # a few soft blobs for texture
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(4):
        cy, cx = rng.uniform(0, size, size=2)
        r = rng.uniform(size / 8, size / 3)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        img += blob[:, :, None] * rng.uniform(-40, 40, size=3)
    img += rng.uniform(-10, 10, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--classes", type=int, choices=(3, 5), default=5)
    ap.add_argument("--per-class", type=int, default=12)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    names = FIVE if args.classes == 5 else tuple(f"class_{i}" for i in range(3))
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    for label, name in enumerate(names):
        d = out / name
        d.mkdir(parents=True, exist_ok=True)
        for i in range(args.per_class):
            img = make_image(rng, args.size, COLORS[label])
            Image.fromarray(img).save(d / f"img_{i:04d}.png")
    print(f"wrote {args.classes * args.per_class} images under {out}")


if __name__ == "__main__":
    main()
