"""Dataset loading, preprocessing to the 100x100x3 input contract, the
five-to-three class mapping, stratified splitting, and k-fold assignment.

Directory layout: <root>/<class_name>/*.{png,jpg,jpeg,bmp}. Classes are indexed
by lexicographically sorted subdirectory name. An optional manifest.tsv written
by the augmentation step maps generated files back to their source images so
source-level splits stay leak-free.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import LoadError, ValidationError
from .interp import resize_bilinear

log = logging.getLogger(__name__)

INPUT_HW = (100, 100)
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}
MANIFEST_NAME = "manifest.tsv"

FINE_CLASSES = ("dyskeratotic", "koilocytotic", "metaplastic", "parabasal",
                "superficial_intermediate")
COARSE_CLASSES = ("abnormal", "benign", "normal")
# fine index -> coarse index
_FINE_TO_COARSE = (0, 0, 1, 2, 2)


@dataclass
class LabeledSample:
    image: "str | np.ndarray"  # path on disk, or an in-memory uint8 (h, w, 3) array
    label: int
    source_id: str


@dataclass
class Dataset:
    samples: list[LabeledSample]
    class_names: list[str]
    mode: str = "five_class"  # five_class | three_class
    skipped: int = 0

    def class_counts(self) -> list[int]:
        counts = [0] * len(self.class_names)
        for s in self.samples:
            counts[s.label] += 1
        return counts


def read_image(path: str | Path) -> np.ndarray:
    """Decode an image file to uint8 (h, w, 3)."""
    with PILImage.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def sample_image(sample: LabeledSample) -> np.ndarray:
    if isinstance(sample.image, np.ndarray):
        return sample.image
    return read_image(sample.image)


def _read_manifest(path: Path) -> dict[str, str]:
    mapping: dict[str, str] = {}
    lines = path.read_text().splitlines()
    for line in lines[1:]:  # skip header
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) >= 2:
            mapping[parts[0]] = parts[1]
    return mapping


def load_dataset(root: str | Path) -> Dataset:
    """One LabeledSample per readable image under <root>/<class>/.

    Unreadable files are logged and skipped; the skip count lands on the dataset.
    """
    root = Path(root)
    if not root.is_dir():
        raise LoadError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise LoadError(f"dataset root {root} contains no class subdirectories")

    manifest_path = root / MANIFEST_NAME
    source_of = _read_manifest(manifest_path) if manifest_path.is_file() else {}

    samples: list[LabeledSample] = []
    skipped = 0
    for label, class_dir in enumerate(class_dirs):
        for f in sorted(class_dir.iterdir()):
            if f.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            try:
                read_image(f)
            except Exception as exc:
                log.warning("skipping unreadable image %s: %s", f, exc)
                skipped += 1
                continue
            rel = f.relative_to(root).as_posix()
            samples.append(LabeledSample(image=str(f), label=label,
                                         source_id=source_of.get(rel, rel)))
    return Dataset(samples=samples, class_names=[d.name for d in class_dirs], skipped=skipped)


def preprocess(img: np.ndarray) -> np.ndarray:
    """Bilinear resize to 100x100 and scale intensities into [0, 1].

    Grayscale inputs are replicated across three channels; a same-size RGB
    input comes back as exactly original/255.
    """
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValidationError(f"expected a 2-d or 3-d image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ValidationError(f"image has a zero dimension: {arr.shape}")
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    elif arr.shape[2] > 3:
        arr = arr[:, :, :3]  # drop alpha
    out = resize_bilinear(arr.astype(np.float64), INPUT_HW[0], INPUT_HW[1])
    return out / 255.0


def coarse_label(fine_label: int) -> int:
    """Map a five-way cell-type index to {abnormal, benign, normal}."""
    if not 0 <= fine_label < len(FINE_CLASSES):
        raise ValidationError(f"fine label {fine_label} out of range [0, {len(FINE_CLASSES)})")
    return _FINE_TO_COARSE[fine_label]


def _canonical(name: str) -> str:
    return name.lower().replace("-", "_").replace(" ", "_")


def to_three_class(dataset: Dataset) -> Dataset:
    """Relabel a five-cell-type dataset into abnormal/benign/normal."""
    if dataset.mode != "five_class":
        raise ValidationError("dataset is already three-class")
    canon = [_canonical(n) for n in dataset.class_names]
    if sorted(canon) != sorted(FINE_CLASSES):
        raise ValidationError(
            f"three-class mapping needs the five cell-type classes {FINE_CLASSES}, "
            f"got {dataset.class_names}")
    remap = [coarse_label(FINE_CLASSES.index(c)) for c in canon]
    samples = [LabeledSample(s.image, remap[s.label], s.source_id) for s in dataset.samples]
    return Dataset(samples=samples, class_names=list(COARSE_CLASSES), mode="three_class",
                   skipped=dataset.skipped)


@dataclass
class SplitSpec:
    ratios: tuple[float, float, float] = (0.70, 0.20, 0.10)
    seed: int = 0
    level: str = "source"  # source | sample

    def __post_init__(self):
        if any(r <= 0 for r in self.ratios):
            raise ValidationError(f"split ratios must be positive, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValidationError(f"split ratios must sum to 1, got {self.ratios}")
        if self.level not in ("source", "sample"):
            raise ValidationError(f"split level must be 'source' or 'sample', got {self.level!r}")


def largest_remainder(n: int, ratios: tuple[float, ...]) -> list[int]:
    """Integer partition of n proportional to ratios; remainders go to the
    largest fractional parts (ties broken by partition order)."""
    quotas = [round(r * n, 9) for r in ratios]
    base = [int(np.floor(q)) for q in quotas]
    remainder = n - sum(base)
    by_frac = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in by_frac[:remainder]:
        base[i] += 1
    return base


def _class_indices(dataset: Dataset) -> list[list[int]]:
    per_class: list[list[int]] = [[] for _ in dataset.class_names]
    for i, s in enumerate(dataset.samples):
        per_class[s.label].append(i)
    return per_class


def _subset(dataset: Dataset, indices: list[int]) -> Dataset:
    return Dataset(samples=[dataset.samples[i] for i in sorted(indices)],
                   class_names=list(dataset.class_names), mode=dataset.mode)


def stratified_split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Per-class 70/20/10 partition (largest-remainder rounding), shuffled by seed.

    At level='source' the shuffled units are source_id groups, so augmented
    copies can never land on the other side of a partition from their original.
    """
    parts: tuple[list[int], list[int], list[int]] = ([], [], [])
    for label, idxs in enumerate(_class_indices(dataset)):
        name = dataset.class_names[label]
        if spec.level == "source":
            groups: dict[str, list[int]] = {}
            for i in idxs:
                groups.setdefault(dataset.samples[i].source_id, []).append(i)
            units = [groups[k] for k in sorted(groups)]
        else:
            units = [[i] for i in idxs]
        if len(units) < 3:
            raise ValidationError(
                f"class {name!r} has only {len(units)} {spec.level}-level members; need >= 3")
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, label]))
        order = rng.permutation(len(units))
        counts = largest_remainder(len(units), spec.ratios)
        pos = 0
        for part, count in zip(parts, counts):
            for u in order[pos:pos + count]:
                part.extend(units[u])
            pos += count
    return tuple(_subset(dataset, p) for p in parts)


def kfold(dataset: Dataset, k: int = 5, seed: int = 0) -> list[list[int]]:
    """Class-stratified folds of sample indices; per-class sizes differ by <= 1."""
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    folds: list[list[int]] = [[] for _ in range(k)]
    for label, idxs in enumerate(_class_indices(dataset)):
        name = dataset.class_names[label]
        if len(idxs) < k:
            raise ValidationError(f"class {name!r} has {len(idxs)} samples; need >= k={k}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, label]))
        order = rng.permutation(len(idxs))
        sizes = [len(idxs) // k + (1 if f < len(idxs) % k else 0) for f in range(k)]
        pos = 0
        for f, size in enumerate(sizes):
            folds[f].extend(idxs[i] for i in order[pos:pos + size])
            pos += size
    return [sorted(f) for f in folds]
