import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image as PILImage

from cytocnn.errors import LoadError, ValidationError
from cytocnn.dataio import (COARSE_CLASSES, FINE_CLASSES, Dataset, LabeledSample,
                            SplitSpec, coarse_label, kfold, largest_remainder,
                            load_dataset, preprocess, stratified_split,
                            to_three_class)


def write_png(path, arr):
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr).save(path)


def make_tree(root, counts, hw=8, seed=0):
    rng = np.random.default_rng(seed)
    for label, count in enumerate(counts):
        for i in range(count):
            img = rng.integers(0, 256, size=(hw, hw, 3), dtype=np.uint8)
            write_png(root / f"class_{label}" / f"img_{i:03d}.png", img)


def label_only_dataset(counts, sources_per_class=None):
    """Dataset of path-less samples for split/fold logic tests."""
    samples = []
    for label, count in enumerate(counts):
        for i in range(count):
            if sources_per_class:
                src = f"c{label}/src_{i % sources_per_class[label]}"
            else:
                src = f"c{label}/src_{i}"
            samples.append(LabeledSample(image=f"c{label}/img_{i}", label=label,
                                         source_id=src))
    return Dataset(samples=samples, class_names=[f"c{i}" for i in range(len(counts))])


# ---------------------------------------------------------------- load_dataset

def test_load_counts_and_sorted_classes(tmp_path):
    make_tree(tmp_path, [3, 5, 2])
    ds = load_dataset(tmp_path)
    assert ds.class_names == ["class_0", "class_1", "class_2"]
    assert ds.class_counts() == [3, 5, 2]
    assert ds.skipped == 0
    assert all(s.source_id for s in ds.samples)


def test_load_missing_root():
    with pytest.raises(LoadError):
        load_dataset("/nonexistent/nowhere")


def test_load_empty_root(tmp_path):
    with pytest.raises(LoadError):
        load_dataset(tmp_path)


def test_load_skips_unreadable_files(tmp_path):
    make_tree(tmp_path, [10])
    (tmp_path / "class_0" / "broken.png").write_bytes(b"this is not a png")
    ds = load_dataset(tmp_path)
    assert ds.class_counts() == [10]
    assert ds.skipped == 1


def test_load_ignores_non_image_files(tmp_path):
    make_tree(tmp_path, [2])
    (tmp_path / "class_0" / "notes.txt").write_text("hello")
    ds = load_dataset(tmp_path)
    assert ds.class_counts() == [2]
    assert ds.skipped == 0


def test_load_applies_manifest_source_ids(tmp_path):
    make_tree(tmp_path, [2])
    gen = np.zeros((8, 8, 3), dtype=np.uint8)
    write_png(tmp_path / "class_0" / "aug_0.png", gen)
    (tmp_path / "manifest.tsv").write_text(
        "generated_path\tsource_path\toperator\tseed\n"
        "class_0/aug_0.png\tclass_0/img_000.png\trotate\t0\n")
    ds = load_dataset(tmp_path)
    by_name = {s.image.split("/")[-1]: s for s in ds.samples}
    assert by_name["aug_0.png"].source_id == "class_0/img_000.png"
    assert by_name["img_000.png"].source_id == "class_0/img_000.png"


# ---------------------------------------------------------------- preprocess

def test_preprocess_same_size_is_exact_division():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(100, 100, 3), dtype=np.uint8)
    out = preprocess(img)
    np.testing.assert_array_equal(out, img.astype(np.float64) / 255.0)


def test_preprocess_resizes_to_contract():
    img = np.random.default_rng(1).integers(0, 256, size=(200, 200, 3), dtype=np.uint8)
    assert preprocess(img).shape == (100, 100, 3)


def test_preprocess_all_white_any_size():
    for hw in ((100, 100), (37, 222), (3, 3)):
        img = np.full((*hw, 3), 255, dtype=np.uint8)
        np.testing.assert_array_equal(preprocess(img), np.ones((100, 100, 3)))


def test_preprocess_grayscale_replicated():
    img = np.random.default_rng(2).integers(0, 256, size=(50, 50), dtype=np.uint8)
    out = preprocess(img)
    assert out.shape == (100, 100, 3)
    np.testing.assert_array_equal(out[:, :, 0], out[:, :, 1])
    np.testing.assert_array_equal(out[:, :, 0], out[:, :, 2])


def test_preprocess_output_range():
    img = np.random.default_rng(3).integers(0, 256, size=(64, 48, 3), dtype=np.uint8)
    out = preprocess(img)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_preprocess_zero_dimension_rejected():
    with pytest.raises(ValidationError):
        preprocess(np.zeros((0, 5, 3), dtype=np.uint8))


# ---------------------------------------------------------------- coarse labels

def test_coarse_label_mapping():
    names = dict(zip(FINE_CLASSES, range(5)))
    assert coarse_label(names["dyskeratotic"]) == COARSE_CLASSES.index("abnormal")
    assert coarse_label(names["koilocytotic"]) == COARSE_CLASSES.index("abnormal")
    assert coarse_label(names["metaplastic"]) == COARSE_CLASSES.index("benign")
    assert coarse_label(names["parabasal"]) == COARSE_CLASSES.index("normal")
    assert coarse_label(names["superficial_intermediate"]) == COARSE_CLASSES.index("normal")


def test_coarse_label_rejects_invalid():
    with pytest.raises(ValidationError):
        coarse_label(5)
    with pytest.raises(ValidationError):
        coarse_label(-1)


def test_to_three_class_counts():
    samples = []
    for label in range(5):
        for i in range(5000):
            samples.append(LabeledSample(image=f"{label}/{i}", label=label,
                                         source_id=f"{label}/{i}"))
    ds = Dataset(samples=samples, class_names=list(FINE_CLASSES))
    coarse = to_three_class(ds)
    assert coarse.mode == "three_class"
    assert coarse.class_names == list(COARSE_CLASSES)
    # abnormal / benign / normal on the enhanced-set counts
    assert coarse.class_counts() == [10_000, 5_000, 10_000]


def test_to_three_class_accepts_dashed_names():
    samples = [LabeledSample(image=f"{i}", label=i, source_id=f"{i}") for i in range(5)]
    ds = Dataset(samples=samples,
                 class_names=["Dyskeratotic", "Koilocytotic", "Metaplastic",
                              "Parabasal", "Superficial-Intermediate"])
    assert to_three_class(ds).class_counts() == [2, 1, 2]


def test_to_three_class_rejects_foreign_taxonomy():
    ds = label_only_dataset([2, 2, 2])
    with pytest.raises(ValidationError):
        to_three_class(ds)


# ---------------------------------------------------------------- largest remainder

def test_largest_remainder_exact_case():
    assert largest_remainder(5000, (0.7, 0.2, 0.1)) == [3500, 1000, 500]


def test_largest_remainder_small_cases():
    assert largest_remainder(10, (0.7, 0.2, 0.1)) == [7, 2, 1]
    assert largest_remainder(9, (0.7, 0.2, 0.1)) == [6, 2, 1]
    assert largest_remainder(3, (0.7, 0.2, 0.1)) == [2, 1, 0]


@given(st.integers(1, 10_000))
@settings(max_examples=50, deadline=None)
def test_largest_remainder_sums_to_n(n):
    parts = largest_remainder(n, (0.7, 0.2, 0.1))
    assert sum(parts) == n
    assert all(p >= 0 for p in parts)


# ---------------------------------------------------------------- stratified_split

def test_split_exact_enhanced_counts():
    ds = label_only_dataset([5000, 5000, 5000])
    train, val, test = stratified_split(ds, SplitSpec(seed=1, level="sample"))
    assert train.class_counts() == [3500, 3500, 3500]
    assert val.class_counts() == [1000, 1000, 1000]
    assert test.class_counts() == [500, 500, 500]


def test_split_is_partition():
    ds = label_only_dataset([40, 25, 33])
    train, val, test = stratified_split(ds, SplitSpec(seed=3, level="sample"))
    ids = [s.image for part in (train, val, test) for s in part.samples]
    assert sorted(ids) == sorted(s.image for s in ds.samples)
    assert len(set(ids)) == len(ids)


def test_split_deterministic():
    ds = label_only_dataset([30, 30])
    a = stratified_split(ds, SplitSpec(seed=9, level="sample"))
    b = stratified_split(ds, SplitSpec(seed=9, level="sample"))
    for pa, pb in zip(a, b):
        assert [s.image for s in pa.samples] == [s.image for s in pb.samples]


def test_split_seed_changes_assignment():
    ds = label_only_dataset([50])
    a = stratified_split(ds, SplitSpec(seed=1, level="sample"))
    b = stratified_split(ds, SplitSpec(seed=2, level="sample"))
    assert [s.image for s in a[0].samples] != [s.image for s in b[0].samples]


def test_split_source_level_keeps_groups_together():
    # 12 samples per class from 4 sources each (augmented triples)
    ds = label_only_dataset([12, 12], sources_per_class=[4, 4])
    train, val, test = stratified_split(ds, SplitSpec(seed=5, level="source"))
    seen: dict[str, int] = {}
    for part_idx, part in enumerate((train, val, test)):
        for s in part.samples:
            if s.source_id in seen:
                assert seen[s.source_id] == part_idx, f"{s.source_id} spans partitions"
            seen[s.source_id] = part_idx


def test_split_class_too_small_names_class():
    ds = label_only_dataset([10, 2])
    with pytest.raises(ValidationError, match="c1"):
        stratified_split(ds, SplitSpec(seed=0, level="sample"))


def test_split_spec_validation():
    with pytest.raises(ValidationError):
        SplitSpec(ratios=(0.5, 0.5, 0.0))
    with pytest.raises(ValidationError):
        SplitSpec(ratios=(0.7, 0.2, 0.2))
    with pytest.raises(ValidationError):
        SplitSpec(level="bogus")


# ---------------------------------------------------------------- kfold

def test_kfold_enhanced_scale():
    ds = label_only_dataset([5000, 5000, 5000, 5000, 5000])
    folds = kfold(ds, k=5, seed=0)
    assert len(folds) == 5
    for fold in folds:
        assert len(fold) == 5000
        labels = [ds.samples[i].label for i in fold]
        assert all(labels.count(c) == 1000 for c in range(5))


def test_kfold_disjoint_and_covering():
    ds = label_only_dataset([17, 23, 11])
    folds = kfold(ds, k=5, seed=2)
    union = sorted(i for fold in folds for i in fold)
    assert union == list(range(len(ds.samples)))


def test_kfold_sizes_differ_by_at_most_one_per_class():
    ds = label_only_dataset([17, 23])
    folds = kfold(ds, k=5, seed=2)
    for c in range(2):
        sizes = [sum(1 for i in fold if ds.samples[i].label == c) for fold in folds]
        assert max(sizes) - min(sizes) <= 1


def test_kfold_deterministic():
    ds = label_only_dataset([20, 20])
    assert kfold(ds, k=4, seed=7) == kfold(ds, k=4, seed=7)


def test_kfold_k_too_small():
    ds = label_only_dataset([10])
    with pytest.raises(ValidationError):
        kfold(ds, k=1, seed=0)


def test_kfold_class_smaller_than_k():
    ds = label_only_dataset([10, 3])
    with pytest.raises(ValidationError, match="c1"):
        kfold(ds, k=5, seed=0)
