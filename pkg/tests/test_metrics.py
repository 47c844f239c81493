import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cytocnn.errors import ValidationError
from cytocnn.metrics import (ConfusionMatrix, accuracy, build_report, confusion,
                             macro, per_class_prf, render_report)

from reference import metrics_by_counting


# ---------------------------------------------------------------- confusion

def test_perfect_predictions_are_diagonal():
    labels = [0, 0, 1, 2, 2, 2]
    cm = confusion(labels, labels, 3)
    np.testing.assert_array_equal(cm.counts, np.diag([2, 1, 3]))


def test_confusion_hand_case():
    cm = confusion(preds=[0, 1], labels=[1, 1], num_classes=2)
    np.testing.assert_array_equal(cm.counts, [[0, 0], [1, 1]])


def test_confusion_empty_inputs():
    cm = confusion([], [], 3)
    assert cm.counts.shape == (3, 3)
    assert cm.total == 0


def test_confusion_length_mismatch():
    with pytest.raises(ValidationError):
        confusion([0, 1], [0], 2)


def test_confusion_out_of_range():
    with pytest.raises(ValidationError):
        confusion([0, 2], [0, 1], 2)
    with pytest.raises(ValidationError):
        confusion([0, 1], [0, -1], 2)


# ---------------------------------------------------------------- accuracy

def test_accuracy_perfect():
    assert accuracy(ConfusionMatrix(np.diag([4, 2, 9]))) == 1.0


def test_accuracy_hand_case():
    assert accuracy(ConfusionMatrix([[3, 1], [1, 3]])) == 0.75


def test_accuracy_all_wrong():
    assert accuracy(ConfusionMatrix([[0, 7], [7, 0]])) == 0.0


def test_accuracy_empty_rejected():
    with pytest.raises(ValidationError):
        accuracy(ConfusionMatrix(np.zeros((2, 2), dtype=int)))


# ---------------------------------------------------------------- per-class PRF

def test_prf_perfect_diagonal():
    p, r, f1, support, pu, ru, fu = per_class_prf(ConfusionMatrix(np.diag([3, 5])))
    np.testing.assert_array_equal(p, [1.0, 1.0])
    np.testing.assert_array_equal(r, [1.0, 1.0])
    np.testing.assert_array_equal(f1, [1.0, 1.0])
    np.testing.assert_array_equal(support, [3, 5])
    assert not any(pu) and not any(ru) and not any(fu)


def test_prf_hand_case():
    p, r, f1, _, _, _, _ = per_class_prf(ConfusionMatrix([[3, 1], [2, 4]]))
    assert p[0] == pytest.approx(0.6)
    assert r[0] == pytest.approx(0.75)
    assert f1[0] == pytest.approx(2 * 0.6 * 0.75 / 1.35)


def test_prf_zero_support_flagged():
    # class 1 never appears and is never predicted
    cm = ConfusionMatrix([[5, 0], [0, 0]])
    p, r, f1, support, pu, ru, fu = per_class_prf(cm)
    assert support[1] == 0
    assert p[1] == r[1] == f1[1] == 0.0
    assert pu[1] and ru[1] and fu[1]


# ---------------------------------------------------------------- macro

def test_macro_all_ones():
    report = build_report(ConfusionMatrix(np.diag([2, 2, 2])))
    assert macro(report) == (1.0, 1.0, 1.0)


def test_macro_is_arithmetic_mean():
    # class 0: P = 3/5; class 1: P = 1.0  ->  macro P = 0.8
    cm = ConfusionMatrix([[3, 0], [2, 2]])
    report = build_report(cm)
    assert report.precision[0] == pytest.approx(0.6)
    assert report.precision[1] == pytest.approx(1.0)
    assert report.macro_precision == pytest.approx(0.8)


# ---------------------------------------------------------------- oracle comparison

@given(st.integers(0, 2**32 - 1), st.integers(1, 1000), st.integers(2, 5))
@settings(max_examples=60, deadline=None)
def test_matches_sample_iterating_counter(seed, n, classes):
    rng = np.random.default_rng(seed)
    preds = rng.integers(0, classes, size=n)
    labels = rng.integers(0, classes, size=n)
    report = build_report(confusion(preds, labels, classes))
    expect = metrics_by_counting(preds, labels, classes)
    assert report.accuracy == expect["accuracy"]
    assert report.precision == expect["precision"]
    assert report.recall == expect["recall"]
    assert report.f1 == expect["f1"]
    assert report.support == expect["support"]


# ---------------------------------------------------------------- invariants

@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_accuracy_is_support_weighted_recall(seed):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 9, size=(4, 4))
    if counts.sum() == 0:
        counts[0, 0] = 1
    cm = ConfusionMatrix(counts)
    _, recall, _, support, _, _, _ = per_class_prf(cm)
    weighted = float((recall * support).sum() / cm.total)
    assert accuracy(cm) == pytest.approx(weighted, rel=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_metrics_invariant_under_class_permutation(seed):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 9, size=(3, 3))
    if counts.sum() == 0:
        counts[1, 1] = 2
    perm = rng.permutation(3)
    cm = ConfusionMatrix(counts)
    cm_p = ConfusionMatrix(counts[np.ix_(perm, perm)])
    ra = build_report(cm)
    rb = build_report(cm_p)
    assert ra.accuracy == rb.accuracy
    for i, j in enumerate(perm):
        assert ra.precision[j] == rb.precision[i]
        assert ra.recall[j] == rb.recall[i]
        assert ra.f1[j] == rb.f1[i]


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_f1_between_min_and_max_of_p_and_r(seed):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 9, size=(3, 3))
    cm = ConfusionMatrix(counts)
    p, r, f1, _, pu, ru, _ = per_class_prf(cm)
    for c in range(3):
        if not pu[c] and not ru[c]:
            assert min(p[c], r[c]) - 1e-12 <= f1[c] <= max(p[c], r[c]) + 1e-12


# ---------------------------------------------------------------- rendering

def test_render_deterministic():
    report = build_report(ConfusionMatrix([[3, 1], [2, 4]]), ["neg", "pos"])
    assert render_report(report, "text") == render_report(report, "text")
    assert render_report(report, "structured") == render_report(report, "structured")


def test_render_structured_round_trips():
    report = build_report(ConfusionMatrix([[3, 1, 0], [2, 4, 1], [0, 0, 5]]))
    payload = json.loads(render_report(report, "structured"))
    assert payload["accuracy"] == report.accuracy
    for i, cls in enumerate(payload["classes"]):
        assert cls["precision"] == report.precision[i]
        assert cls["recall"] == report.recall[i]
        assert cls["f1"] == report.f1[i]
        assert cls["support"] == report.support[i]
    assert payload["macro"]["precision"] == report.macro_precision


def test_render_text_has_row_per_class_plus_macro():
    report = build_report(ConfusionMatrix([[3, 1], [2, 4]]), ["a", "b"])
    lines = render_report(report, "text").strip().split("\n")
    assert lines[0].startswith("accuracy:")
    assert lines[2].startswith("a ")
    assert lines[3].startswith("b ")
    assert lines[4].startswith("macro")


def test_render_unknown_format_rejected():
    report = build_report(ConfusionMatrix([[1]]))
    with pytest.raises(ValidationError):
        render_report(report, "yaml")
