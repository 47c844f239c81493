import json

import numpy as np
import pytest
from PIL import Image as PILImage

from cytocnn.cli import ResourceReport, dispatch, render_resource_report
from cytocnn.dataio import load_dataset


def write_png(path, arr):
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr).save(path)


@pytest.fixture
def tiny_dataset(tmp_path):
    """Three separable classes, nine small solid-ish images each."""
    root = tmp_path / "data"
    rng = np.random.default_rng(0)
    colors = [(220, 40, 40), (40, 220, 40), (40, 40, 220)]
    for c, color in enumerate(colors):
        for i in range(9):
            img = np.full((16, 16, 3), color, dtype=np.int16)
            img += rng.integers(-12, 12, size=img.shape, dtype=np.int16)
            write_png(root / f"class_{c}" / f"img_{i}.png",
                      np.clip(img, 0, 255).astype(np.uint8))
    return root


# ---------------------------------------------------------------- inspect / usage

def test_inspect_three_class(capsys):
    assert dispatch(["inspect", "--classes", "3"]) == 0
    out = capsys.readouterr().out
    assert "404099" in out
    assert "1616396" in out
    assert "(49, 49, 64)" in out


def test_inspect_five_class(capsys):
    assert dispatch(["inspect", "--classes", "5"]) == 0
    assert "404357" in capsys.readouterr().out


def test_unknown_subcommand_usage_error(capsys):
    assert dispatch(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_train_missing_data_flag(capsys):
    assert dispatch(["train", "--out", "/tmp/x"]) == 2
    assert "--data" in capsys.readouterr().err


def test_help_exits_zero():
    assert dispatch(["--help"]) == 0


# ---------------------------------------------------------------- train / evaluate

def train_args(data, out, seed=3):
    return ["train", "--data", str(data), "--out", str(out), "--classes", "3",
            "--epochs", "2", "--batch", "4", "--seed", str(seed)]


def test_train_produces_artifacts(tiny_dataset, tmp_path, capsys):
    out = tmp_path / "run"
    assert dispatch(train_args(tiny_dataset, out)) == 0
    stdout = capsys.readouterr().out
    assert "resolved config" in stdout
    assert '"seed": 3' in stdout
    for name in ("weights.cvxw", "history.tsv", "metrics_val.json", "metrics_val.txt",
                 "config.json", "resources.txt"):
        assert (out / name).is_file(), name
    history = (out / "history.tsv").read_text().strip().split("\n")
    assert len(history) == 3  # header + 2 epochs
    assert not (out / ".lock").exists()


def test_train_then_evaluate_reproduces_val_metrics(tiny_dataset, tmp_path):
    run = tmp_path / "run"
    assert dispatch(train_args(tiny_dataset, run)) == 0
    ev = tmp_path / "eval"
    assert dispatch(["evaluate", "--data", str(tiny_dataset),
                     "--weights", str(run / "weights.cvxw"),
                     "--split", "val", "--seed", "3", "--out", str(ev)]) == 0
    assert (ev / "metrics_val.json").read_text() == (run / "metrics_val.json").read_text()


def test_train_reproducible_across_runs(tiny_dataset, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert dispatch(train_args(tiny_dataset, a)) == 0
    assert dispatch(train_args(tiny_dataset, b)) == 0
    assert (a / "weights.cvxw").read_bytes() == (b / "weights.cvxw").read_bytes()
    assert (a / "history.tsv").read_text() == (b / "history.tsv").read_text()
    assert (a / "metrics_val.json").read_text() == (b / "metrics_val.json").read_text()


def test_locked_output_directory_fails_cleanly(tiny_dataset, tmp_path, capsys):
    out = tmp_path / "run"
    out.mkdir()
    (out / ".lock").write_text("held\n")
    assert dispatch(train_args(tiny_dataset, out)) == 1
    assert "in use" in capsys.readouterr().err


def test_evaluate_structured_format(tiny_dataset, tmp_path, capsys):
    run = tmp_path / "run"
    assert dispatch(train_args(tiny_dataset, run)) == 0
    capsys.readouterr()
    assert dispatch(["evaluate", "--data", str(tiny_dataset),
                     "--weights", str(run / "weights.cvxw"),
                     "--seed", "3", "--format", "structured"]) == 0
    out = capsys.readouterr().out
    start = out.index("\n{") + 1  # skip the one-line config echo
    end = out.rindex("}") + 1
    payload = json.loads(out[start:end])
    assert "accuracy" in payload
    assert len(payload["classes"]) == 3


def test_evaluate_bad_weights_path(tiny_dataset, capsys):
    assert dispatch(["evaluate", "--data", str(tiny_dataset),
                     "--weights", "/nonexistent.cvxw"]) == 1
    assert "error" in capsys.readouterr().err


# ---------------------------------------------------------------- predict

def test_predict_prints_probabilities(tiny_dataset, tmp_path, capsys):
    run = tmp_path / "run"
    assert dispatch(train_args(tiny_dataset, run)) == 0
    capsys.readouterr()
    image = sorted((tiny_dataset / "class_0").iterdir())[0]
    assert dispatch(["predict", "--weights", str(run / "weights.cvxw"),
                     str(image)]) == 0
    line = [l for l in capsys.readouterr().out.splitlines()
            if l.startswith(str(image))][0]
    fields = line.split("\t")
    assert fields[1] in ("0", "1", "2")
    probs = [float(p) for p in fields[2].split()]
    assert len(probs) == 3
    assert sum(probs) == pytest.approx(1.0, abs=1e-6)


# ---------------------------------------------------------------- crossval

def test_crossval_reports_per_fold_and_mean(tiny_dataset, tmp_path, capsys):
    out = tmp_path / "cv"
    assert dispatch(["crossval", "--data", str(tiny_dataset), "--out", str(out),
                     "--classes", "3", "--folds", "3", "--epochs", "1",
                     "--batch", "8", "--seed", "1"]) == 0
    stdout = capsys.readouterr().out
    assert stdout.count("fold ") == 3
    assert "mean accuracy" in stdout
    payload = json.loads((out / "crossval.json").read_text())
    assert len(payload["accuracies"]) == 3
    assert payload["mean_accuracy"] == pytest.approx(np.mean(payload["accuracies"]))
    assert (out / "crossval.txt").is_file()


# ---------------------------------------------------------------- augment

def test_augment_expands_directory(tmp_path, capsys):
    root = tmp_path / "src"
    rng = np.random.default_rng(1)
    for c in range(2):
        for i in range(3):
            write_png(root / f"k{c}" / f"img_{i}.png",
                      rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8))
    out = tmp_path / "expanded"
    assert dispatch(["augment", "--data", str(root), "--out", str(out),
                     "--target", "5", "--seed", "7"]) == 0
    ds = load_dataset(out)
    assert ds.class_counts() == [5, 5]
    manifest = (out / "manifest.tsv").read_text().strip().split("\n")
    assert manifest[0] == "generated_path\tsource_path\toperator\tseed"
    assert len(manifest) == 1 + 4  # two generated per class
    for row in manifest[1:]:
        gen, src, op, seed = row.split("\t")
        assert (out / gen).is_file()
        assert (out / src).is_file()
        assert op in ("rotate", "vflip", "zoom", "elastic", "clahe")
        assert seed == "7"
    # generated files inherit their source's identity for source-level splits
    by_image = {s.image: s.source_id for s in ds.samples}
    for row in manifest[1:]:
        gen, src, _, _ = row.split("\t")
        assert by_image[str(out / gen)] == src


def test_augment_deterministic(tmp_path):
    root = tmp_path / "src"
    rng = np.random.default_rng(2)
    for i in range(3):
        write_png(root / "only" / f"img_{i}.png",
                  rng.integers(0, 256, size=(10, 10, 3), dtype=np.uint8))
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        assert dispatch(["augment", "--data", str(root), "--out", str(out),
                         "--target", "6", "--seed", "5"]) == 0
    for f in sorted(p.name for p in (out_a / "only").iterdir()):
        assert (out_a / "only" / f).read_bytes() == (out_b / "only" / f).read_bytes()


# ---------------------------------------------------------------- bench / resources

def test_bench_runs_quickly(capsys):
    assert dispatch(["bench", "--classes", "3", "--batch", "1", "--steps", "1"]) == 0
    out = capsys.readouterr().out
    assert "param_count: 404099" in out
    assert "param_bytes_serialized: 1616396" in out


def test_resource_report_rendering():
    rr = ResourceReport(param_count=10, param_bytes_serialized=40,
                        wall_time_train_seconds=1.25, wall_time_test_seconds=None,
                        peak_resident_bytes=None)
    text = render_resource_report(rr)
    assert "param_bytes_serialized: 40" in text
    assert "wall_time_train_seconds: 1.250000" in text
    assert "wall_time_test_seconds: unavailable" in text
    assert "peak_resident_bytes: unavailable" in text
    assert render_resource_report(rr) == text
