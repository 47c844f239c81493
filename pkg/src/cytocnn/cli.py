"""Command-line surface: augment, train, evaluate, crossval, predict, inspect, bench.

Exit codes: 0 success, 1 runtime failure (diagnostic on stderr), 2 usage error.
Every output file is written atomically; output directories are guarded by a
lock file so two runs cannot interleave.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import augment as aug
from . import dataio, metrics, optim
from .errors import CytoError, ValidationError
from .model import build_model, forward, param_count, per_layer_param_counts, predict
from .weights import file_bytes, load_weights, payload_bytes, save_weights

EVAL_BATCH = 32  # fixed so re-evaluation reproduces training-time metrics bit for bit


# ---------------------------------------------------------------- plumbing

def _write_atomic(path: Path, data: "str | bytes") -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@contextmanager
def _run_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ValidationError(
            f"output directory {out_dir} is in use (stale? remove {lock})") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _echo_config(command: str, settings: dict) -> dict:
    resolved = {"command": command, **settings}
    print("resolved config: " + json.dumps(resolved, sort_keys=True))
    return resolved


@dataclass
class ResourceReport:
    param_count: int
    param_bytes_serialized: int
    wall_time_train_seconds: float | None = None
    wall_time_test_seconds: float | None = None
    peak_resident_bytes: int | None = None


def _peak_rss_bytes() -> int | None:
    try:
        import resource
        kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        return int(kb) * 1024 if kb > 0 else None
    except Exception:
        return None


def measure_resources(model, train_run=None, test_run=None):
    """Time the given callables with a monotonic clock and report parameter memory."""
    count = param_count(model)
    rr = ResourceReport(param_count=count, param_bytes_serialized=4 * count)
    results = {}
    if train_run is not None:
        t0 = time.perf_counter()
        results["train"] = train_run()
        rr.wall_time_train_seconds = time.perf_counter() - t0
    if test_run is not None:
        t0 = time.perf_counter()
        results["test"] = test_run()
        rr.wall_time_test_seconds = time.perf_counter() - t0
    rr.peak_resident_bytes = _peak_rss_bytes()
    return results, rr


def render_resource_report(rr: ResourceReport) -> str:
    def fmt_time(t):
        return "unavailable" if t is None else f"{t:.6f}"

    mem = "unavailable" if rr.peak_resident_bytes is None else str(rr.peak_resident_bytes)
    return (f"param_count: {rr.param_count}\n"
            f"param_bytes_serialized: {rr.param_bytes_serialized}\n"
            f"wall_time_train_seconds: {fmt_time(rr.wall_time_train_seconds)}\n"
            f"wall_time_test_seconds: {fmt_time(rr.wall_time_test_seconds)}\n"
            f"peak_resident_bytes: {mem}\n")


# ---------------------------------------------------------------- data helpers

def _dataset_for_classes(data_dir: str, classes: int) -> dataio.Dataset:
    ds = dataio.load_dataset(data_dir)
    if len(ds.class_names) == classes:
        return ds
    if classes == 3:
        return dataio.to_three_class(ds)
    raise ValidationError(
        f"dataset has {len(ds.class_names)} classes but --classes {classes} was requested")


def _materialize(ds: dataio.Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Preprocess every sample into a float32 cache (fed to the float64 kernels
    batch by batch)."""
    x = np.empty((len(ds.samples), *dataio.INPUT_HW, 3), dtype=np.float32)
    y = np.empty(len(ds.samples), dtype=np.int64)
    for i, s in enumerate(ds.samples):
        x[i] = dataio.preprocess(dataio.sample_image(s))
        y[i] = s.label
    return x, y


def _predict_labels(model, x: np.ndarray) -> np.ndarray:
    out = []
    for start in range(0, len(x), EVAL_BATCH):
        logits, _ = forward(model, np.asarray(x[start:start + EVAL_BATCH], dtype=np.float64))
        out.append(logits.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def _evaluation(model, x, y, class_names) -> tuple[float, metrics.MetricsReport]:
    loss, _ = optim.evaluate(model, x, y, batch_size=EVAL_BATCH)
    preds = _predict_labels(model, x)
    report = metrics.build_report(metrics.confusion(preds, y, model.num_classes), class_names)
    return loss, report


def _eval_payload(loss: float, report: metrics.MetricsReport) -> str:
    body = json.loads(metrics.render_report(report, "structured"))
    return json.dumps({"loss": loss, "metrics": body}, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- subcommands

def cmd_inspect(args) -> int:
    model = build_model(args.classes, seed=0)
    _echo_config("inspect", {"classes": args.classes})
    print(f"parameters: {param_count(model)}")
    for name, count in per_layer_param_counts(model).items():
        print(f"  {name}: {count}")
    print(f"weight payload bytes (f32): {payload_bytes(model)}")
    print(f"weight file bytes (payload + header): {file_bytes(model)}")
    zero = np.zeros((1, *model.input_shape))
    _, cache = forward(model, zero)
    trace = " -> ".join(str(s[1:] if len(s) > 2 else s[1]) for s in cache.output_shapes)
    print(f"shape trace: {model.input_shape} -> {trace}")
    return 0


def cmd_augment(args) -> int:
    out = Path(args.out)
    cfg = aug.AugmentConfig(
        rotation_degrees=args.rotation, zoom_factor=args.zoom,
        elastic_alpha=args.elastic_alpha, elastic_sigma=args.elastic_sigma,
        clahe_clip=args.clahe_clip, clahe_grid=(args.clahe_grid, args.clahe_grid))
    with _run_lock(out):
        _echo_config("augment", {
            "data": args.data, "out": args.out, "target": args.target, "seed": args.seed,
            "rotation": args.rotation, "zoom": args.zoom,
            "elastic_alpha": args.elastic_alpha, "elastic_sigma": args.elastic_sigma,
            "clahe_clip": args.clahe_clip, "clahe_grid": args.clahe_grid})
        ds = dataio.load_dataset(args.data)
        manifest_rows = ["generated_path\tsource_path\toperator\tseed"]
        by_class: list[list[dataio.LabeledSample]] = [[] for _ in ds.class_names]
        for s in ds.samples:
            by_class[s.label].append(s)
        for label, originals in enumerate(by_class):
            name = ds.class_names[label]
            if not originals:
                raise ValidationError(f"class {name!r} is empty; nothing to augment")
            rel_of: list[str] = []
            for s in originals:
                src_path = Path(s.image)
                rel = f"{name}/{src_path.name}"
                _write_atomic(out / rel, src_path.read_bytes())
                rel_of.append(rel)
            n_gen = args.target - len(originals)
            if n_gen <= 0:
                print(f"{name}: {len(originals)} originals (already at target)")
                continue
            sources = [dataio.sample_image(s) for s in originals]
            for item in range(n_gen):
                op, src, rng = aug.generation_plan(args.seed, label, item, len(sources))
                img = aug.apply_operator(op, sources[src], cfg, rng)
                rel = f"{name}/aug_{item:05d}_{op}.png"
                buf = _encode_png(img)
                _write_atomic(out / rel, buf)
                manifest_rows.append(f"{rel}\t{rel_of[src]}\t{op}\t{args.seed}")
            print(f"{name}: {len(originals)} originals + {n_gen} generated")
        _write_atomic(out / dataio.MANIFEST_NAME, "\n".join(manifest_rows) + "\n")
    return 0


def _encode_png(img: np.ndarray) -> bytes:
    import io
    buf = io.BytesIO()
    PILImage.fromarray(img).save(buf, format="PNG")
    return buf.getvalue()


def cmd_train(args) -> int:
    out = Path(args.out)
    with _run_lock(out):
        resolved = _echo_config("train", {
            "data": args.data, "out": args.out, "classes": args.classes,
            "epochs": args.epochs, "batch": args.batch, "lr": args.lr, "seed": args.seed,
            "split_level": args.split_level, "shuffle": not args.no_shuffle})
        _write_atomic(out / "config.json", json.dumps(resolved, indent=2, sort_keys=True) + "\n")

        ds = _dataset_for_classes(args.data, args.classes)
        spec = dataio.SplitSpec(seed=args.seed, level=args.split_level)
        train_ds, val_ds, _ = dataio.stratified_split(ds, spec)
        x_tr, y_tr = _materialize(train_ds)
        x_va, y_va = _materialize(val_ds)

        model = build_model(args.classes, seed=args.seed)
        config = optim.TrainConfig(epochs=args.epochs, batch_size=args.batch,
                                   seed=args.seed, shuffle=not args.no_shuffle)
        state = optim.init_adam(model.params, lr=args.lr)

        weights_path = out / "weights.cvxw"

        def run_training():
            history = optim.fit(model, (x_tr, y_tr), (x_va, y_va), config, state)
            save_weights(model, weights_path)
            return history

        def run_final_eval():
            # score the serialized artifact so `evaluate` reproduces this exactly
            final = load_weights(weights_path)
            return _evaluation(final, x_va, y_va, ds.class_names)

        results, rr = measure_resources(model, train_run=run_training,
                                        test_run=run_final_eval)
        history = results["train"]
        loss, report = results["test"]

        _write_atomic(out / "history.tsv", history.table())
        _write_atomic(out / "metrics_val.json", _eval_payload(loss, report))
        _write_atomic(out / "metrics_val.txt",
                      metrics.render_report(report, "text") + f"loss: {loss!r}\n")
        _write_atomic(out / "resources.txt", render_resource_report(rr))

        last = history.records[-1]
        print(f"trained {args.epochs} epochs; final train acc {last.train_acc:.4f}, "
              f"val acc {report.accuracy:.4f}")
        print(f"weights: {weights_path}")
    return 0


def cmd_evaluate(args) -> int:
    model = load_weights(args.weights)
    _echo_config("evaluate", {
        "data": args.data, "weights": args.weights, "split": args.split,
        "seed": args.seed, "split_level": args.split_level, "format": args.format,
        "out": args.out})
    ds = _dataset_for_classes(args.data, model.num_classes)
    spec = dataio.SplitSpec(seed=args.seed, level=args.split_level)
    parts = dict(zip(("train", "val", "test"), dataio.stratified_split(ds, spec)))
    x, y = _materialize(parts[args.split])

    def run_eval():
        return _evaluation(model, x, y, ds.class_names)

    results, rr = measure_resources(model, test_run=run_eval)
    loss, report = results["test"]
    print(metrics.render_report(report, args.format), end="")
    print(f"loss: {loss!r}")
    if args.out:
        out = Path(args.out)
        with _run_lock(out):
            _write_atomic(out / f"metrics_{args.split}.json", _eval_payload(loss, report))
            _write_atomic(out / f"metrics_{args.split}.txt",
                          metrics.render_report(report, "text") + f"loss: {loss!r}\n")
            _write_atomic(out / "resources.txt", render_resource_report(rr))
    return 0


def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def cmd_crossval(args) -> int:
    out = Path(args.out)
    with _run_lock(out):
        resolved = _echo_config("crossval", {
            "data": args.data, "out": args.out, "classes": args.classes,
            "folds": args.folds, "epochs": args.epochs, "batch": args.batch,
            "lr": args.lr, "seed": args.seed})
        _write_atomic(out / "config.json", json.dumps(resolved, indent=2, sort_keys=True) + "\n")

        ds = _dataset_for_classes(args.data, args.classes)
        folds = dataio.kfold(ds, k=args.folds, seed=args.seed)
        x_all, y_all = _materialize(ds)

        fold_results = []
        for f, held in enumerate(folds):
            train_idx = np.array(sorted(set(range(len(ds.samples))) - set(held)))
            held_idx = np.array(held)
            seed_f = _fold_seed(args.seed, f)
            model = build_model(args.classes, seed=seed_f)
            config = optim.TrainConfig(epochs=args.epochs, batch_size=args.batch, seed=seed_f)
            state = optim.init_adam(model.params, lr=args.lr)
            optim.fit(model, (x_all[train_idx], y_all[train_idx]),
                      (x_all[held_idx], y_all[held_idx]), config, state)
            loss, report = _evaluation(model, x_all[held_idx], y_all[held_idx], ds.class_names)
            fold_results.append((loss, report))
            print(f"fold {f}: accuracy {report.accuracy:.6f}")

        accs = [r.accuracy for _, r in fold_results]
        mean = float(np.mean(accs))
        std = float(np.std(accs))
        print(f"mean accuracy: {mean:.6f}  std: {std:.6f}")

        payload = {
            "folds": [json.loads(_eval_payload(l, r)) for l, r in fold_results],
            "accuracies": accs,
            "mean_accuracy": mean,
            "std_accuracy": std,
        }
        _write_atomic(out / "crossval.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
        lines = [f"fold {i}: {a!r}" for i, a in enumerate(accs)]
        lines += [f"mean: {mean!r}", f"std: {std!r}"]
        _write_atomic(out / "crossval.txt", "\n".join(lines) + "\n")
    return 0


def cmd_predict(args) -> int:
    model = load_weights(args.weights)
    _echo_config("predict", {"weights": args.weights, "images": list(args.images),
                             "format": args.format})
    rows = []
    for path in args.images:
        img = dataio.read_image(path)
        x = dataio.preprocess(img)[None]
        label, probs = predict(model, x)[0]
        rows.append({"image": path, "label": label,
                     "probabilities": [float(p) for p in probs]})
    if args.format == "structured":
        print(json.dumps(rows, indent=2, sort_keys=True))
    else:
        for r in rows:
            probs = " ".join(f"{p:.6f}" for p in r["probabilities"])
            print(f"{r['image']}\t{r['label']}\t{probs}")
    return 0


def cmd_bench(args) -> int:
    _echo_config("bench", {"classes": args.classes, "batch": args.batch,
                           "steps": args.steps, "seed": args.seed})
    model = build_model(args.classes, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    x = rng.uniform(0.0, 1.0, size=(args.batch, *model.input_shape))
    y = rng.integers(0, args.classes, size=args.batch)
    config = optim.TrainConfig(epochs=1, batch_size=args.batch, seed=args.seed, shuffle=False)
    state = optim.init_adam(model.params)

    def train_steps():
        t_rng = np.random.default_rng(args.seed)
        for _ in range(args.steps):
            optim.train_epoch(model, state, (x, y), config, t_rng)

    def test_steps():
        for _ in range(args.steps):
            _predict_labels(model, x)

    _, rr = measure_resources(model, train_run=train_steps, test_run=test_steps)
    print(render_resource_report(rr), end="")
    print(f"(times cover {args.steps} steps over a batch of {args.batch})")
    return 0


# ---------------------------------------------------------------- parser

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cytocnn",
        description="From-scratch CNN pipeline for cervical cell image classification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="expand a dataset directory with augmented images")
    p.add_argument("--data", required=True, help="source dataset directory")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--target", type=int, default=5000, help="images per class after expansion")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rotation", type=float, default=45.0)
    p.add_argument("--zoom", type=float, default=1.2)
    p.add_argument("--elastic-alpha", type=float, default=15.0)
    p.add_argument("--elastic-sigma", type=float, default=8.0)
    p.add_argument("--clahe-clip", type=float, default=2.0)
    p.add_argument("--clahe-grid", type=int, default=8)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, choices=(3, 5), default=5)
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-level", choices=("source", "sample"), default="source")
    p.add_argument("--no-shuffle", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate saved weights on a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="val")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-level", choices=("source", "sample"), default="source")
    p.add_argument("--format", choices=("text", "structured"), default="text")
    p.add_argument("--out", default=None, help="optional directory for report files")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("crossval", help="k-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, choices=(3, 5), default=5)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("predict", help="classify image files with saved weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--format", choices=("text", "structured"), default="text")
    p.add_argument("images", nargs="+", help="image files to classify")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect", help="print architecture, parameter and size accounting")
    p.add_argument("--classes", type=int, choices=(3, 5), default=3)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench", help="wall-clock timing of train/inference steps")
    p.add_argument("--classes", type=int, choices=(3, 5), default=3)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--steps", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    return parser


def dispatch(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        rc = args.func(args)
        return 0 if rc is None else int(rc)
    except (CytoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
