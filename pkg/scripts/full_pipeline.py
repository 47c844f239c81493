#!/usr/bin/env python3
"""End-to-end run of the full pipeline on a real five-class cell-image dataset:
expand each class to 5,000 images, train the five-class and three-class models
on a sample-level 70/20/10 split, evaluate on the test split, and run five-fold
cross-validation. Achieved metrics are printed next to the published reference
figures for this architecture/dataset combination so they can be compared by
hand.

This is an hours-long run on the full 25,000-image enhanced dataset and is not
part of the test suite. Expect results to differ somewhat from the reference
figures: the published training setup leaves learning rate, batch size, and
the metric-averaging scheme unspecified.

Usage:
    python scripts/full_pipeline.py --data <dataset_root> --out <run_dir>
"""
import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from cytocnn.cli import dispatch  # noqa: E402

# Published reference figures for this architecture on the enhanced dataset.
REFERENCE = {
    "five_class_accuracy": 0.9860,
    "three_class_accuracy": 0.9804,
    "five_fold_mean_accuracy": 0.9679,
}


def run(argv):
    print("+ cytocnn " + " ".join(argv))
    rc = dispatch(argv)
    if rc != 0:
        sys.exit(rc)


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data", required=True, help="five-class dataset root")
    ap.add_argument("--out", required=True, help="run directory")
    ap.add_argument("--target", type=int, default=5000, help="images per class")
    ap.add_argument("--epochs", type=int, default=25)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--lr", type=float, default=0.001)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--skip-augment", action="store_true",
                    help="--data already points at an expanded dataset")
    ap.add_argument("--skip-crossval", action="store_true")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    expanded = args.data if args.skip_augment else str(out / "expanded")

    if not args.skip_augment:
        run(["augment", "--data", args.data, "--out", expanded,
             "--target", str(args.target), "--seed", str(args.seed)])

    common = ["--epochs", str(args.epochs), "--batch", str(args.batch),
              "--lr", str(args.lr), "--seed", str(args.seed)]
    achieved = {}
    for classes, key in ((5, "five_class_accuracy"), (3, "three_class_accuracy")):
        run_dir = out / f"train_{classes}c"
        run(["train", "--data", expanded, "--out", str(run_dir),
             "--classes", str(classes), "--split-level", "sample", *common])
        run(["evaluate", "--data", expanded, "--weights", str(run_dir / "weights.cvxw"),
             "--split", "test", "--seed", str(args.seed), "--split-level", "sample",
             "--out", str(run_dir)])
        metrics = json.loads((run_dir / "metrics_test.json").read_text())
        achieved[key] = metrics["metrics"]["accuracy"]

    if not args.skip_crossval:
        cv_dir = out / "crossval_5c"
        run(["crossval", "--data", expanded, "--out", str(cv_dir),
             "--classes", "5", "--folds", str(args.folds), *common])
        cv = json.loads((cv_dir / "crossval.json").read_text())
        achieved["five_fold_mean_accuracy"] = cv["mean_accuracy"]

    print("\n=== achieved vs reference ===")
    for key, ref in REFERENCE.items():
        got = achieved.get(key)
        shown = f"{got:.4f}" if got is not None else "skipped"
        print(f"{key:28s}  achieved {shown}   reference {ref:.4f}")
    (out / "summary.json").write_text(
        json.dumps({"achieved": achieved, "reference": REFERENCE}, indent=2,
                   sort_keys=True) + "\n")
    print(f"summary written to {out / 'summary.json'}")


if __name__ == "__main__":
    main()
