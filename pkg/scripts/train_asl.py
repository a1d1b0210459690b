"""Default pipeline on the Kaggle ASL Alphabet training tree.

Loads every class directory, augments a quarter of the images, splits 60/20/20
and trains with RMSProp at batch 128. Expect hours per epoch on a CPU and
roughly 8 GB of RAM for the float32 arrays.

    python3 scripts/train_asl.py --data ~/asl_alphabet_train --out runs/asl --epochs 20
"""
from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from aslnet.augment import AugmentPlan
from aslnet.cli import prepare
from aslnet.data import load_directory
from aslnet.metrics import write_metrics_csv
from aslnet.train import TrainConfig, config_dict, evaluate, train


def run_default_pipeline(data: Path, out: Path, epochs: int = 20, seed: int = 0, split_first: bool = False,
                         batch_size: int = 128):
    ds = load_directory(data)
    logging.info("loaded %d images in %d classes", len(ds), ds.num_classes)
    plan = AugmentPlan(fraction=0.25, seed=seed)
    ds, manifest = prepare(ds, plan, seed, split_first)
    out.mkdir(parents=True, exist_ok=True)
    manifest.to_csv(out / "manifest.csv")
    cfg = TrainConfig(epochs=epochs, batch_size=batch_size, optimizer="rmsprop", seed=seed,
                      num_classes=ds.num_classes, augment=plan, out_dir=out, checkpoint_every=1)
    (out / "config.json").write_text(json.dumps(config_dict(cfg), indent=2, default=str) + "\n")
    model, history = train(cfg, ds.subset(manifest.indices("train")), ds.subset(manifest.indices("val")))
    result = evaluate(model, ds.subset(manifest.indices("test")))
    result.confusion.to_csv(out / "confusion.csv")
    write_metrics_csv(result.report, out / "metrics.csv")
    logging.info("test accuracy %.5f", result.accuracy)
    return history


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", type=Path, required=True)
    ap.add_argument("--out", type=Path, default=Path("runs/asl"))
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--split-first", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    history = run_default_pipeline(args.data, args.out, args.epochs, args.seed, args.split_first)
    best = max(r.val_accuracy for r in history)
    print(f"best val_acc {best:.4f} ({'>=' if best >= 0.97 else '<'} 0.97 target)")


if __name__ == "__main__":
    main()
