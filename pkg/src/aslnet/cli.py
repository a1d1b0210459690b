"""Command-line entry point: train, evaluate, predict, augment, summary, gradcheck."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .augment import AugmentPlan, augment_dataset
from .data import (ORIGINAL, Dataset, Manifest, ManifestRow, load_directory, split,
                   write_directory)
from .errors import ASLError, ConfigError
from .metrics import write_metrics_csv
from .model import (GOLDEN_COUNTS, GOLDEN_TOTALS, ModelConfig, build_model, format_summary,
                    load_weights)
from .tensor import Rng
from .train import TrainConfig, config_dict, evaluate, predict, train

log = logging.getLogger("aslnet")

EXIT_CHECK_FAILED = 4


def _concat(a: Dataset, b: Dataset) -> Dataset:
    return Dataset(np.concatenate([a.images, b.images]), np.concatenate([a.labels, b.labels]),
                   list(a.class_names), a.paths + b.paths, a.origins + b.origins)


def prepare(ds: Dataset, plan: AugmentPlan | None, seed: int, split_first: bool) -> tuple[Dataset, Manifest]:
    """Augment (optionally) and split. By default augmentation happens before
    the split; ``split_first`` augments only the training portion."""
    if plan is None:
        return ds, split(ds, seed=seed)
    if not split_first:
        ds = augment_dataset(ds, plan)
        return ds, split(ds, seed=seed)
    manifest = split(ds, seed=seed)
    train_idx = manifest.indices("train")
    grown = augment_dataset(ds.subset(train_idx), plan)
    extra = grown.subset(np.arange(len(train_idx), len(grown)))
    rows = manifest.rows + [ManifestRow(extra.paths[i], ds.class_names[extra.labels[i]], int(extra.labels[i]),
                                        "train", extra.origins[i]) for i in range(len(extra))]
    return _concat(ds, extra), Manifest(rows)


def _plan(args) -> AugmentPlan | None:
    if not getattr(args, "augment", True):
        return None
    return AugmentPlan(fraction=args.fraction, noise_sigma=args.noise_sigma, fill=args.fill, seed=args.seed)


def cmd_train(args) -> int:
    ds = load_directory(args.data, crop=args.center_crop)
    num_classes = args.classes or ds.num_classes
    if num_classes < ds.num_classes:
        raise ConfigError(f"--classes {num_classes} is smaller than the {ds.num_classes} classes found")
    plan = _plan(args)
    ds, manifest = prepare(ds, plan, args.seed, args.split_first)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest.to_csv(out / "manifest.csv")
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, optimizer=args.optimizer,
                      learning_rate=args.lr, seed=args.seed, num_classes=num_classes, augment=plan,
                      out_dir=out, checkpoint_every=args.checkpoint_every, drop_last=args.drop_last,
                      record_time=not args.no_wall_time)
    (out / "config.json").write_text(json.dumps(config_dict(cfg), indent=2, default=str) + "\n")
    train_set = ds.subset(manifest.indices("train"))
    val_idx, test_idx = manifest.indices("val"), manifest.indices("test")
    val_set = ds.subset(val_idx) if len(val_idx) else None
    model, history = train(cfg, train_set, val_set)
    last = history[-1]
    print(f"trained {len(history)} epochs: train_acc={last.train_accuracy:.4f} "
          f"val_acc={last.val_accuracy:.4f}")
    if len(test_idx):
        result = evaluate(model, ds.subset(test_idx), batch_size=args.batch_size)
        result.confusion.to_csv(out / "confusion.csv")
        write_metrics_csv(result.report, out / "metrics.csv")
        _print_report(result, "test")
    return 0


def _print_report(result, label: str):
    r = result.report
    print(f"{label}: loss={result.loss:.5f} accuracy={r.accuracy:.5f} precision={r.macro_precision:.5f} "
          f"recall={r.macro_recall:.5f} f1={r.macro_f1:.5f} (n={result.confusion.total})")


def _select(ds: Dataset, args) -> Dataset:
    if args.manifest:
        manifest = Manifest.from_csv(args.manifest)
        want = args.split or "test"
        where = {p: i for i, p in enumerate(ds.paths)}
        idx, skipped = [], 0
        for r in manifest.rows:
            if r.split != want:
                continue
            if r.origin != ORIGINAL:
                skipped += 1
                continue
            if r.path not in where:
                raise ConfigError(f"manifest path {r.path} not found under {args.data}")
            idx.append(where[r.path])
        if skipped:
            log.warning("skipped %d augmented %s rows (not stored on disk)", skipped, want)
        return ds.subset(idx)
    if args.split:
        return ds.subset(split(ds, seed=args.seed).indices(args.split))
    return ds


def cmd_evaluate(args) -> int:
    model = load_weights(args.weights)
    ds = _select(load_directory(args.data, crop=args.center_crop), args)
    result = evaluate(model, ds, batch_size=args.batch_size)
    out = Path(args.out) if args.out else Path(args.weights).parent
    out.mkdir(parents=True, exist_ok=True)
    result.confusion.to_csv(out / "confusion.csv")
    write_metrics_csv(result.report, out / "metrics.csv")
    _print_report(result, args.split or "all")
    return 0


def _class_names(manifest_path: Path | None, num_classes: int) -> list[str] | None:
    if manifest_path is None or not manifest_path.exists():
        return None
    names = {r.label_id: r.label_name for r in Manifest.from_csv(manifest_path).rows}
    if len(names) > num_classes:
        return None
    return [names.get(i, str(i)) for i in range(num_classes)]


def cmd_predict(args) -> int:
    model = load_weights(args.weights)
    manifest = Path(args.manifest) if args.manifest else Path(args.weights).parent / "manifest.csv"
    names = _class_names(manifest, model.cfg.num_classes)
    ranked = predict(model, args.image, top_k=args.top_k, class_names=names, crop=args.center_crop)
    for name, p in ranked:
        print(f"{name}\t{p:.6f}")
    return 0


def cmd_augment(args) -> int:
    ds = load_directory(args.data, crop=args.center_crop)
    plan = AugmentPlan(fraction=args.fraction, noise_sigma=args.noise_sigma, fill=args.fill, seed=args.seed)
    aug = augment_dataset(ds, plan)
    out = write_directory(aug, args.out)
    with open(out / "augment.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["source_path", "label_name", "label_id", "origin"])
        for i in range(len(aug)):
            w.writerow([aug.paths[i], aug.class_names[aug.labels[i]], int(aug.labels[i]), aug.origins[i]])
    print(f"{len(ds)} -> {len(aug)} samples written to {out}")
    return 0


def cmd_summary(args) -> int:
    model = build_model(ModelConfig(num_classes=args.classes), Rng(0))
    rows = model.summary()
    totals = model.count_params()
    print(format_summary(rows, totals))
    if args.classes != 30:
        return 0
    ok = tuple(r.params for r in rows) == GOLDEN_COUNTS and totals == GOLDEN_TOTALS
    print("golden parameter counts: " + ("match" if ok else "MISMATCH"))
    return 0 if ok else EXIT_CHECK_FAILED


def cmd_gradcheck(args) -> int:
    seeds = args.seeds if args.seeds else [args.seed]
    results = gc.run_all(seeds, full_stack=not args.layers_only)
    print(gc.format_report(results))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK_FAILED if failed else 0


def _add_aug_flags(p, with_toggle: bool):
    if with_toggle:
        p.add_argument("--augment", action="store_true", help="augment before training")
    p.add_argument("--fraction", type=float, default=0.25)
    p.add_argument("--noise-sigma", type=float, default=0.04)
    p.add_argument("--fill", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aslnet", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a class-per-directory image tree")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--optimizer", choices=["rmsprop", "adam"], default="rmsprop")
    p.add_argument("--lr", type=float, default=None, help="default 0.001 (rmsprop) or 0.01 (adam)")
    p.add_argument("--classes", type=int, default=None, help="output classes (default: number of dirs)")
    p.add_argument("--seed", type=int, default=0)
    _add_aug_flags(p, with_toggle=True)
    p.add_argument("--split-first", action="store_true", help="split before augmenting; augment train only")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--drop-last", action="store_true")
    p.add_argument("--center-crop", action="store_true", help="crop instead of resize to 50x50")
    p.add_argument("--no-wall-time", action="store_true", help="write 0 in the seconds column")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="confusion matrix and metrics for saved weights")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--out", default=None)
    p.add_argument("--center-crop", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="rank classes for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--manifest", default=None, help="class names (default: manifest.csv next to weights)")
    p.add_argument("--center-crop", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("augment", help="write an augmented copy of an image tree")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_aug_flags(p, with_toggle=False)
    p.add_argument("--center-crop", action="store_true")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("summary", help="print the layer table")
    p.add_argument("--classes", type=int, default=29)
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, nargs="+", default=None)
    p.add_argument("--layers-only", action="store_true")
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ASLError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
