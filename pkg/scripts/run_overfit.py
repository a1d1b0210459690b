"""Overfit the synthetic 8-class fixture and report how many epochs it takes."""
import argparse
import logging
from pathlib import Path

from aslnet.data import make_synthetic
from aslnet.train import TrainConfig, evaluate, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--lr", type=float, default=0.001)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("runs/overfit"))
    ap.add_argument("--run-all", action="store_true", help="keep going after the target is reached")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    ds = make_synthetic(num_classes=8, per_class=16, seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                      num_classes=8, seed=args.seed, out_dir=args.out)

    def done(rec):
        return not args.run_all and rec.train_accuracy == 1.0 and rec.train_loss < 0.01

    model, history = train(cfg, ds, callback=done)
    last = history[-1]
    print(f"epoch {last.epoch}: train_acc={last.train_accuracy:.4f} train_loss={last.train_loss:.5f}")
    ev = evaluate(model, ds)
    print(f"eval-mode accuracy on the training set: {ev.accuracy:.4f} (loss {ev.loss:.5f})")


if __name__ == "__main__":
    main()
