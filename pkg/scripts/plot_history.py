"""Plot accuracy and loss curves from a history.csv (needs matplotlib)."""
import argparse
from pathlib import Path

from aslnet.train import read_history


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("history", type=Path)
    ap.add_argument("--out", type=Path, default=None, help="PNG path (default: next to the CSV)")
    args = ap.parse_args()
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise SystemExit("plot_history.py needs matplotlib: pip install matplotlib")

    h = read_history(args.history)
    ep = [r.epoch for r in h]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 4))
    a1.plot(ep, [r.train_accuracy for r in h], label="train")
    a1.plot(ep, [r.val_accuracy for r in h], label="validation")
    a1.set_xlabel("epoch")
    a1.set_ylabel("accuracy")
    a1.legend()
    a2.plot(ep, [r.train_loss for r in h], label="train")
    a2.plot(ep, [r.val_loss for r in h], label="validation")
    a2.set_xlabel("epoch")
    a2.set_ylabel("loss")
    a2.legend()
    fig.tight_layout()
    out = args.out or args.history.with_suffix(".png")
    fig.savefig(out, dpi=120)
    print(out)


if __name__ == "__main__":
    main()
