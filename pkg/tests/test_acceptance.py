"""Acceptance gate. Each test appends one PASS/FAIL line that is printed in
the "acceptance criteria" section of the pytest summary."""
import io
import math
import os
import time
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np
import pytest

from aslnet import cli
from aslnet import gradcheck as gc
from aslnet import layers as L
from aslnet.augment import AugmentPlan, augment_dataset, plan_groups
from aslnet.data import Dataset, make_synthetic
from aslnet.metrics import ConfusionMatrix, compute_metrics
from aslnet.model import ModelConfig, build_model
from aslnet.tensor import Rng, gaussian
from aslnet.train import TrainConfig, train
from conftest import ACCEPTANCE_LINES
from test_layers import conv_loops, pool_loops

GOLDEN_ROWS = [
    ("Input layer", "[(None, 50, 50, 3)]", 0),
    ("Conv2D", "(None, 48, 48, 32)", 896),
    ("Batch Normalization", "(None, 48, 48, 32)", 128),
    ("Conv2D", "(None, 46, 46, 64)", 18496),
    ("Conv2D", "(None, 44, 44, 128)", 73856),
    ("MaxPooling2D", "(None, 22, 22, 128)", 0),
    ("Dropout", "(None, 22, 22, 128)", 0),
    ("Batch Normalization", "(None, 22, 22, 128)", 512),
    ("Conv2D", "(None, 20, 20, 256)", 295168),
    ("MaxPooling2D", "(None, 10, 10, 256)", 0),
    ("Flatten", "(None, 25600)", 0),
    ("Dense", "(None, 64)", 1638464),
    ("Dense", "(None, 30)", 1950),
]


def record(num: int, title: str, ok: bool, detail: str):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}: {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert ok, detail


def test_01_summary_golden():
    t0 = time.perf_counter()
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = cli.main(["summary", "--classes", "30"])
    secs = time.perf_counter() - t0
    text = buf.getvalue()
    lines = text.splitlines()[2:15]
    got = [(ln[:22].strip(), ln[22:48].strip(), int(ln[48:].strip())) for ln in lines]
    totals = ["Total params: 2,029,470", "Trainable params: 2,029,150", "Non-trainable params: 320"]
    ok = code == 0 and got == GOLDEN_ROWS and all(t in text for t in totals) and secs < 1.0
    record(1, "layer table golden values", ok, f"13 rows exact={got == GOLDEN_ROWS}, exit {code}, {secs:.2f}s")


def test_02_gradient_suite():
    t0 = time.perf_counter()
    results = gc.run_all(seeds=(0, 1, 2), full_stack=True)
    secs = time.perf_counter() - t0
    worst_layer = max(r.max_rel_error for r in results if r.name != "full_stack")
    worst_stack = max(r.max_rel_error for r in results if r.name == "full_stack")
    failed = [f"{r.name}@{r.seed}" for r in results if not r.passed]
    ok = not failed and worst_layer < 1e-5 and worst_stack < 1e-4 and secs < 120
    record(2, "gradient suite, 3 seeds", ok,
           f"{len(results)} checks, worst layer {worst_layer:.2e}, worst full stack {worst_stack:.2e}, "
           f"failed={failed}, {secs:.1f}s")


def test_03_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    conv_err, pool_exact = 0.0, True
    for _ in range(20):
        n, h, w = rng.integers(1, 3), rng.integers(3, 9), rng.integers(3, 9)
        cin, cout = rng.integers(1, 4), rng.integers(1, 5)
        x = rng.uniform(-1, 1, (n, h, w, cin)).astype(np.float32)
        lim = L.glorot_limit(*L.conv_fans(3, 3, cin, cout))
        k = rng.uniform(-lim, lim, (3, 3, cin, cout)).astype(np.float32)
        b = rng.uniform(-0.1, 0.1, cout).astype(np.float32)
        conv_err = max(conv_err, float(np.abs(L.conv2d_forward(x, k, b) - conv_loops(x, k, b)).max()))
    for _ in range(20):
        n, h, w, c = rng.integers(1, 3), 2 * rng.integers(1, 5), 2 * rng.integers(1, 5), rng.integers(1, 4)
        x = rng.standard_normal((n, h, w, c)).astype(np.float32)
        pool_exact &= bool(np.array_equal(L.maxpool2x2_forward(x)[0], pool_loops(x)))
    secs = time.perf_counter() - t0
    ok = conv_err < 1e-6 and pool_exact and secs < 30
    record(3, "conv/maxpool vs nested loops", ok,
           f"conv max-abs {conv_err:.2e} (float32), maxpool exact={pool_exact}, {secs:.1f}s")


@pytest.mark.slow
def test_04_overfit_synthetic():
    ds = make_synthetic(num_classes=8, per_class=16, size=50, seed=0)
    cfg = TrainConfig(epochs=300, batch_size=32, optimizer="rmsprop", learning_rate=0.001,
                      num_classes=8, seed=0, record_time=False)
    t0 = time.perf_counter()
    _, history = train(cfg, ds, callback=lambda r: r.train_accuracy == 1.0 and r.train_loss < 0.01)
    secs = time.perf_counter() - t0
    last = history[-1]
    ok = last.train_accuracy == 1.0 and last.train_loss < 0.01 and len(history) <= 300 and secs < 600
    record(4, "overfit 8x16 synthetic", ok,
           f"epoch {last.epoch}: train_acc {last.train_accuracy:.4f}, train_loss {last.train_loss:.5f}, "
           f"{secs:.0f}s")


def test_05_augmentation_arithmetic():
    n = 400
    labels = np.arange(n) % 4
    ds = Dataset(np.random.default_rng(0).random((n, 4, 4, 3)).astype(np.float32), labels,
                 ["a", "b", "c", "d"], [f"s{i}" for i in range(n)])
    plan = AugmentPlan(fraction=0.25, seed=0)
    out = augment_dataset(ds, plan)
    groups = plan_groups(n, plan)
    src = np.concatenate(groups)
    disjoint = len(set(src.tolist())) == 100
    sizes = [len(g) for g in groups]
    labels_ok = np.array_equal(out.labels[n:], labels[src])
    big = 87000 + sum(len(g) for g in plan_groups(87000, AugmentPlan(fraction=0.25)))
    ok = len(out) == 500 and sizes == [25] * 4 and disjoint and labels_ok and big == 108750
    record(5, "augmentation arithmetic", ok,
           f"400 -> {len(out)}, groups {sizes}, disjoint={disjoint}, labels kept={labels_ok}, "
           f"87,000 -> {big:,}")


def test_06_statistics():
    z = gaussian(Rng(0), 0.0, 1.0, 10**6, np.float64)
    g = gaussian(Rng(1), 3.0, 0.5, 10**6, np.float64)
    gauss_ok = (abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.02
                and abs(g.mean() - 3.0) < 0.01 * 3.0 and abs(g.std() - 0.5) < 0.02 * 0.5)
    x = np.ones((10**6,), np.float32)
    y = L.dropout_forward(x, L.dropout_mask(Rng(2), x.shape, 0.2), 0.2)
    drop_ok = abs(y.mean() - 1.0) < 0.02
    bound = math.sqrt(6 / (300 + 200))
    w = L.glorot_uniform(Rng(3), 300, 200, (10**5,))
    glorot_ok = bool(np.abs(w).max() <= bound and np.abs(w).max() > 0.95 * bound)
    ok = gauss_ok and drop_ok and glorot_ok
    record(6, "sampler statistics", ok,
           f"N(0,1) mean {z.mean():+.4f} std {z.std():.4f}; dropout mean {y.mean():.4f}; "
           f"glorot max/bound {np.abs(w).max() / bound:.4f}")


def test_07_normalization_and_shapes():
    rng = np.random.default_rng(7)
    logits = rng.normal(0, 5, (256, 30)).astype(np.float32)
    sm_err = float(np.abs(L.softmax(logits).sum(axis=1) - 1).max())
    bn_mu, bn_var = 0.0, 0.0
    for scale in (2.0, 3.0, 10.0):
        x = rng.normal(1.5, scale, (32, 6, 6, 16)).astype(np.float32)
        c = x.shape[-1]
        yb, _ = L.batchnorm_forward(x, np.ones(c, np.float32), np.zeros(c, np.float32),
                                    np.zeros(c, np.float32), np.ones(c, np.float32), training=True)
        flat = yb.reshape(-1, c).astype(np.float64)
        bn_mu = max(bn_mu, float(np.abs(flat.mean(axis=0)).max()))
        bn_var = max(bn_var, float(np.abs(flat.var(axis=0) - 1).max()))
    model = build_model(ModelConfig(num_classes=29), Rng(0))
    probs = model.forward(rng.random((3, 50, 50, 3)).astype(np.float32), training=False)
    ok = sm_err < 1e-6 and bn_mu < 1e-5 and bn_var < 1e-3 and probs.shape == (3, 29)
    record(7, "softmax / batch-norm / forward shape", ok,
           f"softmax row err {sm_err:.1e}; BN max|mu| {bn_mu:.1e}, max|var-1| {bn_var:.1e}; "
           f"forward {probs.shape}")


def test_08_metrics_golden():
    cm = ConfusionMatrix(2)
    cm.counts = np.array([[2, 1], [0, 3]])
    m = compute_metrics(cm)
    got = (m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1)
    want = (0.83333, 0.875, 0.83333, 0.82857)
    ok = all(abs(a - b) < 1e-5 for a, b in zip(got, want))
    record(8, "metrics golden values", ok, " ".join(f"{v:.5f}" for v in got))


def test_09_determinism(tmp_path):
    ds = make_synthetic(num_classes=8, per_class=16, size=50, seed=0)
    t0 = time.perf_counter()
    for k in range(2):
        train(TrainConfig(epochs=2, batch_size=32, num_classes=8, seed=11, out_dir=tmp_path / f"r{k}",
                          record_time=False), ds)
    secs = time.perf_counter() - t0
    same_w = (tmp_path / "r0" / "model.aslw").read_bytes() == (tmp_path / "r1" / "model.aslw").read_bytes()
    same_h = (tmp_path / "r0" / "history.csv").read_bytes() == (tmp_path / "r1" / "history.csv").read_bytes()
    ok = same_w and same_h and secs < 60
    record(9, "bitwise determinism, 2 epochs x 2 runs", ok,
           f"model.aslw identical={same_w}, history.csv identical={same_h}, {secs:.1f}s")


ASL_ROOT = os.environ.get("ASL_ALPHABET_DIR")


@pytest.mark.offline
@pytest.mark.skipif(not ASL_ROOT, reason="offline criterion: set ASL_ALPHABET_DIR to the Kaggle train tree")
def test_10_kaggle_validation_accuracy(tmp_path):
    import sys

    sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "scripts"))
    from train_asl import run_default_pipeline

    history = run_default_pipeline(Path(ASL_ROOT), tmp_path, epochs=20)
    best = max(r.val_accuracy for r in history)
    record(10, "ASL Alphabet val accuracy within 20 epochs", best >= 0.97, f"best val_acc {best:.4f}")
