import os
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aslnet.data import (Dataset, Manifest, center_crop, decode_raw, encode_raw, load_directory,
                         load_image, normalize, quantize, resize_bilinear, split, write_directory)
from aslnet.errors import IngestionError, ParameterError, SplitError
from conftest import write_tree


def naive_resize(img, oh, ow):
    h, w, c = img.shape
    out = np.zeros((oh, ow, c))
    for i in range(oh):
        for j in range(ow):
            sy = min(max((i + 0.5) * h / oh - 0.5, 0.0), h - 1)
            sx = min(max((j + 0.5) * w / ow - 0.5, 0.0), w - 1)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            out[i, j] = ((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
                         + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))
    return out


def labelled(n_per_class, classes=3):
    labels = np.repeat(np.arange(classes), n_per_class)
    n = len(labels)
    return Dataset(np.zeros((n, 2, 2, 3), np.float32), labels, [f"k{i}" for i in range(classes)],
                   [f"f{i}.png" for i in range(n)])


def test_load_tree(tree):
    ds = load_directory(tree)
    assert len(ds) == 6
    assert ds.class_names == ["A", "B", "space"]
    assert ds.labels.tolist() == [0, 0, 1, 1, 2, 2]
    assert ds.images.shape == (6, 50, 50, 3)
    assert ds.images.dtype == np.float32
    assert ds.images.min() >= 0 and ds.images.max() <= 1
    assert ds.paths[0] == str(Path("A") / "img_000.raw")


def test_load_png_tree(tmp_path):
    root = write_tree(tmp_path / "d", {"x": 2, "y": 1}, size=(60, 40), fmt="png")
    ds = load_directory(root)
    assert len(ds) == 3 and ds.images.shape[1:] == (50, 50, 3)


def test_load_order_independent_of_creation_order(tmp_path):
    a = write_tree(tmp_path / "a", {"zeta": 2, "alpha": 2}, seed=4)
    b = write_tree(tmp_path / "b", {"alpha": 2, "zeta": 2}, seed=4)
    da, db = load_directory(a), load_directory(b)
    assert da.class_names == db.class_names == ["alpha", "zeta"]
    assert da.paths == db.paths


def test_empty_class_dir(tree):
    (tree / "empty").mkdir()
    with pytest.raises(IngestionError, match="empty"):
        load_directory(tree)


def test_missing_root(tmp_path):
    with pytest.raises(IngestionError, match="nope"):
        load_directory(tmp_path / "nope")


def test_single_class(tmp_path):
    root = write_tree(tmp_path / "d", {"only": 3})
    with pytest.raises(IngestionError):
        load_directory(root)


def test_undecodable_file_named(tree):
    bad = tree / "B" / "zz_broken.png"
    bad.write_bytes(b"not an image at all")
    with pytest.raises(IngestionError, match="zz_broken.png"):
        load_directory(tree)


def test_raw_roundtrip():
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    buf = encode_raw(img)
    assert buf[:4] == b"RAW0"
    assert struct.unpack("<HHB", buf[4:9]) == (5, 7, 3)
    assert len(buf) == 9 + 5 * 7 * 3
    assert np.array_equal(decode_raw(buf), img)


def test_raw_errors():
    with pytest.raises(IngestionError):
        decode_raw(b"XXXX" + bytes(10))
    with pytest.raises(IngestionError):
        decode_raw(encode_raw(np.zeros((2, 2, 3), np.uint8))[:-1])


def test_load_image_grayscale_png(tmp_path):
    from PIL import Image

    Image.fromarray(np.full((10, 10), 200, np.uint8)).save(tmp_path / "g.png")
    img = load_image(tmp_path / "g.png")
    assert img.shape == (50, 50, 3)
    assert np.allclose(img, 200 / 255)


def test_resize_same_size_identity():
    img = np.random.default_rng(1).random((50, 50, 3)).astype(np.float32)
    out = resize_bilinear(img)
    assert np.array_equal(out, img) and out is not img


def test_resize_constant():
    out = resize_bilinear(np.full((200, 137, 3), 0.37, np.float32))
    assert out.shape == (50, 50, 3)
    assert np.allclose(out, 0.37, atol=1e-6)


def test_resize_checkerboard_matches_naive_oracle():
    yy, xx = np.mgrid[0:200, 0:200]
    board = (((yy // 3) + (xx // 3)) % 2).astype(np.float64)
    img = np.stack([board, 1 - board, 0.5 * board], axis=-1)
    assert np.abs(resize_bilinear(img) - naive_resize(img, 50, 50)).max() < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 9), st.integers(1, 9), st.integers(0, 1000))
def test_resize_matches_oracle_any_shape(h, w, oh, ow, seed):
    img = np.random.default_rng(seed).random((h, w, 2))
    out = resize_bilinear(img, oh, ow)
    assert np.abs(out - naive_resize(img, oh, ow)).max() < 1e-9
    assert out.min() >= img.min() - 1e-12 and out.max() <= img.max() + 1e-12


def test_center_crop():
    img = np.arange(200 * 200 * 3, dtype=np.float32).reshape(200, 200, 3)
    out = center_crop(img)
    assert np.array_equal(out, img[75:125, 75:125])


def test_normalize_examples():
    v = normalize(np.array([0, 255, 128], np.uint8))
    assert v[0] == 0.0 and v[1] == 1.0
    assert abs(v[2] - 0.50196) < 1e-5


def test_normalize_roundtrip_exhaustive():
    x = np.arange(256, dtype=np.uint8)
    assert np.array_equal(quantize(normalize(x)), x)


def test_split_10_per_class():
    m = split(labelled(10), seed=0)
    for c in m.counts().values():
        assert c == {"train": 6, "val": 2, "test": 2}


def test_split_11_per_class():
    m = split(labelled(11), seed=0)
    for c in m.counts().values():
        assert c == {"train": 7, "val": 2, "test": 2}


def test_split_determinism():
    ds = labelled(20)
    a, b, c = split(ds, seed=1), split(ds, seed=1), split(ds, seed=2)
    assert a.rows == b.rows
    assert a.rows != c.rows
    assert a.counts() == c.counts()


def test_split_too_small_names_class():
    ds = Dataset(np.zeros((5, 2, 2, 3), np.float32), np.array([0, 0, 0, 1, 1]), ["big", "tiny"],
                 [str(i) for i in range(5)])
    with pytest.raises(SplitError, match="tiny"):
        split(ds)


def test_split_bad_ratios():
    with pytest.raises(ParameterError):
        split(labelled(10), ratios=(0.5, 0.2, 0.2))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(3, 40), min_size=2, max_size=5), st.integers(0, 10**6))
def test_split_partition_property(sizes, seed):
    labels = np.concatenate([np.full(n, i) for i, n in enumerate(sizes)])
    ds = Dataset(np.zeros((len(labels), 1, 1, 3), np.float32), labels,
                 [f"k{i}" for i in range(len(sizes))], [str(i) for i in range(len(labels))])
    m = split(ds, seed=seed)
    idx = np.concatenate([m.indices(s) for s in ("train", "val", "test")])
    assert sorted(idx.tolist()) == list(range(len(labels)))
    for i, n in enumerate(sizes):
        c = m.counts()[f"k{i}"]
        assert c["val"] == c["test"] == int(np.floor(0.2 * n))
        assert c["train"] == n - 2 * int(np.floor(0.2 * n))


def test_manifest_csv(tmp_path):
    m = split(labelled(5), seed=0)
    p = m.to_csv(tmp_path / "manifest.csv")
    raw = p.read_bytes()
    assert raw.startswith(b"path,label_name,label_id,split,origin\n")
    assert b"\r" not in raw
    assert Manifest.from_csv(p).rows == m.rows


def test_manifest_bad_header(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(IngestionError):
        Manifest.from_csv(p)


def test_write_directory_roundtrip(tmp_path, tree):
    ds = load_directory(tree)
    out = write_directory(ds, tmp_path / "copy")
    again = load_directory(out)
    assert again.class_names == ds.class_names
    assert np.abs(again.images - ds.images).max() <= 0.5 / 255 + 1e-6


ASL_ROOT = os.environ.get("ASL_ALPHABET_DIR")


@pytest.mark.offline
@pytest.mark.skipif(not ASL_ROOT, reason="set ASL_ALPHABET_DIR to the asl_alphabet_train tree")
def test_full_asl_tree_counts():
    root = Path(ASL_ROOT)
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    assert len(dirs) == 29
    assert sum(len(list(d.iterdir())) for d in dirs) == 87000
