"""Ingestion of class-per-directory image trees, resize/normalize, stratified
splits and the CSV manifest."""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import IngestionError, InputError, ParameterError, SplitError
from .tensor import Rng

RAW_MAGIC = b"RAW0"
SPLITS = ("train", "val", "test")
ORIGINAL = "original"
_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".raw"}


@dataclass
class Sample:
    image: np.ndarray
    label_id: int
    source_path: str
    origin: str = ORIGINAL


@dataclass
class Dataset:
    """Images [N,H,W,C] float32 in [0,1] plus aligned labels and bookkeeping."""
    images: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    paths: list[str] = field(default_factory=list)
    origins: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if not self.paths:
            self.paths = [f"sample_{i}" for i in range(n)]
        if not self.origins:
            self.origins = [ORIGINAL] * n
        if len(self.images) != n or len(self.paths) != n or len(self.origins) != n:
            raise InputError("dataset fields have inconsistent lengths")
        if list(self.class_names) != sorted(set(self.class_names)):
            raise InputError("class_names must be sorted and unique")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise InputError("label id outside the class list")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.images[i], int(self.labels[i]), self.paths[i], self.origins[i])

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], list(self.class_names),
                       [self.paths[i] for i in idx], [self.origins[i] for i in idx])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


# --- pixel-level helpers ----------------------------------------------------

def normalize(raster: np.ndarray) -> np.ndarray:
    """8-bit raster to float32 in [0, 1]."""
    return np.asarray(raster, dtype=np.uint8).astype(np.float32) / np.float32(255.0)


def quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _axis_taps(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(img: np.ndarray, out_h: int = 50, out_w: int = 50) -> np.ndarray:
    """Half-pixel-centre bilinear resize of an [H,W,C] image."""
    h, w = img.shape[:2]
    if h < 1 or w < 1:
        raise ParameterError(f"cannot resize empty image {img.shape}")
    if (h, w) == (out_h, out_w):
        return np.array(img, copy=True)
    y0, y1, wy = _axis_taps(h, out_h)
    x0, x1, wx = _axis_taps(w, out_w)
    f = np.asarray(img, dtype=np.float64)
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    top = f[y0][:, x0] * (1 - wx) + f[y0][:, x1] * wx
    bot = f[y1][:, x0] * (1 - wx) + f[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return out.astype(img.dtype if np.issubdtype(img.dtype, np.floating) else np.float32)


def center_crop(img: np.ndarray, out_h: int = 50, out_w: int = 50) -> np.ndarray:
    h, w = img.shape[:2]
    if h < out_h or w < out_w:
        return resize_bilinear(img, out_h, out_w)
    top, left = (h - out_h) // 2, (w - out_w) // 2
    return np.array(img[top:top + out_h, left:left + out_w], copy=True)


# --- decoding ---------------------------------------------------------------

def encode_raw(raster: np.ndarray) -> bytes:
    raster = np.asarray(raster, dtype=np.uint8)
    if raster.ndim == 2:
        raster = raster[:, :, None]
    h, w, c = raster.shape
    return RAW_MAGIC + struct.pack("<HHB", h, w, c) + raster.tobytes()


def write_raw(path, raster: np.ndarray) -> Path:
    path = Path(path)
    path.write_bytes(encode_raw(raster))
    return path


def decode_raw(buf: bytes, name: str = "<bytes>") -> np.ndarray:
    if len(buf) < 9 or buf[:4] != RAW_MAGIC:
        raise IngestionError(f"{name}: not a RAW0 image")
    h, w, c = struct.unpack("<HHB", buf[4:9])
    payload = buf[9:]
    if h < 1 or w < 1 or c < 1 or len(payload) != h * w * c:
        raise IngestionError(f"{name}: RAW0 payload size does not match header {h}x{w}x{c}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, c).copy()


def _to_rgb(raster: np.ndarray) -> np.ndarray:
    if raster.ndim == 2:
        raster = raster[:, :, None]
    c = raster.shape[2]
    if c == 1:
        return np.repeat(raster, 3, axis=2)
    if c >= 3:
        return raster[:, :, :3]
    raise IngestionError(f"cannot convert a {c}-channel image to RGB")


def decode_image(path) -> np.ndarray:
    """Read PNG, JPEG or RAW0 into an 8-bit [H,W,3] raster."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise IngestionError(f"{path}: {e.strerror or e}") from e
    if buf[:4] == RAW_MAGIC:
        return _to_rgb(decode_raw(buf, str(path)))
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(io.BytesIO(buf)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise IngestionError(f"{path}: undecodable image ({e})") from e


def load_image(path, size=(50, 50), crop: bool = False) -> np.ndarray:
    img = normalize(decode_image(path))
    fit = center_crop if crop else resize_bilinear
    return fit(img, *size)


def load_directory(root, size=(50, 50), crop: bool = False) -> Dataset:
    """One subdirectory per class; classes and files are taken in sorted order."""
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"{root}: data directory does not exist")
    class_dirs = sorted((p for p in root.iterdir() if p.is_dir() and not p.name.startswith(".")),
                        key=lambda p: p.name)
    if len(class_dirs) < 2:
        raise IngestionError(f"{root}: need at least 2 class subdirectories, found {len(class_dirs)}")
    images, labels, paths = [], [], []
    for label, d in enumerate(class_dirs):
        files = sorted((p for p in d.iterdir()
                        if p.is_file() and not p.name.startswith(".")
                        and p.suffix.lower() in _IMAGE_SUFFIXES), key=lambda p: p.name)
        if not files:
            raise IngestionError(f"{d}: class directory contains no images")
        for p in files:
            images.append(load_image(p, size, crop))
            labels.append(label)
            paths.append(str(p.relative_to(root)))
    return Dataset(np.stack(images), np.array(labels), [d.name for d in class_dirs], paths)


def write_directory(ds: Dataset, out_dir) -> Path:
    """Write every sample as PNG under out_dir/<class>/; augmented copies get the
    op name appended to the stem."""
    from PIL import Image

    out_dir = Path(out_dir)
    for name in ds.class_names:
        (out_dir / name).mkdir(parents=True, exist_ok=True)
    for i in range(len(ds)):
        s = ds[i]
        stem = Path(s.source_path).stem
        if s.origin != ORIGINAL:
            stem = f"{stem}__{s.origin.split(':', 1)[-1]}"
        target = out_dir / ds.class_names[s.label_id] / f"{stem}.png"
        Image.fromarray(quantize(s.image)).save(target)
    return out_dir


# --- splits and manifest -----------------------------------------------------

class ManifestRow(NamedTuple):
    path: str
    label_name: str
    label_id: int
    split: str
    origin: str


@dataclass
class Manifest:
    """One row per dataset sample, in dataset order."""
    rows: list[ManifestRow]

    def indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ParameterError(f"unknown split {split!r}")
        return np.array([i for i, r in enumerate(self.rows) if r.split == split], dtype=np.int64)

    def counts(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for r in self.rows:
            out.setdefault(r.label_name, dict.fromkeys(SPLITS, 0))[r.split] += 1
        return out

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(ManifestRow._fields)
            w.writerows(self.rows)
        return path

    @classmethod
    def from_csv(cls, path) -> "Manifest":
        try:
            with open(path, newline="", encoding="utf-8") as f:
                reader = csv.DictReader(f)
                if tuple(reader.fieldnames or ()) != ManifestRow._fields:
                    raise IngestionError(f"{path}: unexpected manifest header {reader.fieldnames}")
                rows = [ManifestRow(r["path"], r["label_name"], int(r["label_id"]), r["split"], r["origin"])
                        for r in reader]
        except OSError as e:
            raise IngestionError(f"{path}: cannot read manifest ({e})") from e
        return cls(rows)


def split(ds: Dataset, ratios=(0.6, 0.2, 0.2), seed: int = 0, fixed: dict[int, str] | None = None) -> Manifest:
    """Stratified split: per class, floor(r_val*n) to val, floor(r_test*n) to
    test, the rest to train. ``fixed`` pins sample indices to a split and
    keeps them out of the shuffle."""
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    fixed = fixed or {}
    _, r_val, r_test = ratios
    assign = [""] * len(ds)
    for i, s in fixed.items():
        assign[i] = s
    rng = Rng(seed).fork("split")
    for c, name in enumerate(ds.class_names):
        idx = np.array([i for i in np.flatnonzero(ds.labels == c) if i not in fixed], dtype=np.int64)
        n = len(idx)
        if n < 3:
            raise SplitError(f"class {name!r} has {n} samples; a split needs at least 3")
        perm = idx[rng.fork(name).permutation(n)]
        n_val, n_test = int(np.floor(r_val * n)), int(np.floor(r_test * n))
        for i in perm[:n_val]:
            assign[i] = "val"
        for i in perm[n_val:n_val + n_test]:
            assign[i] = "test"
        for i in perm[n_val + n_test:]:
            assign[i] = "train"
    rows = [ManifestRow(ds.paths[i], ds.class_names[ds.labels[i]], int(ds.labels[i]), assign[i], ds.origins[i])
            for i in range(len(ds))]
    return Manifest(rows)


# --- synthetic fixture ---------------------------------------------------------

def make_synthetic(num_classes: int = 8, per_class: int = 16, size: int = 50, seed: int = 0) -> Dataset:
    """High-contrast stripe patterns: orientation and colour depend on the class,
    phase and a little pixel noise vary per image. Deterministic in ``seed``."""
    rng = Rng(seed).fork("synthetic")
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images, labels = [], []
    for c in range(num_classes):
        theta = np.pi * c / num_classes
        color = np.array([(c >> b) & 1 for b in range(3)], dtype=np.float64) * 0.7 + 0.3
        freq = 2 * np.pi / (6 + 2 * (c % 3))
        for k in range(per_class):
            u = rng.random(3)
            phase = 2 * np.pi * u[0]
            proj = xx * np.cos(theta) + yy * np.sin(theta)
            stripes = (np.sin(freq * proj + phase) > 0).astype(np.float64)
            img = stripes[:, :, None] * color
            img = img + 0.05 * (rng.random((size, size, 3)) - 0.5)
            images.append(np.clip(img, 0, 1))
            labels.append(c)
    names = [f"class_{c:02d}" for c in range(num_classes)]
    paths = [f"{names[l]}/img_{i:04d}.raw" for i, l in enumerate(labels)]
    return Dataset(np.stack(images).astype(np.float32), np.array(labels), names, paths)
