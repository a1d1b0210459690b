"""Offline augmentation: gaussian noise and three rotations over disjoint random
subsets of the dataset."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import InputError, ParameterError
from .tensor import Rng, clip, gaussian

OPS = ("gaussian_noise", "rotate90", "rotate30", "rotate-60")
_ANGLES = {"rotate90": 90, "rotate30": 30, "rotate-60": -60}
SUPPORTED_ANGLES = (90, 30, -60)


@dataclass(frozen=True)
class AugmentPlan:
    fraction: float = 0.25
    noise_sigma: float = 0.04
    fill: float = 0.0
    seed: int = 0
    ops: tuple[str, ...] = OPS

    def __post_init__(self):
        if not 0 <= self.fraction <= 1:
            raise ParameterError(f"fraction must lie in [0, 1], got {self.fraction}")
        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if tuple(self.ops) != OPS:
            raise ParameterError(f"augmentation ops are fixed to {OPS}")


def gaussian_noise_image(img: np.ndarray, sigma: float, rng: Rng) -> np.ndarray:
    if sigma < 0:
        raise ParameterError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.array(img, copy=True)
    noise = gaussian(rng, 0.0, sigma, img.shape, dtype=np.float64)
    return clip(img + noise, 0.0, 1.0).astype(img.dtype)


def _rotate_general(img: np.ndarray, degrees: float, fill: float) -> np.ndarray:
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    t = math.radians(degrees)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    y, x = yy - cy, xx - cx
    # inverse map: output pixel -> source coordinate (rows point down)
    sx = math.cos(t) * x - math.sin(t) * y + cx
    sy = math.sin(t) * x + math.cos(t) * y + cy
    tol = 1e-9
    inside = (sy >= -tol) & (sy <= h - 1 + tol) & (sx >= -tol) & (sx <= w - 1 + tol)
    sy = np.clip(sy, 0, h - 1)
    sx = np.clip(sx, 0, w - 1)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0)[..., None]
    wx = (sx - x0)[..., None]
    f = np.asarray(img, dtype=np.float64)
    out = ((f[y0, x0] * (1 - wx) + f[y0, x1] * wx) * (1 - wy)
           + (f[y1, x0] * (1 - wx) + f[y1, x1] * wx) * wy)
    out[~inside] = fill
    return out.astype(img.dtype)


def rotate_image(img: np.ndarray, degrees: int, fill: float = 0.0) -> np.ndarray:
    """Counter-clockwise rotation about the image centre, same output shape."""
    if degrees not in SUPPORTED_ANGLES:
        raise ParameterError(f"unsupported rotation {degrees}; choose one of {SUPPORTED_ANGLES}")
    if degrees == 90 and img.shape[0] == img.shape[1]:
        return np.ascontiguousarray(np.rot90(img, 1, axes=(0, 1)))
    return _rotate_general(img, degrees, fill)


def plan_groups(n: int, plan: AugmentPlan) -> list[np.ndarray]:
    """Disjoint source-index groups, one per op, each sorted ascending."""
    k = int(math.floor(plan.fraction * n))
    chosen = Rng(plan.seed).fork("augment").fork("select").permutation(n)[:k]
    return [np.sort(g) for g in np.array_split(chosen, len(plan.ops))]


def augment_dataset(ds: Dataset, plan: AugmentPlan) -> Dataset:
    """Append one transformed copy for each selected sample.

    Output order: originals, then each op's group in op order, sources ascending.
    """
    if len(ds) == 0:
        raise InputError("cannot augment an empty dataset")
    groups = plan_groups(len(ds), plan)
    noise_rng = Rng(plan.seed).fork("augment").fork("noise")
    images, labels = [ds.images], [ds.labels]
    paths, origins = list(ds.paths), list(ds.origins)
    for op, idx in zip(plan.ops, groups):
        if op == "gaussian_noise":
            out = [gaussian_noise_image(ds.images[i], plan.noise_sigma, noise_rng) for i in idx]
        else:
            out = [rotate_image(ds.images[i], _ANGLES[op], plan.fill) for i in idx]
        if len(idx):
            images.append(np.stack(out))
        labels.append(ds.labels[idx])
        paths += [ds.paths[i] for i in idx]
        origins += [f"augmented:{op}"] * len(idx)
    return Dataset(np.concatenate(images), np.concatenate(labels), list(ds.class_names), paths, origins)
