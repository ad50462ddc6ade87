"""Synthetic segmentation data: generation, splitting, augmentation, and a
portable binary container.

Images are smooth low-frequency backgrounds (intensities 0.10-0.35) with a
foreground region raised by a contrast delta and corrupted by additive
Gaussian noise, clipped to [0, 1]. The mask is the exact rasterized
foreground, so ground truth is noise-free by construction. Contrast and
noise sigma together form the difficulty knob.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .seeding import numpy_rng

BACKGROUND_LO = 0.05
BACKGROUND_HI = 0.45
DISTRACTOR_AMPLITUDE = (0.15, 0.26)
MAX_DISTRACTORS = 5
NOISE_CORRELATION = (0.5, 2.5)  # per-image smoothing radius, pixels
MAX_SHAPE_TRIES = 200

DEFAULT_BENCHMARK = dict(image_size=(64, 64), n_images=200, kind="blobs",
                         contrast=0.3, noise_sigma=0.15,
                         area_range=(0.05, 0.25))


@dataclass(frozen=True)
class SyntheticConfig:
    image_size: tuple = (64, 64)
    n_images: int = 200
    kind: str = "blobs"  # "ellipse" or "blobs" (union of ellipses)
    contrast: float = 0.3
    noise_sigma: float = 0.15
    area_range: tuple = (0.05, 0.25)
    seed: int = 0

    def __post_init__(self):
        h, w = self.image_size
        if h < 16 or w < 16:
            raise ValueError("image sides must be >= 16")
        if self.kind not in ("ellipse", "blobs"):
            raise ValueError(f"unknown foreground kind {self.kind!r}")
        if not 0.0 < self.contrast <= 1.0:
            raise ValueError("contrast must lie in (0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        lo, hi = self.area_range
        if not (0.0 < lo < hi < 1.0):
            raise ValueError("area fraction range must satisfy 0 < lo < hi < 1")
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float = 0.2
    labeled_ratio: tuple = (1, 1)  # labeled : unlabeled within the train pool

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test fraction must lie in (0, 1)")
        a, b = self.labeled_ratio
        if a < 1 or b < 0:
            raise ValueError("ratio must have labeled >= 1 and unlabeled >= 0")


@dataclass
class DatasetSplit:
    """Disjoint labeled/unlabeled/test partitions.

    Unlabeled ground truth is kept on a private attribute for mask-quality
    diagnostics only; training code never reads it.
    """

    labeled: list
    unlabeled: list
    test: list
    unlabeled_truth: list = field(default_factory=list, repr=False)


# -- generation -------------------------------------------------------------


def _smooth_background(rng, shape):
    """Slowly varying field plus a few soft bright bumps.

    The bumps are object look-alikes: locally as bright as a true foreground
    step, but with smooth falloff instead of a sharp edge. They stay below
    BACKGROUND_HI so full-contrast noiseless images remain threshold-
    separable.
    """
    field_ = rng.normal(size=shape)
    smoothness = rng.uniform(min(shape) / 14.0, min(shape) / 8.0)
    field_ = ndimage.gaussian_filter(field_, sigma=smoothness, mode="reflect")
    lo, hi = field_.min(), field_.max()
    field_ = (field_ - lo) / (hi - lo) if hi > lo else np.zeros(shape)
    background = BACKGROUND_LO + 0.7 * (BACKGROUND_HI - BACKGROUND_LO) * field_
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(int(rng.integers(0, MAX_DISTRACTORS + 1))):
        amp = rng.uniform(*DISTRACTOR_AMPLITUDE)
        ry = rng.uniform(0.06, 0.16) * h
        rx = rng.uniform(0.06, 0.16) * w
        cy = rng.uniform(ry, h - ry)
        cx = rng.uniform(rx, w - rx)
        d2 = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        # plateaued profile with a steep continuous shoulder: under noise a
        # dim bump is locally indistinguishable from a weak foreground step
        background = background + amp * np.clip(1.0 - d2, 0.0, 1.0) ** 0.25
    return np.clip(background, BACKGROUND_LO, BACKGROUND_HI)


def _ellipse_mask(shape, center, axes, angle):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    dy = yy - center[0]
    dx = xx - center[1]
    c, s = np.cos(angle), np.sin(angle)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (u / axes[1]) ** 2 + (v / axes[0]) ** 2 <= 1.0


def _sample_ellipse(rng, shape, area):
    h, w = shape
    aspect = rng.uniform(0.5, 2.0)
    a = np.sqrt(area * aspect / np.pi)
    b = np.sqrt(area / (aspect * np.pi))
    r = max(a, b)
    if 2 * r + 2 >= min(h, w):
        return None
    cy = rng.uniform(r + 1, h - r - 1)
    cx = rng.uniform(r + 1, w - r - 1)
    return _ellipse_mask(shape, (cy, cx), (a, b), rng.uniform(0, np.pi))


def _sample_blobs(rng, shape, area):
    h, w = shape
    k = int(rng.integers(2, 7))
    weights = rng.uniform(0.4, 1.6, size=k)
    weights *= area / weights.sum()
    radius = 0.25 * min(h, w)
    cy0 = rng.uniform(0.3 * h, 0.7 * h)
    cx0 = rng.uniform(0.3 * w, 0.7 * w)
    mask = np.zeros(shape, dtype=bool)
    for part in weights:
        aspect = rng.uniform(0.4, 2.5)
        a = np.sqrt(part * aspect / np.pi)
        b = np.sqrt(part / (aspect * np.pi))
        r = max(a, b)
        if 2 * r + 2 >= min(h, w):
            return None
        cy = np.clip(cy0 + rng.uniform(-radius, radius), r + 1, h - r - 1)
        cx = np.clip(cx0 + rng.uniform(-radius, radius), r + 1, w - r - 1)
        mask |= _ellipse_mask(shape, (cy, cx), (a, b), rng.uniform(0, np.pi))
    return mask


def _sample_mask(rng, cfg: SyntheticConfig) -> np.ndarray:
    h, w = cfg.image_size
    lo, hi = cfg.area_range
    sampler = _sample_ellipse if cfg.kind == "ellipse" else _sample_blobs
    for _ in range(MAX_SHAPE_TRIES):
        frac = rng.uniform(lo, hi)
        mask = sampler(rng, (h, w), frac * h * w)
        if mask is None:
            continue
        got = mask.mean()
        if lo <= got <= hi:
            return mask
    raise RuntimeError(
        f"could not place a foreground with fraction in [{lo}, {hi}] "
        f"on a {h}x{w} grid after {MAX_SHAPE_TRIES} tries")


def _noise_field(rng, shape, sigma):
    """Gaussian noise with marginal std sigma and a per-image correlation
    length, emulating tissue-like speckle rather than salt-and-pepper."""
    corr = rng.uniform(*NOISE_CORRELATION)
    field_ = rng.normal(size=shape)
    if corr > 0:
        field_ = ndimage.gaussian_filter(field_, sigma=corr, mode="reflect")
    std = field_.std()
    return field_ * (sigma / std) if std > 0 else field_


def generate(cfg: SyntheticConfig):
    """Deterministic dataset: list of (image float32 in [0,1], mask uint8)."""
    items = []
    for i in range(cfg.n_images):
        rng = numpy_rng(cfg.seed, "image", i)
        mask = _sample_mask(rng, cfg)
        image = _smooth_background(rng, cfg.image_size) + cfg.contrast * mask
        if cfg.noise_sigma > 0:
            image = image + _noise_field(rng, cfg.image_size, cfg.noise_sigma)
        image = np.clip(image, 0.0, 1.0).astype(np.float32)
        items.append((image, mask.astype(np.uint8)))
    return items


def best_threshold_dice(items, n_thresholds: int = 101):
    """Mean Dice of the best single global intensity threshold.

    Generator diagnostic: with contrast fixed, more noise can only lower
    this ceiling.
    """
    thresholds = np.linspace(0.0, 1.0, n_thresholds)
    best = 0.0
    images = np.stack([im for im, _ in items]).reshape(len(items), -1)
    masks = np.stack([mk for _, mk in items]).reshape(len(items), -1).astype(bool)
    for t in thresholds:
        pred = images > t
        tp = (pred & masks).sum(axis=1)
        denom = pred.sum(axis=1) + masks.sum(axis=1)
        dsc = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 1.0)
        best = max(best, float(dsc.mean()))
    return best


# -- splitting ---------------------------------------------------------------


def train_test_split(dataset, test_fraction: float, seed: int):
    """Shuffled (train, test) partition with n_test = floor(n * fraction)."""
    n = len(dataset)
    order = numpy_rng(seed, "split").permutation(n)
    n_test = int(n * test_fraction)
    test = [dataset[i] for i in order[:n_test]]
    train = [dataset[i] for i in order[n_test:]]
    if not test or not train:
        raise ValueError(
            f"test fraction {test_fraction} leaves an empty partition of {n}")
    return train, test


def partition_labeled(train_items, ratio, seed: int):
    """Split a train pool into labeled items and unlabeled images.

    labeled count = floor(n * a / (a + b)); ground truth of the unlabeled
    part is returned separately (diagnostics only).
    """
    a, b = ratio
    order = numpy_rng(seed, "labeled-partition").permutation(len(train_items))
    n_labeled = int(len(train_items) * a / (a + b)) if b else len(train_items)
    labeled_idx = order[:n_labeled]
    unlabeled_idx = order[n_labeled:]
    if len(labeled_idx) == 0:
        raise ValueError("labeled partition is empty")
    if b and len(unlabeled_idx) == 0:
        raise ValueError("requested unlabeled data but the partition is empty")
    labeled = [train_items[i] for i in labeled_idx]
    unlabeled = [train_items[i][0] for i in unlabeled_idx]
    truth = [train_items[i][1] for i in unlabeled_idx]
    return labeled, unlabeled, truth


def split(dataset, cfg: SplitConfig, seed: int) -> DatasetSplit:
    """Disjoint labeled / unlabeled / test partitions from one seed.

    Counts use floor rounding: n_test = floor(n * test_fraction), labeled =
    floor(train * a/(a+b)). The unlabeled partition keeps its ground truth
    on DatasetSplit.unlabeled_truth for diagnostics.
    """
    train, test = train_test_split(dataset, cfg.test_fraction, seed)
    labeled, unlabeled, truth = partition_labeled(train, cfg.labeled_ratio, seed)
    return DatasetSplit(labeled=labeled, unlabeled=unlabeled,
                        unlabeled_truth=truth, test=test)


def binarize_labels(label: np.ndarray, cls: int) -> np.ndarray:
    """One-vs-rest view: 1 where label == cls, else 0."""
    return (np.asarray(label) == cls).astype(np.uint8)


# -- augmentation ------------------------------------------------------------


@dataclass(frozen=True)
class GeomParams:
    angle: float = 0.0       # degrees
    scale: float = 1.0
    flip_h: bool = False
    flip_v: bool = False

    @property
    def is_identity(self):
        return (self.angle == 0.0 and self.scale == 1.0
                and not self.flip_h and not self.flip_v)


def draw_geom_params(rng) -> GeomParams:
    """Random draw of the augmentation operators: rotation within +/-30
    degrees, rescale 0.5x-2x, horizontal/vertical flips, each applied with
    probability 1/2."""
    angle = rng.uniform(-30.0, 30.0) if rng.random() < 0.5 else 0.0
    scale = rng.uniform(0.5, 2.0) if rng.random() < 0.5 else 1.0
    return GeomParams(angle=angle, scale=scale,
                      flip_h=rng.random() < 0.5, flip_v=rng.random() < 0.5)


def _fit_to(arr, shape, pad_value):
    h, w = shape
    ah, aw = arr.shape
    if ah > h:
        top = (ah - h) // 2
        arr = arr[top:top + h, :]
    if aw > w:
        left = (aw - w) // 2
        arr = arr[:, left:left + w]
    ah, aw = arr.shape
    if ah < h or aw < w:
        pt = (h - ah) // 2
        pl = (w - aw) // 2
        arr = np.pad(arr, ((pt, h - ah - pt), (pl, w - aw - pl)),
                     mode="constant", constant_values=pad_value)
    return arr


def _transform(arr, params: GeomParams, order: int, pad_value):
    out = np.asarray(arr)
    shape = out.shape
    if params.scale != 1.0:
        out = ndimage.zoom(out, params.scale, order=order, mode="grid-constant",
                           cval=pad_value, grid_mode=True)
        out = _fit_to(out, shape, pad_value)
    if params.angle != 0.0:
        out = ndimage.rotate(out, params.angle, reshape=False, order=order,
                             mode="constant", cval=pad_value)
    if params.flip_h:
        out = out[:, ::-1]
    if params.flip_v:
        out = out[::-1, :]
    return np.ascontiguousarray(out)


def transform_image(image: np.ndarray, params: GeomParams) -> np.ndarray:
    if params.is_identity:
        return np.asarray(image, dtype=np.float32).copy()
    background = float(np.median(image))
    out = _transform(np.asarray(image, dtype=np.float64), params,
                     order=1, pad_value=background)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def transform_labels(label: np.ndarray, params: GeomParams,
                     pad_value: int = 0) -> np.ndarray:
    if params.is_identity:
        return np.asarray(label).copy()
    return _transform(np.asarray(label), params, order=0, pad_value=pad_value)


def augment(image: np.ndarray, mask: np.ndarray, rng):
    """One identical random geometric transform applied to an image (bilinear)
    and its mask (nearest)."""
    params = draw_geom_params(rng)
    return transform_image(image, params), transform_labels(mask, params)


# -- container format --------------------------------------------------------

MAGIC = b"CRD1"
VERSION = 1


class DatasetFormatError(Exception):
    """Malformed dataset file; the message carries the byte offset."""


def save_dataset(path, items):
    """Write (image float32, mask uint8) pairs to a container file."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(items)))
        for image, mask in items:
            image = np.ascontiguousarray(image, dtype="<f4")
            mask = np.ascontiguousarray(mask, dtype=np.uint8)
            if image.shape != mask.shape or image.ndim != 2:
                raise ValueError("each item needs matching 2D image and mask")
            h, w = image.shape
            fh.write(struct.pack("<II", h, w))
            fh.write(image.tobytes())
            fh.write(mask.tobytes())


def load_dataset(path):
    buf = Path(path).read_bytes()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise DatasetFormatError(
                f"{path}: truncated while reading {what} at byte {pos} "
                f"(needed {n} more bytes, have {len(buf) - pos})")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4, "magic") != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic at byte 0")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    items = []
    for i in range(count):
        h, w = struct.unpack("<II", take(8, f"item {i} size"))
        image = np.frombuffer(take(4 * h * w, f"item {i} image"),
                              dtype="<f4").reshape(h, w).copy()
        mask = np.frombuffer(take(h * w, f"item {i} mask"),
                             dtype=np.uint8).reshape(h, w).copy()
        items.append((image, mask))
    if pos != len(buf):
        raise DatasetFormatError(
            f"{path}: {len(buf) - pos} trailing bytes at byte {pos}")
    return items


def save_label_png(label: np.ndarray, path, num_classes: int = 2):
    """Label map as an 8-bit grayscale image, classes spread over 0..255."""
    label = np.asarray(label)
    step = 255 // max(num_classes - 1, 1)
    Image.fromarray((label * step).astype(np.uint8), mode="L").save(path)
