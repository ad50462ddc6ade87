"""Segmentation evaluation metrics with exact set-count semantics.

Ratios with a zero denominator are reported as None ("undefined"), never NaN
or 0, and aggregation skips undefined entries. The Hausdorff distance is the
exact max-min Euclidean distance between foreground pixel coordinate sets,
undefined when either set is empty.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

METRIC_COLUMNS = ("dsc", "ppv", "tpr", "csi", "jaccard", "hd")


def confusion_counts(pred: np.ndarray, truth: np.ndarray, foreground: int = 1):
    """Exact (tp, fp, fn, tn) pixel counts for one foreground class."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    p = pred == foreground
    t = truth == foreground
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(p.size - tp - fp - fn)
    return tp, fp, fn, tn


def _ratio(num: int, den: int):
    return num / den if den else None


def dice(counts):
    tp, fp, fn = counts[0], counts[1], counts[2]
    return _ratio(2 * tp, 2 * tp + fp + fn)


def ppv(counts):
    tp, fp = counts[0], counts[1]
    return _ratio(tp, tp + fp)


def tpr(counts):
    tp, fn = counts[0], counts[2]
    return _ratio(tp, tp + fn)


def csi(counts):
    tp, fp, fn = counts[0], counts[1], counts[2]
    return _ratio(tp, tp + fp + fn)


def jaccard(counts):
    return csi(counts)


def hausdorff(pred_fg: np.ndarray, truth_fg: np.ndarray):
    """Symmetric Hausdorff distance between the foreground pixel coordinate
    sets of two binary masks."""
    a = _coords(pred_fg)
    b = _coords(truth_fg)
    if len(a) == 0 or len(b) == 0:
        return None
    d = cdist(a, b)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def _coords(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2D binary mask, got shape {mask.shape}")
    return np.argwhere(mask.astype(bool)).astype(float)


@dataclass
class ImageMetrics:
    image_id: str
    dsc: float | None
    ppv: float | None
    tpr: float | None
    csi: float | None
    jaccard: float | None
    hd: float | None

    def as_row(self):
        return [self.image_id] + [getattr(self, c) for c in METRIC_COLUMNS]


@dataclass
class MetricReport:
    per_image: list = field(default_factory=list)

    def add(self, image_id, pred: np.ndarray, truth: np.ndarray,
            foreground: int = 1):
        counts = confusion_counts(pred, truth, foreground)
        self.per_image.append(ImageMetrics(
            image_id=str(image_id),
            dsc=dice(counts), ppv=ppv(counts), tpr=tpr(counts),
            csi=csi(counts), jaccard=jaccard(counts),
            hd=hausdorff(pred == foreground, truth == foreground)))

    def aggregate(self):
        """Column-wise (mean, std) over defined values; None where every
        entry was undefined."""
        means, stds = {}, {}
        for col in METRIC_COLUMNS:
            vals = [getattr(m, col) for m in self.per_image
                    if getattr(m, col) is not None]
            if vals:
                means[col] = float(np.mean(vals))
                stds[col] = float(np.std(vals))
            else:
                means[col] = stds[col] = None
        return means, stds

    def mean(self, col: str):
        return self.aggregate()[0][col]

    def write_csv(self, path):
        means, stds = self.aggregate()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("image_id",) + METRIC_COLUMNS)
            for m in self.per_image:
                writer.writerow(_fmt(v) for v in m.as_row())
            writer.writerow(["mean"] + [_fmt(means[c]) for c in METRIC_COLUMNS])
            writer.writerow(["std"] + [_fmt(stds[c]) for c in METRIC_COLUMNS])


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            raise ValueError("NaN has no place in a metric report")
        return f"{value:.9g}"
    return value
