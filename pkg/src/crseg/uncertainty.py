"""Certain/uncertain region estimation.

The core estimator marks a pixel uncertain exactly when the conservative and
radical heads disagree on its label (pixel-wise XOR); the certain mask is the
complement. A softmax-threshold baseline is included for comparison.
"""

from __future__ import annotations

import numpy as np
from PIL import Image


def make_masks(y_con: np.ndarray, y_rad: np.ndarray):
    """(uncertain, certain) masks from two label maps.

    uncertain[z] = 1 iff the predictions differ at z; certain is the
    complement, so the pair always partitions the image.
    """
    y_con = np.asarray(y_con)
    y_rad = np.asarray(y_rad)
    if y_con.shape != y_rad.shape:
        raise ValueError(f"shape mismatch: {y_con.shape} vs {y_rad.shape}")
    uncertain = (y_con != y_rad).astype(np.uint8)
    return uncertain, 1 - uncertain


def softmax_threshold_mask(probs: np.ndarray, tau: float):
    """Baseline confidence mask: certain where max class probability
    exceeds tau. Returns (certain mask, argmax pseudo label); argmax ties
    resolve to the lowest class index."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {tau}")
    probs = np.asarray(probs)
    if probs.ndim != 3:
        raise ValueError(f"expected H x W x K probabilities, got {probs.shape}")
    certain = (probs.max(axis=-1) > tau).astype(np.uint8)
    pseudo = np.argmax(probs, axis=-1).astype(np.int64)
    return certain, pseudo


def mask_quality(certain: np.ndarray, pseudo: np.ndarray, truth: np.ndarray,
                 foreground: int = 1):
    """Precision / recall / critical success index of the foreground labels
    claimed inside the certain region.

    Pixels outside the region carry no label: claimed foreground is
    evaluated against the full ground truth, so true-foreground pixels the
    region does not cover count as misses. Zero denominators yield None
    rather than NaN; an empty certain region leaves all three undefined.
    """
    certain = np.asarray(certain).astype(bool)
    pseudo = np.asarray(pseudo)
    truth = np.asarray(truth)
    if not (certain.shape == pseudo.shape == truth.shape):
        raise ValueError("certain/pseudo/truth shapes must agree")
    if not certain.any():
        return None, None, None
    pred_fg = certain & (pseudo == foreground)
    true_fg = truth == foreground
    tp = int(np.count_nonzero(pred_fg & true_fg))
    fp = int(np.count_nonzero(pred_fg & ~true_fg))
    fn = int(np.count_nonzero(~pred_fg & true_fg))
    ppv = tp / (tp + fp) if (tp + fp) else None
    tpr = tp / (tp + fn) if (tp + fn) else None
    csi = tp / (tp + fp + fn) if (tp + fp + fn) else None
    return ppv, tpr, csi


def save_mask_png(mask: np.ndarray, path):
    """Write a binary mask as an 8-bit grayscale image (0/255)."""
    mask = np.asarray(mask)
    if mask.ndim != 2 or not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must be a 2D 0/1 array")
    Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(path)


def load_mask_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr >= 128).astype(np.uint8)
