"""Training objectives.

All losses are means over the pixels that actually contribute, so their
magnitudes are image-size invariant and the three training signals can be
combined at fixed 1:1 weight. Probabilities are clamped to [1e-7, 1] inside
logs; a confident mistake yields a large but finite value, never NaN.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import torch

from .model import SegModel, forward_all

LOG_EPS = 1e-7


@dataclass(frozen=True)
class ClassWeights:
    """Per-class misclassification costs.

    The conservative setting makes claiming foreground expensive (cost alpha
    on background pixels); the radical setting mirrors it. In the binary
    case the two weight vectors are reverses of each other.
    """

    weights: tuple
    alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if any(w <= 0 for w in self.weights):
            raise ValueError(f"class weights must be positive, got {self.weights}")

    @classmethod
    def uniform(cls, num_classes: int = 2) -> "ClassWeights":
        return cls(weights=(1.0,) * num_classes)

    @classmethod
    def conservative(cls, alpha: float = 5.0) -> "ClassWeights":
        return cls(weights=(float(alpha), 1.0), alpha=float(alpha))

    @classmethod
    def radical(cls, alpha: float = 5.0) -> "ClassWeights":
        return cls(weights=(1.0, float(alpha)), alpha=float(alpha))


@dataclass
class LossValue:
    """A scalar objective plus how many pixels produced it.

    ``value`` stays a 0-dim tensor so it can be backpropagated;
    ``pixel_count`` is 0 when the masked region was empty, which callers use
    to skip the optimizer step.
    """

    value: torch.Tensor
    pixel_count: int

    def item(self) -> float:
        return float(self.value.detach())


WeightsLike = Union[ClassWeights, Sequence[float], torch.Tensor]


def _weight_tensor(weights: WeightsLike, num_classes: int,
                   dtype, device) -> torch.Tensor:
    if isinstance(weights, ClassWeights):
        weights = weights.weights
    w = torch.as_tensor(tuple(weights), dtype=dtype, device=device)
    if w.numel() != num_classes:
        raise ValueError(f"expected {num_classes} class weights, got {w.numel()}")
    if (w <= 0).any():
        raise ValueError("class weights must be positive")
    return w


def _flatten(probs: torch.Tensor, labels: torch.Tensor):
    """(B,K,H,W) or (K,H,W) probabilities -> (N,K); labels -> (N,)."""
    if probs.dim() == 3:
        probs = probs.unsqueeze(0)
        labels = labels.unsqueeze(0)
    if probs.dim() != 4:
        raise ValueError(f"probability map must be 3D or 4D, got {probs.dim()}D")
    if probs.shape[0] != labels.shape[0] or probs.shape[2:] != labels.shape[1:]:
        raise ValueError(
            f"shape mismatch: probs {tuple(probs.shape)} vs labels {tuple(labels.shape)}")
    k = probs.shape[1]
    flat_p = probs.permute(0, 2, 3, 1).reshape(-1, k)
    flat_y = labels.reshape(-1).long()
    if flat_y.numel() and (flat_y.min() < 0 or flat_y.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    return flat_p, flat_y


def _per_pixel_ce(probs: torch.Tensor, labels: torch.Tensor,
                  weights: WeightsLike):
    flat_p, flat_y = _flatten(probs, labels)
    w = _weight_tensor(weights, flat_p.shape[1], flat_p.dtype, flat_p.device)
    p_true = flat_p.gather(1, flat_y.unsqueeze(1)).squeeze(1)
    ce = -w[flat_y] * torch.log(p_true.clamp(LOG_EPS, 1.0))
    return ce, flat_y


def weighted_cross_entropy(probs: torch.Tensor, labels: torch.Tensor,
                           weights: WeightsLike) -> LossValue:
    """Cost-weighted cross-entropy, averaged per pixel."""
    ce, flat_y = _per_pixel_ce(probs, labels, weights)
    return LossValue(value=ce.mean(), pixel_count=flat_y.numel())


def supervised_loss(model: SegModel, x: torch.Tensor, y: torch.Tensor,
                    alpha: float = 5.0) -> LossValue:
    """Labeled-batch objective: plain cross-entropy on the normal head plus
    the conservative and radical weighted cross-entropies, all three from a
    single shared-trunk forward pass, summed at equal weight."""
    if model.num_classes != 2 and alpha != 1.0:
        raise ValueError("cost-sensitive weights are defined for binary tasks; "
                         "decompose multi-class problems one-vs-rest")
    p_normal, p_con, p_rad = forward_all(model, x)
    uniform = ClassWeights.uniform(model.num_classes)
    if model.num_classes == 2:
        w_con = ClassWeights.conservative(alpha)
        w_rad = ClassWeights.radical(alpha)
    else:
        w_con = w_rad = uniform
    total = (weighted_cross_entropy(p_normal, y, uniform).value
             + weighted_cross_entropy(p_con, y, w_con).value
             + weighted_cross_entropy(p_rad, y, w_rad).value)
    return LossValue(value=total, pixel_count=int(y.numel()))


def _flat_mask(mask: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    m = mask.reshape(-1).to(like.dtype)
    if m.numel() != like.numel():
        raise ValueError("mask shape does not match the pixel grid")
    return m


def certain_region_loss(probs: torch.Tensor, pseudo: torch.Tensor,
                        mask: torch.Tensor) -> LossValue:
    """Self-training cross-entropy against cached pseudo labels, restricted
    to mask=1 pixels and averaged over them.

    Pixels outside the mask contribute exactly zero value and zero gradient.
    An all-zero mask yields LossValue(0, pixel_count=0).
    """
    ce, flat_y = _per_pixel_ce(probs, pseudo, (1.0,) * probs.shape[-3])
    m = _flat_mask(mask, ce)
    count = int(m.sum().item())
    if count == 0:
        return LossValue(value=torch.zeros((), dtype=ce.dtype), pixel_count=0)
    return LossValue(value=(ce * m).sum() / count, pixel_count=count)


def consistency_loss(student_probs: torch.Tensor, teacher_probs: torch.Tensor,
                     mask: torch.Tensor) -> LossValue:
    """Mean squared difference between student and teacher probability
    vectors over mask=1 pixels; the teacher side carries no gradient."""
    if student_probs.shape != teacher_probs.shape:
        raise ValueError(
            f"student {tuple(student_probs.shape)} vs teacher "
            f"{tuple(teacher_probs.shape)} shape mismatch")
    sq = (student_probs - teacher_probs.detach()) ** 2
    channel_dim = 0 if sq.dim() == 3 else 1
    per_pixel = sq.sum(dim=channel_dim).reshape(-1)
    m = _flat_mask(mask, per_pixel)
    count = int(m.sum().item())
    if count == 0:
        return LossValue(value=torch.zeros((), dtype=per_pixel.dtype),
                         pixel_count=0)
    return LossValue(value=(per_pixel * m).sum() / count, pixel_count=count)
