"""Segmentation backbone: shared four-level encoder-decoder trunk with three
prediction heads (normal, conservative, radical) plus a teacher twin of the
normal path.

The trunk downsamples three times (inputs are reflect-padded to a multiple of
8 and outputs cropped back), and its last decoder stage always emits a
64-channel feature map. Each head is two 3x3 convs (BN + ReLU after each)
followed by a bare 1x1 conv to class logits. The conservative and radical
heads exist only to disagree during training; inference uses the trunk and
the normal head alone.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .seeding import derive_seed

FINAL_TRUNK_CHANNELS = 64
POOL_LEVELS = 3  # four resolution levels -> three pools
DIVISOR = 2 ** POOL_LEVELS
MIN_SIDE = 16

HEAD_NAMES = ("normal", "conservative", "radical")


class DoubleConv(nn.Module):
    """Two 3x3 convolutions, each followed by batch norm and ReLU."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(cout)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        return F.relu(self.bn2(self.conv2(x)))


class PredictionHead(nn.Module):
    """Two 3x3 convs (BN+ReLU each) then a 1x1 conv to K logits.

    Batch norm is applied after the 3x3 convs only; the 1x1 logit layer is
    left bare.
    """

    def __init__(self, cin: int, num_classes: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cin, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(cin)
        self.conv2 = nn.Conv2d(cin, cin, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(cin)
        self.classify = nn.Conv2d(cin, num_classes, 1)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        x = F.relu(self.bn2(self.conv2(x)))
        return self.classify(x)


class SegModel(nn.Module):
    """Shared trunk plus one head per prediction setting.

    ``heads`` selects which heads exist: the student carries all three, the
    teacher twin only ``("normal",)``. The trunk (every module that is not a
    head) is stored once and reused by all heads within a forward pass.
    """

    def __init__(self, channels=(16, 32, 64, 64), num_classes: int = 2,
                 heads=HEAD_NAMES):
        super().__init__()
        channels = tuple(int(c) for c in channels)
        if len(channels) != 4:
            raise ValueError(f"need exactly 4 channel widths, got {channels}")
        if any(c < 1 for c in channels):
            raise ValueError(f"channel widths must be positive, got {channels}")
        if num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        unknown = set(heads) - set(HEAD_NAMES)
        if unknown:
            raise ValueError(f"unknown heads {sorted(unknown)}")
        self.channels = channels
        self.num_classes = int(num_classes)
        c1, c2, c3, c4 = channels

        self.enc1 = DoubleConv(1, c1)
        self.enc2 = DoubleConv(c1, c2)
        self.enc3 = DoubleConv(c2, c3)
        self.enc4 = DoubleConv(c3, c4)
        self.pool = nn.MaxPool2d(2)
        self.up3 = nn.ConvTranspose2d(c4, c3, 2, stride=2)
        self.dec3 = DoubleConv(2 * c3, c3)
        self.up2 = nn.ConvTranspose2d(c3, c2, 2, stride=2)
        self.dec2 = DoubleConv(2 * c2, c2)
        self.up1 = nn.ConvTranspose2d(c2, c1, 2, stride=2)
        self.dec1 = DoubleConv(2 * c1, FINAL_TRUNK_CHANNELS)

        self.heads = nn.ModuleDict({
            name: PredictionHead(FINAL_TRUNK_CHANNELS, num_classes)
            for name in HEAD_NAMES if name in heads
        })

    # -- forward ----------------------------------------------------------

    def trunk_features(self, x: torch.Tensor) -> torch.Tensor:
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))
        e4 = self.enc4(self.pool(e3))
        d3 = self.dec3(torch.cat([self.up3(e4), e3], dim=1))
        d2 = self.dec2(torch.cat([self.up2(d3), e2], dim=1))
        return self.dec1(torch.cat([self.up1(d2), e1], dim=1))

    def forward_heads(self, x: torch.Tensor, names) -> dict:
        """Probability maps (B,K,H,W) for the requested heads from one shared
        trunk pass. Pads to a multiple of 8 and crops back."""
        x, crop = _pad_to_divisor(x)
        feat = self.trunk_features(x)
        out = {}
        for name in names:
            if name not in self.heads:
                raise KeyError(f"model has no '{name}' head")
            probs = torch.softmax(self.heads[name](feat), dim=1)
            if not torch.isfinite(probs).all():
                self._raise_nonfinite(x)
            out[name] = probs[:, :, crop[0]:crop[1], crop[2]:crop[3]]
        return out

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Normal-head probability map (B,K,H,W)."""
        return self.forward_heads(x, ("normal",))["normal"]

    def _raise_nonfinite(self, x: torch.Tensor):
        """Replay the forward stage by stage to name the first bad layer."""
        h = x
        with torch.no_grad():
            e = {}
            for name, mod, pre in (
                ("enc1", self.enc1, None), ("enc2", self.enc2, "pool"),
                ("enc3", self.enc3, "pool"), ("enc4", self.enc4, "pool"),
            ):
                h = self.pool(h) if pre else h
                h = mod(h)
                e[name] = h
                if not torch.isfinite(h).all():
                    raise FloatingPointError(f"non-finite activation in {name}")
            h = e["enc4"]
            for name, up, dec, skip in (
                ("dec3", self.up3, self.dec3, "enc3"),
                ("dec2", self.up2, self.dec2, "enc2"),
                ("dec1", self.up1, self.dec1, "enc1"),
            ):
                h = dec(torch.cat([up(h), e[skip]], dim=1))
                if not torch.isfinite(h).all():
                    raise FloatingPointError(f"non-finite activation in {name}")
            for name, head in self.heads.items():
                if not torch.isfinite(head(h)).all():
                    raise FloatingPointError(
                        f"non-finite activation in head '{name}'")
        raise FloatingPointError("non-finite activation of unknown origin")

    # -- parameter bookkeeping --------------------------------------------

    def trunk_parameters(self):
        return [p for n, p in self.named_parameters() if not n.startswith("heads.")]

    def head_parameters(self, name: str):
        return list(self.heads[name].parameters())

    def discard_auxiliary_heads(self):
        """Drop the conservative and radical heads (inference keeps only the
        trunk and the normal head)."""
        for name in ("conservative", "radical"):
            if name in self.heads:
                del self.heads[name]


def _pad_to_divisor(x: torch.Tensor):
    h, w = x.shape[-2], x.shape[-1]
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ValueError(f"input {h}x{w} below minimum side {MIN_SIDE}")
    ph = (-h) % DIVISOR
    pw = (-w) % DIVISOR
    if ph == 0 and pw == 0:
        return x, (0, h, 0, w)
    x = F.pad(x, (0, pw, 0, ph), mode="reflect")
    return x, (0, h, 0, w)


def build_model(seed: int, channels=(16, 32, 64, 64), num_classes: int = 2) -> SegModel:
    """Deterministically initialized student model.

    Parameters come from torch's fan-in-scaled uniform defaults drawn from a
    forked RNG, so the same seed always yields bitwise-identical weights and
    each head gets its own distinct draw.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, "model-init"))
        model = SegModel(channels=channels, num_classes=num_classes)
    # NHWC weight layout picks the faster onednn conv kernels on CPU
    return model.to(memory_format=torch.channels_last)


def build_teacher(student: SegModel) -> SegModel:
    """Teacher twin: exact copy of the trunk and normal head, frozen.

    The teacher never records gradients and always runs in eval mode with its
    own running batch-norm statistics.
    """
    teacher = SegModel(channels=student.channels,
                       num_classes=student.num_classes, heads=("normal",))
    teacher = teacher.to(memory_format=torch.channels_last)
    teacher.load_state_dict(_teacher_state(student))
    teacher.requires_grad_(False)
    teacher.eval()
    return teacher


def _teacher_state(student: SegModel) -> dict:
    state = {}
    for key, value in student.state_dict().items():
        if key.startswith("heads.") and not key.startswith("heads.normal."):
            continue
        state[key] = value.detach().clone()
    return state


def forward_all(model: SegModel, x: torch.Tensor):
    """(normal, conservative, radical) probability maps from one trunk pass."""
    out = model.forward_heads(x, HEAD_NAMES)
    return out["normal"], out["conservative"], out["radical"]


def forward_teacher(teacher: SegModel, x: torch.Tensor) -> torch.Tensor:
    """Teacher probability map, computed without building a graph."""
    was_training = teacher.training
    teacher.eval()
    try:
        with torch.no_grad():
            return teacher(x)
    finally:
        teacher.train(was_training)


# -- numpy-facing inference helpers ---------------------------------------

def validate_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"image must be 2D, got shape {image.shape}")
    if image.shape[0] < MIN_SIDE or image.shape[1] < MIN_SIDE:
        raise ValueError(f"image {image.shape} below minimum side {MIN_SIDE}")
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite values")
    if image.min() < -1e-6 or image.max() > 1 + 1e-6:
        raise ValueError("image intensities must lie in [0, 1]")
    return image.astype(np.float32, copy=False)


def _to_batch(images) -> torch.Tensor:
    arrs = [validate_image(im) for im in images]
    batch = torch.from_numpy(np.stack(arrs)[:, None, :, :])
    return batch.to(memory_format=torch.channels_last)


def infer_probs(model: SegModel, images, heads=("normal",), batch_size: int = 8):
    """Per-head probability maps for a list of H x W numpy images.

    Returns {head: list of H x W x K float32 arrays}; runs in eval mode with
    no gradient recording.
    """
    was_training = model.training
    model.eval()
    out = {name: [] for name in heads}
    try:
        with torch.no_grad():
            for lo in range(0, len(images), batch_size):
                batch = _to_batch(images[lo:lo + batch_size])
                probs = model.forward_heads(batch, heads)
                for name in heads:
                    arr = probs[name].permute(0, 2, 3, 1).numpy()
                    out[name].extend(np.ascontiguousarray(a) for a in arr)
    finally:
        model.train(was_training)
    return out


def predict_labels(model: SegModel, images, batch_size: int = 8):
    """Argmax label maps (H x W int64) of the normal head; ties resolve to
    the lowest class index."""
    probs = infer_probs(model, images, heads=("normal",), batch_size=batch_size)
    return [np.argmax(p, axis=-1).astype(np.int64) for p in probs["normal"]]
