"""Training orchestration: supervised pretraining on labeled data, then
alternating certain-region self-training / uncertain-region consistency /
supervised updates with a mean-teacher copy and scheduled pseudo-label
refreshes.

Ablation variants:

    seg          supervised objective only (labeled data)
    seg+st       + self-training on all unlabeled pixels
    seg+st_mask  + self-training restricted to the certain region
    seg+mt       + teacher consistency on all unlabeled pixels
    seg+mt_mask  + teacher consistency restricted to the uncertain region
    ours         certain-region self-training + uncertain-region consistency

Every stochastic choice is derived from (config seed, epoch, purpose), so
runs are reproducible and resuming at an epoch boundary replays the exact
run. Within one joint iteration the three objectives are applied as separate
optimizer steps, in order, sharing one Adam instance; the teacher is blended
after every iteration.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import data as data_mod
from .losses import LossValue, certain_region_loss, consistency_loss, supervised_loss
from .metrics import MetricReport, confusion_counts, dice
from .model import (SegModel, build_model, build_teacher, forward_teacher,
                    infer_probs, predict_labels)
from .seeding import derive_seed, numpy_rng
from .uncertainty import make_masks, mask_quality

VARIANTS = ("seg", "seg+st", "seg+st_mask", "seg+mt", "seg+mt_mask", "ours")

EPOCH_CSV_COLUMNS = ("epoch", "L_crm", "L_c-sn", "L_cnt",
                     "uncertain_area_fraction", "val_dsc")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 5.0
    beta: float = 0.99
    lr: float = 1e-3
    adam_betas: tuple = (0.5, 0.999)
    batch_size: int = 4
    pretrain_epochs: int = 30
    joint_epochs: int = 100
    relabel_interval: int = 5
    seed: int = 0
    variant: str = "ours"
    channels: tuple = (16, 32, 64, 64)
    num_classes: int = 2
    augment: bool = True
    teacher_noise: float = 0.0        # additive input noise for the teacher pass
    labeled_step_interval: int = 1    # supervised step every N joint iterations

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.alpha < 1.0:
            raise ValueError("alpha must be >= 1")
        if self.relabel_interval < 1:
            raise ValueError("relabel interval must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; "
                             f"expected one of {VARIANTS}")
        if self.batch_size < 1 or self.labeled_step_interval < 1:
            raise ValueError("batch size and step intervals must be >= 1")

    @property
    def uses_self_training(self):
        return self.variant in ("seg+st", "seg+st_mask", "ours")

    @property
    def uses_consistency(self):
        return self.variant in ("seg+mt", "seg+mt_mask", "ours")

    @property
    def uses_region_masks(self):
        return self.variant in ("seg+st_mask", "seg+mt_mask", "ours")

    @property
    def uses_unlabeled(self):
        return self.uses_self_training or self.uses_consistency


@dataclass
class PseudoLabelCache:
    """Per-unlabeled-image pseudo labels and region masks, stamped with the
    epoch at which they were computed."""

    pseudo: list
    certain: list
    uncertain: list
    epoch_stamp: int

    @property
    def mean_uncertain_fraction(self) -> float:
        if not self.uncertain:
            return 0.0
        return float(np.mean([m.mean() for m in self.uncertain]))


@dataclass
class TrainResult:
    model: SegModel
    teacher: SegModel | None
    cache: PseudoLabelCache | None
    history: list = field(default_factory=list)
    mask_quality_history: list = field(default_factory=list)


# -- tensor assembly ---------------------------------------------------------


def _image_batch(images) -> torch.Tensor:
    batch = torch.from_numpy(np.stack(images).astype(np.float32))[:, None]
    return batch.to(memory_format=torch.channels_last)


def _label_batch(labels) -> torch.Tensor:
    return torch.from_numpy(np.stack(labels).astype(np.int64))


def _mask_batch(masks) -> torch.Tensor:
    return torch.from_numpy(np.stack(masks).astype(np.float32))


def _batched(indices, batch_size):
    for lo in range(0, len(indices), batch_size):
        yield indices[lo:lo + batch_size]


class _LabeledStream:
    """Cycles through the labeled set in seeded shuffled order, reshuffling
    on every wrap. Resumable via its (seed, wrap count, position) state."""

    def __init__(self, count, seed, wraps=0, pos=0):
        self.count = count
        self.seed = seed
        self.wraps = wraps
        self.pos = pos
        self._order = self._perm()

    def _perm(self):
        return numpy_rng(self.seed, "labeled-cycle", self.wraps).permutation(self.count)

    def take(self, n):
        out = []
        while len(out) < n:
            if self.pos >= self.count:
                self.wraps += 1
                self.pos = 0
                self._order = self._perm()
            out.append(int(self._order[self.pos]))
            self.pos += 1
        return out

    def state(self):
        return {"wraps": self.wraps, "pos": self.pos}


def _check_finite(loss: LossValue, context: str):
    if not torch.isfinite(loss.value).all():
        raise RuntimeError(f"non-finite loss at {context}")


def _step(optimizer, loss: LossValue, context: str):
    """One optimizer step; skipped (returns None) when no pixel contributed."""
    if loss.pixel_count == 0:
        return None
    _check_finite(loss, context)
    optimizer.zero_grad(set_to_none=True)
    loss.value.backward()
    optimizer.step()
    return float(loss.value.detach())


def make_optimizer(model: SegModel, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr,
                            betas=tuple(cfg.adam_betas))


# -- data preparation per step ------------------------------------------------


def _augmented_labeled(items, cfg: TrainConfig, rng):
    if not cfg.augment:
        return [im for im, _ in items], [lb for _, lb in items]
    images, labels = [], []
    for im, lb in items:
        params = data_mod.draw_geom_params(rng)
        images.append(data_mod.transform_image(im, params))
        labels.append(data_mod.transform_labels(lb, params))
    return images, labels


def _augmented_unlabeled(split, cache, idxs, cfg: TrainConfig, rng):
    """Identically transformed (image, pseudo, certain, uncertain) tuples."""
    images, pseudos, certains, uncertains = [], [], [], []
    for i in idxs:
        params = (data_mod.draw_geom_params(rng) if cfg.augment
                  else data_mod.GeomParams())
        images.append(data_mod.transform_image(split.unlabeled[i], params))
        pseudos.append(data_mod.transform_labels(cache.pseudo[i], params))
        certains.append(data_mod.transform_labels(cache.certain[i], params))
        uncertains.append(data_mod.transform_labels(cache.uncertain[i], params))
    return images, pseudos, certains, uncertains


# -- core operations ----------------------------------------------------------


def pretrain(model: SegModel, labeled, cfg: TrainConfig, history=None) -> SegModel:
    """Supervised phase: optimize the three-head objective on labeled data."""
    if not labeled:
        raise ValueError("pretraining needs at least one labeled image")
    optimizer = make_optimizer(model, cfg)
    model.train()
    for epoch in range(cfg.pretrain_epochs):
        order = numpy_rng(cfg.seed, "pre-order", epoch).permutation(len(labeled))
        aug_rng = numpy_rng(cfg.seed, "pre-aug", epoch)
        losses = []
        for b, idxs in enumerate(_batched(order, cfg.batch_size)):
            images, labels = _augmented_labeled([labeled[i] for i in idxs],
                                                cfg, aug_rng)
            loss = supervised_loss(model, _image_batch(images),
                                   _label_batch(labels), cfg.alpha)
            value = _step(optimizer, loss,
                          f"pretrain epoch {epoch} batch {b}")
            losses.append(value)
        if history is not None:
            history.append({"epoch": epoch, "phase": "pretrain",
                            "L_crm": float(np.mean(losses))})
    return model


def init_teacher(model: SegModel) -> SegModel:
    """Teacher starts as an exact copy of the trunk and normal head."""
    return build_teacher(model)


def ema_update(student: SegModel, teacher: SegModel, beta: float) -> SegModel:
    """Blend teacher toward student: t <- beta * t + (1 - beta) * s.

    Applies to weights and running batch-norm statistics; integer step
    counters are copied. beta=1 leaves the teacher unchanged, beta=0 copies
    the student.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    s_state = student.state_dict()
    with torch.no_grad():
        for key, t_val in teacher.state_dict().items():
            s_val = s_state[key]
            if t_val.shape != s_val.shape:
                raise ValueError(f"teacher/student shape mismatch at {key}")
            if t_val.dtype.is_floating_point:
                t_val.mul_(beta).add_(s_val.to(t_val.dtype), alpha=1.0 - beta)
            else:
                t_val.copy_(s_val)
    return teacher


def relabel(model: SegModel, unlabeled, epoch: int = 0,
            batch_size: int = 8) -> PseudoLabelCache:
    """Refresh pseudo labels and certain/uncertain masks for every unlabeled
    image from the current heads."""
    if len(unlabeled) == 0:
        return PseudoLabelCache([], [], [], epoch_stamp=epoch)
    heads = ("normal", "conservative", "radical")
    probs = infer_probs(model, unlabeled, heads=heads, batch_size=batch_size)
    pseudo, certain, uncertain = [], [], []
    for p_n, p_c, p_r in zip(*(probs[h] for h in heads)):
        pseudo.append(np.argmax(p_n, axis=-1).astype(np.int64))
        unc, cer = make_masks(np.argmax(p_c, axis=-1), np.argmax(p_r, axis=-1))
        uncertain.append(unc)
        certain.append(cer)
    return PseudoLabelCache(pseudo=pseudo, certain=certain,
                            uncertain=uncertain, epoch_stamp=epoch)


def joint_epoch(model: SegModel, teacher, cache, split, cfg: TrainConfig,
                optimizer, epoch: int, labeled_stream=None) -> dict:
    """One epoch of the alternating phase.

    Per iteration and in order: (a) self-training step on an unlabeled
    batch, (b) consistency step on an unlabeled batch, (c) supervised step
    on a labeled batch, then an EMA teacher update. Variant flags drop (a)
    or (b); unmasked variants use all-ones region masks.
    """
    n_unl = len(split.unlabeled)
    if cfg.uses_unlabeled and n_unl:
        if cache is None:
            raise ValueError("joint epoch needs a pseudo-label cache")
        if epoch - cache.epoch_stamp >= cfg.relabel_interval:
            raise RuntimeError(
                f"stale cache: stamped {cache.epoch_stamp}, epoch {epoch}, "
                f"interval {cfg.relabel_interval}")
        iters = math.ceil(n_unl / cfg.batch_size)
        unl_order = numpy_rng(cfg.seed, "unl-order", epoch).permutation(n_unl)
    else:
        iters = math.ceil(len(split.labeled) / cfg.batch_size)
        unl_order = np.zeros(0, dtype=int)
    if labeled_stream is None:
        labeled_stream = _LabeledStream(len(split.labeled), cfg.seed)
    aug_rng = numpy_rng(cfg.seed, "joint-aug", epoch)
    noise_rng = numpy_rng(cfg.seed, "teacher-noise", epoch)

    model.train()
    sums = {"st": [], "cnt": [], "sup": []}
    for it in range(iters):
        if cfg.uses_unlabeled and n_unl:
            idxs = unl_order[it * cfg.batch_size:(it + 1) * cfg.batch_size]
            images, pseudos, certains, uncertains = _augmented_unlabeled(
                split, cache, idxs, cfg, aug_rng)
            x_unl = _image_batch(images)
            ones = [np.ones_like(c) for c in certains]

            if cfg.uses_self_training:
                masks = certains if cfg.uses_region_masks else ones
                loss = certain_region_loss(model(x_unl),
                                           _label_batch(pseudos),
                                           _mask_batch(masks))
                value = _step(optimizer, loss,
                              f"self-training epoch {epoch} iter {it}")
                if value is not None:
                    sums["st"].append(value)

            if cfg.uses_consistency:
                masks = uncertains if cfg.uses_region_masks else ones
                x_teacher = x_unl
                if cfg.teacher_noise > 0:
                    noise = noise_rng.normal(0.0, cfg.teacher_noise,
                                             size=tuple(x_unl.shape))
                    x_teacher = (x_unl + torch.from_numpy(noise.astype(np.float32))
                                 ).clamp(0.0, 1.0)
                t_probs = forward_teacher(teacher, x_teacher)
                loss = consistency_loss(model(x_unl), t_probs, _mask_batch(masks))
                value = _step(optimizer, loss,
                              f"consistency epoch {epoch} iter {it}")
                if value is not None:
                    sums["cnt"].append(value)

        if it % cfg.labeled_step_interval == 0:
            items = [split.labeled[i] for i in labeled_stream.take(cfg.batch_size)]
            images, labels = _augmented_labeled(items, cfg, aug_rng)
            loss = supervised_loss(model, _image_batch(images),
                                   _label_batch(labels), cfg.alpha)
            value = _step(optimizer, loss,
                          f"supervised epoch {epoch} iter {it}")
            sums["sup"].append(value)

        if teacher is not None:
            ema_update(model, teacher, cfg.beta)

    return {
        "epoch": epoch,
        "L_crm": float(np.mean(sums["sup"])) if sums["sup"] else None,
        "L_c-sn": float(np.mean(sums["st"])) if sums["st"] else None,
        "L_cnt": float(np.mean(sums["cnt"])) if sums["cnt"] else None,
        "uncertain_area_fraction":
            cache.mean_uncertain_fraction if cache is not None else None,
    }


def predict(model: SegModel, image: np.ndarray) -> np.ndarray:
    """Label map from the normal head only; the conservative and radical
    heads play no part at test time."""
    return predict_labels(model, [image])[0]


def evaluate(model: SegModel, test_items, foreground: int = 1) -> MetricReport:
    report = MetricReport()
    preds = predict_labels(model, [im for im, _ in test_items])
    for i, (pred, (_, truth)) in enumerate(zip(preds, test_items)):
        report.add(i, pred, truth, foreground)
    return report


def val_dice(model: SegModel, test_items, foreground: int = 1):
    values = []
    preds = predict_labels(model, [im for im, _ in test_items])
    for pred, (_, truth) in zip(preds, test_items):
        d = dice(confusion_counts(pred, truth, foreground))
        if d is not None:
            values.append(d)
    return float(np.mean(values)) if values else None


def _cache_quality(cache: PseudoLabelCache, truths):
    """Mean certain-region PPV/TPR/CSI of cached pseudo labels against the
    privately retained unlabeled ground truth."""
    cols = {"ppv": [], "tpr": [], "csi": []}
    for cer, pse, tru in zip(cache.certain, cache.pseudo, truths):
        p, t, c = mask_quality(cer, pse, tru)
        for key, val in zip(("ppv", "tpr", "csi"), (p, t, c)):
            if val is not None:
                cols[key].append(val)
    return {k: (float(np.mean(v)) if v else None) for k, v in cols.items()}


def joint_train(model: SegModel, split, cfg: TrainConfig,
                checkpoint_hook=None, start_epoch: int = 0,
                optimizer=None, teacher=None, cache=None,
                stream_state=None, result: TrainResult | None = None) -> TrainResult:
    """Run the alternating phase for cfg.joint_epochs epochs.

    The pseudo-label cache refreshes every relabel_interval epochs (and at
    epoch 0); checkpoint_hook(epoch, model, teacher, extras) fires at each
    refresh for persistence. Pass the optimizer/teacher/cache/stream_state
    captured by a hook to resume mid-run.
    """
    if result is None:
        result = TrainResult(model=model, teacher=None, cache=None)
    if cfg.uses_consistency and teacher is None:
        teacher = init_teacher(model)
    result.teacher = teacher
    optimizer = optimizer or make_optimizer(model, cfg)
    stream_state = stream_state or {}
    stream = _LabeledStream(len(split.labeled), cfg.seed, **stream_state)

    for epoch in range(start_epoch, cfg.joint_epochs):
        if cfg.uses_unlabeled and split.unlabeled and \
                epoch % cfg.relabel_interval == 0:
            cache = relabel(model, split.unlabeled, epoch,
                            batch_size=max(cfg.batch_size, 8))
            result.cache = cache
            if split.unlabeled_truth:
                quality = _cache_quality(cache, split.unlabeled_truth)
                quality["epoch"] = epoch
                result.mask_quality_history.append(quality)
            if checkpoint_hook is not None:
                checkpoint_hook(epoch, model, teacher, optimizer=optimizer,
                                cache=cache, stream_state=stream.state(),
                                result=result)
        stats = joint_epoch(model, teacher, cache, split, cfg, optimizer,
                            epoch, labeled_stream=stream)
        stats["phase"] = "joint"
        stats["val_dsc"] = val_dice(model, split.test)
        result.history.append(stats)
    result.cache = cache
    return result


def train_semisupervised(split, cfg: TrainConfig,
                         checkpoint_hook=None) -> TrainResult:
    """Full pipeline: build, pretrain, then the variant's joint phase."""
    model = build_model(cfg.seed, cfg.channels, cfg.num_classes)
    history = []
    pretrain(model, split.labeled, cfg, history=history)
    result = TrainResult(model=model, teacher=None, cache=None, history=history)
    for row in history:
        row.setdefault("val_dsc", None)
    result = joint_train(model, split, cfg, checkpoint_hook=checkpoint_hook,
                         result=result)
    return result


# -- one-vs-rest multi-class ---------------------------------------------------


def vote_from_foreground_probs(fg: np.ndarray) -> np.ndarray:
    """Confidence-weighted vote over per-class binary foreground maps.

    fg has shape (K, H, W). A class claims a pixel when its foreground
    probability exceeds 0.5; among claimants the highest probability wins
    (ties to the lowest class index); pixels claimed by nobody are
    background.
    """
    claimed = fg > 0.5
    score = np.where(claimed, fg, -1.0)
    winner = np.argmax(score, axis=0)
    return np.where(claimed.any(axis=0), winner, 0).astype(np.int64)


@dataclass
class MultiClassPredictor:
    """Combines per-class binary models: each pixel goes to the class whose
    binary model claims it with the highest foreground probability; pixels
    claimed by no model fall back to background."""

    models: list

    def predict(self, image: np.ndarray) -> np.ndarray:
        fg = []
        for model in self.models:
            probs = infer_probs(model, [image])["normal"][0]
            fg.append(probs[:, :, 1])
        return vote_from_foreground_probs(np.stack(fg))


def _binary_subsplit(split, cls: int):
    return data_mod.DatasetSplit(
        labeled=[(im, data_mod.binarize_labels(lb, cls))
                 for im, lb in split.labeled],
        unlabeled=list(split.unlabeled),
        unlabeled_truth=[data_mod.binarize_labels(lb, cls)
                         for lb in split.unlabeled_truth],
        test=[(im, data_mod.binarize_labels(lb, cls))
              for im, lb in split.test])


def train_multiclass(split, cfg: TrainConfig, num_classes: int):
    """One binary model per class (one-vs-rest), plus the voting predictor."""
    if num_classes < 3:
        raise ValueError("multi-class training expects at least 3 classes")
    models = []
    for cls in range(num_classes):
        sub_cfg = replace(cfg, num_classes=2,
                          seed=derive_seed(cfg.seed, "one-vs-rest", cls))
        result = train_semisupervised(_binary_subsplit(split, cls), sub_cfg)
        models.append(result.model)
    return models, MultiClassPredictor(models)
