"""Benchmark harness for the synthetic semi-supervised comparison.

One cell = (seed, labeled:unlabeled ratio). Within a cell every variant
starts from the same supervised-pretrained model, mirroring how the
alternating phase is initialized, so variant differences come from the
joint phase alone. Cells are independent and deterministic, hence safe to
run in parallel worker processes.
"""

from __future__ import annotations

import copy
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np
import torch

from .data import DEFAULT_BENCHMARK, SplitConfig, SyntheticConfig, generate, split
from .metrics import confusion_counts, tpr
from .model import build_model, infer_probs
from .trainer import TrainConfig, joint_train, pretrain, val_dice
from .uncertainty import make_masks, mask_quality, softmax_threshold_mask

BENCHMARK_VARIANTS = ("seg", "seg+st", "seg+mt", "ours")


def benchmark_data_config(seed: int = 0) -> SyntheticConfig:
    return SyntheticConfig(seed=seed, **DEFAULT_BENCHMARK)


def benchmark_train_config(seed: int, pretrain_epochs: int, joint_epochs: int,
                           relabel_interval: int, augment: bool = True,
                           **kw) -> TrainConfig:
    return TrainConfig(seed=seed, pretrain_epochs=pretrain_epochs,
                       joint_epochs=joint_epochs,
                       relabel_interval=relabel_interval, augment=augment,
                       **kw)


def head_recalls(model, test_items):
    """Mean foreground recall of the conservative and radical heads."""
    images = [im for im, _ in test_items]
    probs = infer_probs(model, images, heads=("conservative", "radical"))
    out = {}
    for head in ("conservative", "radical"):
        vals = []
        for p, (_, truth) in zip(probs[head], test_items):
            pred = np.argmax(p, axis=-1)
            r = tpr(confusion_counts(pred, truth, 1))
            if r is not None:
                vals.append(r)
        out[head] = float(np.mean(vals)) if vals else None
    return out


def initial_mask_quality(model, unlabeled, truths, taus=(0.5, 0.7, 0.9)):
    """Certain-region CSI of the disagreement estimator vs the softmax
    threshold baselines, averaged over the unlabeled pool."""
    heads = ("normal", "conservative", "radical")
    probs = infer_probs(model, unlabeled, heads=heads)
    crm_csi, base_csi = [], {tau: [] for tau in taus}
    for p_n, p_c, p_r, truth in zip(probs["normal"], probs["conservative"],
                                    probs["radical"], truths):
        pseudo = np.argmax(p_n, axis=-1)
        _, certain = make_masks(np.argmax(p_c, axis=-1),
                                np.argmax(p_r, axis=-1))
        _, _, c = mask_quality(certain, pseudo, truth)
        if c is not None:
            crm_csi.append(c)
        for tau in taus:
            cer, pse = softmax_threshold_mask(p_n, tau)
            _, _, c = mask_quality(cer, pse, truth)
            if c is not None:
                base_csi[tau].append(c)
    return {
        "crm_csi": float(np.mean(crm_csi)) if crm_csi else None,
        "softmax_csi": {tau: (float(np.mean(v)) if v else None)
                        for tau, v in base_csi.items()},
    }


def run_cell(seed: int, ratio, variants, base_cfg: TrainConfig,
             data_seed: int = 0):
    """Pretrain once, collect initial-prediction stats, then run each
    variant's joint phase from a copy of the pretrained model."""
    torch.set_num_threads(int(os.environ.get("CRSEG_THREADS", "1")))
    dataset = generate(benchmark_data_config(data_seed))
    parts = split(dataset, SplitConfig(test_fraction=0.2,
                                       labeled_ratio=tuple(ratio)), seed)
    cfg = replace(base_cfg, seed=seed)
    model = build_model(cfg.seed, cfg.channels, cfg.num_classes)
    pretrain(model, parts.labeled, cfg)

    cell = {
        "seed": seed,
        "ratio": tuple(ratio),
        "pretrain_dsc": val_dice(model, parts.test),
        "recalls": head_recalls(model, parts.test),
        "mask_quality": initial_mask_quality(model, parts.unlabeled,
                                             parts.unlabeled_truth),
        "dsc": {},
        "uncertain_fraction": {},
    }
    for variant in variants:
        vcfg = replace(cfg, variant=variant)
        vmodel = copy.deepcopy(model)
        result = joint_train(vmodel, parts, vcfg)
        cell["dsc"][variant] = val_dice(vmodel, parts.test)
        if result.cache is not None:
            cell["uncertain_fraction"][variant] = \
                result.cache.mean_uncertain_fraction
    return cell


def _run_cell_payload(payload):
    seed, ratio, variants, cfg, data_seed = payload
    return run_cell(seed, ratio, variants, cfg, data_seed)


def run_matrix(cells, base_cfg: TrainConfig, workers: int = 1,
               data_seed: int = 0):
    """cells: iterable of (seed, ratio, variants). Returns a list of cell
    dicts in input order."""
    payloads = [(seed, tuple(ratio), tuple(variants), base_cfg, data_seed)
                for seed, ratio, variants in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_cell_payload, payloads))
    return [_run_cell_payload(p) for p in payloads]
