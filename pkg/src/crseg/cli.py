"""Experiment command line: dataset generation, training, evaluation,
sweeps, and uncertainty-mask visualization.

Subcommands: gen, train, eval, sweep, masks. Every run snapshots its full
config (INI key-value format) into its output directory, so any sweep cell
can be reproduced by a single `train` with the cell's config. Errors print
one machine-parsable line `ERROR: <message>` on stderr and exit nonzero.
The only environment variable honored is CRSEG_THREADS (torch thread count).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (DatasetSplit, SplitConfig, SyntheticConfig, generate,
                   load_dataset, partition_labeled, save_dataset,
                   train_test_split)
from .trainer import (EPOCH_CSV_COLUMNS, TrainConfig, TrainResult, VARIANTS,
                      evaluate, joint_train, make_optimizer, pretrain, relabel)
from .uncertainty import save_mask_png


# -- configuration file ------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    data: SyntheticConfig = SyntheticConfig()
    split: SplitConfig = SplitConfig()
    train: TrainConfig = TrainConfig()
    out: str = "runs/exp"
    seeds: tuple = (0, 1, 2)
    alphas: tuple = (1.0, 2.0, 5.0, 10.0)
    ratios: tuple = ("1:4", "1:2", "1:1")
    variants: tuple = VARIANTS


def parse_ratio(text: str):
    try:
        a, b = text.split(":")
        return int(a), int(b)
    except ValueError:
        raise ValueError(f"ratio must look like A:B, got {text!r}") from None


def _fmt_tuple(values):
    return ",".join(str(v) for v in values)


def _config_to_ini(cfg: ExperimentConfig) -> configparser.ConfigParser:
    ini = configparser.ConfigParser()
    ini["data"] = {
        "image_size": f"{cfg.data.image_size[0]}x{cfg.data.image_size[1]}",
        "n_images": str(cfg.data.n_images),
        "kind": cfg.data.kind,
        "contrast": str(cfg.data.contrast),
        "noise_sigma": str(cfg.data.noise_sigma),
        "area_range": _fmt_tuple(cfg.data.area_range),
        "seed": str(cfg.data.seed),
    }
    ini["split"] = {
        "test_fraction": str(cfg.split.test_fraction),
        "ratio": f"{cfg.split.labeled_ratio[0]}:{cfg.split.labeled_ratio[1]}",
    }
    t = cfg.train
    ini["train"] = {
        "variant": t.variant, "alpha": str(t.alpha), "beta": str(t.beta),
        "lr": str(t.lr), "adam_betas": _fmt_tuple(t.adam_betas),
        "batch_size": str(t.batch_size),
        "pretrain_epochs": str(t.pretrain_epochs),
        "joint_epochs": str(t.joint_epochs),
        "relabel_interval": str(t.relabel_interval),
        "seed": str(t.seed), "channels": _fmt_tuple(t.channels),
        "augment": str(t.augment).lower(),
        "teacher_noise": str(t.teacher_noise),
        "labeled_step_interval": str(t.labeled_step_interval),
    }
    ini["experiment"] = {
        "out": cfg.out,
        "seeds": _fmt_tuple(cfg.seeds),
        "alphas": _fmt_tuple(cfg.alphas),
        "ratios": _fmt_tuple(cfg.ratios),
        "variants": _fmt_tuple(cfg.variants),
    }
    return ini


def write_config(cfg: ExperimentConfig, path):
    with open(path, "w") as fh:
        _config_to_ini(cfg).write(fh)


def _config_from_ini(ini: configparser.ConfigParser) -> ExperimentConfig:
    base = ExperimentConfig()

    def get(section, key, cast, default):
        if ini.has_option(section, key):
            return cast(ini.get(section, key))
        return default

    def tup(text, cast):
        return tuple(cast(v) for v in text.split(",") if v.strip())

    size_text = get("data", "image_size", str, None)
    if size_text:
        h, w = size_text.replace("x", ",").split(",")
        image_size = (int(h), int(w))
    else:
        image_size = base.data.image_size
    data = SyntheticConfig(
        image_size=image_size,
        n_images=get("data", "n_images", int, base.data.n_images),
        kind=get("data", "kind", str, base.data.kind),
        contrast=get("data", "contrast", float, base.data.contrast),
        noise_sigma=get("data", "noise_sigma", float, base.data.noise_sigma),
        area_range=get("data", "area_range", lambda s: tup(s, float),
                       base.data.area_range),
        seed=get("data", "seed", int, base.data.seed))
    split = SplitConfig(
        test_fraction=get("split", "test_fraction", float,
                          base.split.test_fraction),
        labeled_ratio=get("split", "ratio", parse_ratio,
                          base.split.labeled_ratio))
    bt = base.train
    train = TrainConfig(
        variant=get("train", "variant", str, bt.variant),
        alpha=get("train", "alpha", float, bt.alpha),
        beta=get("train", "beta", float, bt.beta),
        lr=get("train", "lr", float, bt.lr),
        adam_betas=get("train", "adam_betas", lambda s: tup(s, float),
                       bt.adam_betas),
        batch_size=get("train", "batch_size", int, bt.batch_size),
        pretrain_epochs=get("train", "pretrain_epochs", int, bt.pretrain_epochs),
        joint_epochs=get("train", "joint_epochs", int, bt.joint_epochs),
        relabel_interval=get("train", "relabel_interval", int,
                             bt.relabel_interval),
        seed=get("train", "seed", int, bt.seed),
        channels=get("train", "channels", lambda s: tup(s, int), bt.channels),
        augment=get("train", "augment", lambda s: s.lower() in ("1", "true", "yes"),
                    bt.augment),
        teacher_noise=get("train", "teacher_noise", float, bt.teacher_noise),
        labeled_step_interval=get("train", "labeled_step_interval", int,
                                  bt.labeled_step_interval))
    return ExperimentConfig(
        data=data, split=split, train=train,
        out=get("experiment", "out", str, base.out),
        seeds=get("experiment", "seeds", lambda s: tup(s, int), base.seeds),
        alphas=get("experiment", "alphas", lambda s: tup(s, float), base.alphas),
        ratios=get("experiment", "ratios", lambda s: tup(s, str), base.ratios),
        variants=get("experiment", "variants", lambda s: tup(s, str),
                     base.variants))


def read_config(path) -> ExperimentConfig:
    ini = configparser.ConfigParser()
    with open(path) as fh:
        ini.read_file(fh)
    return _config_from_ini(ini)


def config_to_text(cfg: ExperimentConfig) -> str:
    buf = io.StringIO()
    _config_to_ini(cfg).write(buf)
    return buf.getvalue()


def config_from_text(text: str) -> ExperimentConfig:
    ini = configparser.ConfigParser()
    ini.read_string(text)
    return _config_from_ini(ini)


# -- shared run machinery ------------------------------------------------------


def _load_pools(data_dir: Path):
    train_items = load_dataset(data_dir / "train" / "data.crd1")
    test_items = load_dataset(data_dir / "test" / "data.crd1")
    return train_items, test_items


def _make_split(exp: ExperimentConfig, data_dir: Path) -> DatasetSplit:
    train_items, test_items = _load_pools(data_dir)
    labeled, unlabeled, truth = partition_labeled(
        train_items, exp.split.labeled_ratio, exp.train.seed)
    return DatasetSplit(labeled=labeled, unlabeled=unlabeled,
                        unlabeled_truth=truth, test=test_items)


def _write_epoch_csv(history, cfg: TrainConfig, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPOCH_CSV_COLUMNS)
        for row in history:
            epoch = row["epoch"]
            if row.get("phase") == "joint":
                epoch += cfg.pretrain_epochs
            writer.writerow([
                epoch,
                _cell(row.get("L_crm")), _cell(row.get("L_c-sn")),
                _cell(row.get("L_cnt")),
                _cell(row.get("uncertain_area_fraction")),
                _cell(row.get("val_dsc")),
            ])


def _cell(value):
    return "" if value is None else f"{value:.9g}"


def _write_mask_quality_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("epoch", "ppv", "tpr", "csi"))
        for row in rows:
            writer.writerow([row["epoch"], _cell(row["ppv"]),
                             _cell(row["tpr"]), _cell(row["csi"])])


def _write_plots(history, mq_rows, cfg: TrainConfig, out_dir: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    def series(key, phase=None):
        xs, ys = [], []
        for row in history:
            if phase and row.get("phase") != phase:
                continue
            v = row.get(key)
            if v is not None:
                xs.append(row["epoch"] + (cfg.pretrain_epochs
                                          if row.get("phase") == "joint" else 0))
                ys.append(v)
        return xs, ys

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
    for key, label in (("L_crm", "supervised"), ("L_c-sn", "certain self-training"),
                       ("L_cnt", "uncertain consistency")):
        xs, ys = series(key)
        if ys:
            ax1.plot(xs, ys, label=label)
    ax1.set_ylabel("loss")
    ax1.legend()
    for key, label in (("val_dsc", "test DSC"),
                       ("uncertain_area_fraction", "uncertain fraction")):
        xs, ys = series(key)
        if ys:
            ax2.plot(xs, ys, label=label)
    ax2.set_xlabel("epoch")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "curves.png", dpi=110)
    plt.close(fig)

    if mq_rows:
        fig, ax = plt.subplots(figsize=(6, 4))
        for key in ("ppv", "tpr", "csi"):
            xs = [r["epoch"] for r in mq_rows if r[key] is not None]
            ys = [r[key] for r in mq_rows if r[key] is not None]
            if ys:
                ax.plot(xs, ys, marker="o", label=key.upper())
        ax.set_xlabel("joint epoch")
        ax.set_ylabel("certain-region quality")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_dir / "mask_quality.png", dpi=110)
        plt.close(fig)


def _cache_to_arrays(cache):
    return {
        "pseudo": np.stack(cache.pseudo) if cache.pseudo else np.zeros((0,)),
        "certain": np.stack(cache.certain) if cache.certain else np.zeros((0,)),
        "uncertain": np.stack(cache.uncertain) if cache.uncertain else np.zeros((0,)),
        "epoch_stamp": cache.epoch_stamp,
    }


def _cache_from_arrays(blob):
    from .trainer import PseudoLabelCache
    return PseudoLabelCache(
        pseudo=list(blob["pseudo"]), certain=list(blob["certain"]),
        uncertain=list(blob["uncertain"]), epoch_stamp=int(blob["epoch_stamp"]))


def run_training(exp: ExperimentConfig, data_dir, out_dir, resume=False):
    """Train one configuration end to end, writing checkpoints, CSVs, the
    final model, the test metric report, and plots into out_dir."""
    data_dir = Path(data_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(exp, out_dir / "config.ini")
    split = _make_split(exp, data_dir)
    cfg = exp.train

    def hook(epoch, model, teacher, optimizer, cache, stream_state, result):
        tag = out_dir / f"ckpt_epoch_{epoch:04d}"
        save_checkpoint(f"{tag}.crn1", model, teacher)
        torch.save({
            "joint_epoch": epoch,
            "optimizer": optimizer.state_dict(),
            "cache": _cache_to_arrays(cache),
            "stream_state": stream_state,
            "history": result.history,
            "mask_quality_history": result.mask_quality_history,
        }, f"{tag}.resume.pt")

    if resume:
        ckpts = sorted(out_dir.glob("ckpt_epoch_*.crn1"))
        if not ckpts:
            raise FileNotFoundError(f"no checkpoints to resume in {out_dir}")
        latest = ckpts[-1]
        model, teacher = load_checkpoint(latest)
        sidecar = torch.load(str(latest).replace(".crn1", ".resume.pt"),
                             weights_only=False)
        optimizer = make_optimizer(model, cfg)
        optimizer.load_state_dict(sidecar["optimizer"])
        result = TrainResult(model=model, teacher=teacher, cache=None,
                             history=sidecar["history"],
                             mask_quality_history=sidecar["mask_quality_history"])
        result = joint_train(
            model, split, cfg, checkpoint_hook=hook,
            start_epoch=sidecar["joint_epoch"], optimizer=optimizer,
            teacher=teacher, cache=_cache_from_arrays(sidecar["cache"]),
            stream_state=sidecar["stream_state"], result=result)
    else:
        from .model import build_model
        model = build_model(cfg.seed, cfg.channels, cfg.num_classes)
        history = []
        pretrain(model, split.labeled, cfg, history=history)
        result = TrainResult(model=model, teacher=None, cache=None,
                             history=history)
        result = joint_train(model, split, cfg, checkpoint_hook=hook,
                             result=result)

    save_checkpoint(out_dir / "model_final.crn1", result.model, result.teacher)
    _write_epoch_csv(result.history, cfg, out_dir / "epochs.csv")
    _write_mask_quality_csv(result.mask_quality_history,
                            out_dir / "mask_quality.csv")
    report = evaluate(result.model, split.test)
    report.write_csv(out_dir / "report.csv")
    _write_plots(result.history, result.mask_quality_history, cfg, out_dir)
    return result, report


# -- subcommands ---------------------------------------------------------------


def _require_empty(out_dir: Path, force: bool):
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise FileExistsError(
                f"output directory {out_dir} is not empty (use --force)")


def cmd_gen(args):
    exp = _load_exp(args)
    if args.seed is not None:
        exp = replace(exp, data=replace(exp.data, seed=args.seed))
    out_dir = Path(args.out or exp.out)
    _require_empty(out_dir, args.force)
    (out_dir / "train").mkdir(parents=True, exist_ok=True)
    (out_dir / "test").mkdir(parents=True, exist_ok=True)
    items = generate(exp.data)
    train_items, test_items = train_test_split(
        items, exp.split.test_fraction, exp.data.seed)
    save_dataset(out_dir / "train" / "data.crd1", train_items)
    save_dataset(out_dir / "test" / "data.crd1", test_items)
    write_config(exp, out_dir / "config.ini")
    with open(out_dir / "manifest.txt", "w") as fh:
        fh.write(f"total {len(items)}\n")
        fh.write(f"train {len(train_items)} train/data.crd1\n")
        fh.write(f"test {len(test_items)} test/data.crd1\n")
        fh.write(f"image_size {exp.data.image_size[0]}x{exp.data.image_size[1]}\n")
        fh.write(f"kind {exp.data.kind}\n")
        fh.write(f"seed {exp.data.seed}\n")
    print(f"wrote {len(train_items)} train / {len(test_items)} test images "
          f"to {out_dir}")
    return 0


def cmd_train(args):
    exp = _load_exp(args)
    out_dir = Path(args.out or exp.out)
    if not args.resume:
        _require_empty(out_dir, args.force)
    result, report = run_training(exp, Path(args.data), out_dir,
                                  resume=args.resume)
    means, _ = report.aggregate()
    dsc = means["dsc"]
    print(f"final test DSC: {dsc:.4f}" if dsc is not None
          else "final test DSC: undefined")
    return 0


def cmd_eval(args):
    model, _ = load_checkpoint(args.ckpt)
    test_items = load_dataset(Path(args.data) / "test" / "data.crd1")
    report = evaluate(model, test_items)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(out_dir / "report.csv")
    means, stds = report.aggregate()
    for col in ("dsc", "ppv", "tpr", "csi", "jaccard", "hd"):
        m = means[col]
        print(f"{col}: " + (f"{m:.4f}" if m is not None else "undefined"))
    return 0


def _sweep_cells(exp: ExperimentConfig, kind: str):
    cells = []
    if kind == "ablation":
        for variant in exp.variants:
            for seed in exp.seeds:
                cells.append(dict(variant=variant, seed=seed,
                                  ratio=exp.split.labeled_ratio,
                                  alpha=exp.train.alpha,
                                  row=variant, col="dsc"))
    elif kind == "ratio":
        for ratio_text in exp.ratios:
            ratio = parse_ratio(ratio_text)
            for variant in exp.variants:
                for seed in exp.seeds:
                    cells.append(dict(variant=variant, seed=seed, ratio=ratio,
                                      alpha=exp.train.alpha,
                                      row=variant, col=ratio_text))
    elif kind == "alpha":
        for alpha in exp.alphas:
            for seed in exp.seeds:
                cells.append(dict(variant="ours", seed=seed,
                                  ratio=exp.split.labeled_ratio,
                                  alpha=float(alpha),
                                  row=_alpha_label(alpha), col="dsc"))
    else:
        raise ValueError(f"unknown sweep kind {kind!r}")
    return cells


def _alpha_label(alpha: float) -> str:
    # equal costs rely on the two heads' distinct initializations
    text = f"{alpha:g}"
    return f"{text}*" if alpha == 1.0 else text


def _cell_name(cell) -> str:
    a, b = cell["ratio"]
    return (f"{cell['variant']}_r{a}-{b}_a{cell['alpha']:g}_s{cell['seed']}"
            .replace("+", "-"))


def _run_cell(payload):
    config_text, data_dir, cell_dir, cell = payload
    torch.set_num_threads(int(os.environ.get("CRSEG_THREADS", "1")))
    exp = config_from_text(config_text)
    exp = replace(
        exp,
        split=replace(exp.split, labeled_ratio=tuple(cell["ratio"])),
        train=replace(exp.train, variant=cell["variant"], seed=cell["seed"],
                      alpha=cell["alpha"]))
    try:
        _, report = run_training(exp, data_dir, cell_dir)
        means, _ = report.aggregate()
        return {**cell, "error": None,
                "dsc": means["dsc"], "ppv": means["ppv"], "tpr": means["tpr"],
                "hd": means["hd"]}
    except Exception as exc:  # cell failures must not sink the sweep
        return {**cell, "error": f"{type(exc).__name__}: {exc}",
                "dsc": None, "ppv": None, "tpr": None, "hd": None}


def _mean_std_text(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return "FAILED"
    return f"{100 * np.mean(vals):.2f} ({100 * np.std(vals):.2f})"


def cmd_sweep(args):
    exp = _load_exp(args)
    if not exp.seeds:
        raise ValueError("sweep needs a nonempty seeds list")
    out_dir = Path(args.out or exp.out)
    _require_empty(out_dir, args.force)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(exp, out_dir / "config.ini")
    cells = _sweep_cells(exp, args.kind)
    config_text = Path(out_dir / "config.ini").read_text()
    payloads = [(config_text, str(args.data),
                 str(out_dir / "cells" / _cell_name(c)), c) for c in cells]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_run_cell, payloads))
    else:
        results = [_run_cell(p) for p in payloads]

    with open(out_dir / "cells.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("cell", "variant", "ratio", "alpha", "seed",
                         "dsc", "ppv", "tpr", "hd", "error"))
        for cell, res in zip(cells, results):
            a, b = cell["ratio"]
            writer.writerow((
                _cell_name(cell), cell["variant"], f"{a}:{b}",
                f"{cell['alpha']:g}", cell["seed"],
                _cell(res["dsc"]), _cell(res["ppv"]), _cell(res["tpr"]),
                _cell(res["hd"]), res["error"] or ""))

    rows = list(dict.fromkeys(c["row"] for c in cells))
    if args.kind == "ratio":
        cols = list(dict.fromkeys(c["col"] for c in cells))
        table_path = out_dir / "table_ratio.csv"
        with open(table_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant"] + [f"dsc {c}" for c in cols])
            for row in rows:
                line = [row]
                for col in cols:
                    vals = [r["dsc"] for c, r in zip(cells, results)
                            if c["row"] == row and c["col"] == col]
                    line.append(_mean_std_text(vals))
                writer.writerow(line)
    else:
        table_path = out_dir / f"table_{args.kind}.csv"
        with open(table_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            label = "variant" if args.kind == "ablation" else "alpha"
            writer.writerow((label, "dsc", "ppv", "tpr", "hd"))
            for row in rows:
                sel = [r for c, r in zip(cells, results) if c["row"] == row]
                writer.writerow([row] + [
                    _mean_std_text([r[k] for r in sel])
                    for k in ("dsc", "ppv", "tpr", "hd")])
    print(f"sweep table written to {table_path}")
    failures = [r for r in results if r["error"]]
    if failures:
        print(f"{len(failures)} of {len(results)} cells failed "
              f"(see cells.csv)", file=sys.stderr)
    return 0


def _contour(mask: np.ndarray) -> np.ndarray:
    from scipy import ndimage
    m = mask.astype(bool)
    return m ^ ndimage.binary_erosion(m, structure=np.ones((3, 3)))


def overlay_png(image: np.ndarray, uncertain: np.ndarray,
                truth: np.ndarray, path):
    """Grayscale image with the uncertain region tinted red and the ground
    truth boundary drawn in yellow."""
    from PIL import Image
    gray = (np.clip(image, 0, 1) * 255).astype(np.uint8)
    rgb = np.stack([gray, gray, gray], axis=-1).astype(np.float64)
    unc = uncertain.astype(bool)
    rgb[unc] = 0.4 * rgb[unc] + 0.6 * np.array([255.0, 0.0, 0.0])
    border = _contour(truth)
    rgb[border] = [255.0, 220.0, 0.0]
    Image.fromarray(rgb.astype(np.uint8), mode="RGB").save(path)


def cmd_masks(args):
    run_dir = Path(args.run)
    exp = read_config(run_dir / "config.ini")
    split = _make_split(exp, Path(args.data))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = min(args.count, len(split.unlabeled))
    if count == 0:
        raise ValueError("no unlabeled images to visualize")
    ckpts = sorted(run_dir.glob("ckpt_epoch_*.crn1"))
    if not ckpts:
        raise FileNotFoundError(f"no epoch checkpoints in {run_dir}")
    for ckpt in ckpts:
        epoch = int(ckpt.stem.split("_")[-1])
        model, _ = load_checkpoint(ckpt)
        cache = relabel(model, split.unlabeled[:count], epoch)
        for j in range(count):
            base = out_dir / f"epoch{epoch:04d}_img{j:03d}"
            save_mask_png(cache.uncertain[j], f"{base}_uncertain.png")
            overlay_png(split.unlabeled[j], cache.uncertain[j],
                        split.unlabeled_truth[j], f"{base}_overlay.png")
    print(f"wrote overlays for {count} images x {len(ckpts)} checkpoints "
          f"to {out_dir}")
    return 0


# -- argument plumbing ---------------------------------------------------------


def _load_exp(args) -> ExperimentConfig:
    exp = read_config(args.config) if args.config else ExperimentConfig()
    train = exp.train
    split = exp.split
    if getattr(args, "seed", None) is not None:
        train = replace(train, seed=args.seed)
    if getattr(args, "variant", None):
        train = replace(train, variant=args.variant)
    if getattr(args, "alpha", None) is not None:
        train = replace(train, alpha=args.alpha)
    if getattr(args, "ratio", None):
        split = replace(split, labeled_ratio=parse_ratio(args.ratio))
    return replace(exp, train=train, split=split)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crseg",
        description="semi-supervised segmentation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False):
        p.add_argument("--config", type=str, default=None,
                       help="INI experiment config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--variant", type=str, default=None, choices=VARIANTS)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--ratio", type=str, default=None,
                       help="labeled:unlabeled, e.g. 1:4")
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--force", action="store_true")
        if data:
            p.add_argument("--data", type=str, required=True,
                           help="dataset directory from `crseg gen`")

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p_gen)
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train one configuration")
    common(p_train, data=True)
    p_train.add_argument("--resume", action="store_true",
                         help="continue from the latest checkpoint in --out")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test set")
    p_eval.add_argument("--ckpt", type=str, required=True)
    p_eval.add_argument("--data", type=str, required=True)
    p_eval.add_argument("--out", type=str, required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="run a seeded experiment matrix")
    common(p_sweep, data=True)
    p_sweep.add_argument("--kind", type=str, required=True,
                         choices=("ablation", "ratio", "alpha"))
    p_sweep.add_argument("--workers", type=int, default=1,
                         help="parallel cell processes")
    p_sweep.set_defaults(func=cmd_sweep)

    p_masks = sub.add_parser("masks",
                             help="uncertain-region overlays per checkpoint")
    p_masks.add_argument("--run", type=str, required=True,
                         help="training output directory")
    p_masks.add_argument("--data", type=str, required=True)
    p_masks.add_argument("--out", type=str, required=True)
    p_masks.add_argument("--count", type=int, default=8,
                         help="number of unlabeled images to render")
    p_masks.set_defaults(func=cmd_masks)
    return parser


def main(argv=None) -> int:
    torch.set_num_threads(int(os.environ.get("CRSEG_THREADS", "1")))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
