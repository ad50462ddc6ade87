import csv
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from crseg.checkpoint import load_checkpoint
from crseg.cli import (ExperimentConfig, config_from_text, config_to_text,
                       main, parse_ratio, read_config, write_config)
from crseg.data import SplitConfig, SyntheticConfig, load_dataset
from crseg.trainer import TrainConfig
from crseg.uncertainty import load_mask_png


def fast_exp(seed=0, **train_kw):
    data = SyntheticConfig(image_size=(24, 24), n_images=12, kind="ellipse",
                           contrast=0.5, noise_sigma=0.05,
                           area_range=(0.05, 0.3), seed=7)
    train = dict(alpha=5.0, beta=0.9, batch_size=4, pretrain_epochs=1,
                 joint_epochs=2, relabel_interval=2, seed=seed,
                 variant="ours", channels=(4, 8, 8, 8), augment=False)
    train.update(train_kw)
    return ExperimentConfig(data=data, split=SplitConfig(),
                            train=TrainConfig(**train),
                            seeds=(0,), ratios=("1:1",), alphas=(1.0, 5.0),
                            variants=("seg", "ours"))


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    cfg_path = out / "gen.ini"
    write_config(fast_exp(), cfg_path)
    rc = main(["gen", "--config", str(cfg_path), "--out", str(out / "ds")])
    assert rc == 0
    return out / "ds"


class TestConfigFile:
    def test_roundtrip_through_file(self, tmp_path):
        exp = fast_exp(seed=3)
        path = tmp_path / "exp.ini"
        write_config(exp, path)
        again = read_config(path)
        assert again == exp

    def test_roundtrip_through_text(self):
        exp = fast_exp()
        assert config_from_text(config_to_text(exp)) == exp

    def test_missing_keys_fall_back_to_defaults(self, tmp_path):
        path = tmp_path / "partial.ini"
        path.write_text("[train]\nvariant = seg+mt\n")
        exp = read_config(path)
        assert exp.train.variant == "seg+mt"
        assert exp.train.alpha == TrainConfig().alpha
        assert exp.data.n_images == SyntheticConfig().n_images

    def test_parse_ratio(self):
        assert parse_ratio("1:4") == (1, 4)
        with pytest.raises(ValueError):
            parse_ratio("1-4")


class TestGen:
    def test_deterministic_regeneration(self, dataset_dir, tmp_path):
        cfg_path = tmp_path / "gen.ini"
        write_config(fast_exp(), cfg_path)
        rc = main(["gen", "--config", str(cfg_path),
                   "--out", str(tmp_path / "again")])
        assert rc == 0
        a = (dataset_dir / "train" / "data.crd1").read_bytes()
        b = (tmp_path / "again" / "train" / "data.crd1").read_bytes()
        assert a == b

    def test_manifest_counts_match_files(self, dataset_dir):
        manifest = (dataset_dir / "manifest.txt").read_text().splitlines()
        counts = {line.split()[0]: int(line.split()[1])
                  for line in manifest if line.split()[0] in ("train", "test")}
        assert counts["train"] == len(load_dataset(dataset_dir / "train" / "data.crd1"))
        assert counts["test"] == len(load_dataset(dataset_dir / "test" / "data.crd1"))

    def test_refuses_overwrite_without_force(self, dataset_dir, tmp_path, capsys):
        cfg_path = tmp_path / "gen.ini"
        write_config(fast_exp(), cfg_path)
        rc = main(["gen", "--config", str(cfg_path),
                   "--out", str(dataset_dir)])
        assert rc != 0
        assert "ERROR:" in capsys.readouterr().err
        rc = main(["gen", "--config", str(cfg_path),
                   "--out", str(dataset_dir), "--force"])
        assert rc == 0


class TestTrain:
    def run(self, tmp_path, dataset_dir, name="run", **kw):
        cfg_path = tmp_path / f"{name}.ini"
        write_config(fast_exp(**kw), cfg_path)
        out = tmp_path / name
        rc = main(["train", "--config", str(cfg_path),
                   "--data", str(dataset_dir), "--out", str(out)])
        assert rc == 0
        return out

    def test_outputs_exist(self, tmp_path, dataset_dir):
        out = self.run(tmp_path, dataset_dir)
        assert (out / "model_final.crn1").exists()
        assert (out / "config.ini").exists()
        assert (out / "report.csv").exists()
        assert (out / "curves.png").exists()
        assert list(out.glob("ckpt_epoch_*.crn1"))

    def test_epoch_csv_columns(self, tmp_path, dataset_dir):
        out = self.run(tmp_path, dataset_dir, name="csvrun")
        with open(out / "epochs.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "L_crm", "L_c-sn", "L_cnt",
                           "uncertain_area_fraction", "val_dsc"]
        # pretrain rows leave the unlabeled columns empty
        assert rows[1][2] == "" and rows[1][3] == ""
        # joint rows carry the uncertain-area fraction
        assert rows[-1][4] != ""
        epochs = [int(r[0]) for r in rows[1:]]
        assert epochs == sorted(epochs)

    def test_report_aggregate_matches_rows(self, tmp_path, dataset_dir):
        out = self.run(tmp_path, dataset_dir, name="aggrun")
        with open(out / "report.csv") as fh:
            rows = list(csv.reader(fh))
        per_image = [float(r[1]) for r in rows[1:-2] if r[1] != ""]
        mean_row = rows[-2]
        assert mean_row[0] == "mean"
        assert float(mean_row[1]) == pytest.approx(np.mean(per_image), rel=1e-6)

    def test_variant_seg_with_no_unlabeled(self, tmp_path, dataset_dir):
        out = self.run(tmp_path, dataset_dir, name="segrun", variant="seg")
        with open(out / "epochs.csv") as fh:
            rows = list(csv.reader(fh))
        assert all(r[2] == "" for r in rows[1:])

    def test_resume_reproduces_straight_run(self, tmp_path, dataset_dir):
        straight = self.run(tmp_path, dataset_dir, name="straight",
                            joint_epochs=4, relabel_interval=2)
        # interrupted run: stop after epoch 2's checkpoint, then resume
        cfg_path = tmp_path / "interrupted.ini"
        write_config(fast_exp(joint_epochs=2, relabel_interval=2), cfg_path)
        out = tmp_path / "interrupted"
        rc = main(["train", "--config", str(cfg_path),
                   "--data", str(dataset_dir), "--out", str(out)])
        assert rc == 0
        cfg_path2 = tmp_path / "resumed.ini"
        write_config(fast_exp(joint_epochs=4, relabel_interval=2), cfg_path2)
        rc = main(["train", "--config", str(cfg_path2),
                   "--data", str(dataset_dir), "--out", str(out), "--resume"])
        assert rc == 0
        m_straight, _ = load_checkpoint(straight / "model_final.crn1")
        m_resumed, _ = load_checkpoint(out / "model_final.crn1")
        sa, sb = m_straight.state_dict(), m_resumed.state_dict()
        assert all(bool((sa[k] == sb[k]).all()) for k in sa)
        assert (straight / "epochs.csv").read_text() == \
            (out / "epochs.csv").read_text()


class TestEval:
    def test_eval_writes_report(self, tmp_path, dataset_dir):
        cfg_path = tmp_path / "t.ini"
        write_config(fast_exp(), cfg_path)
        out = tmp_path / "t"
        main(["train", "--config", str(cfg_path), "--data", str(dataset_dir),
              "--out", str(out)])
        rc = main(["eval", "--ckpt", str(out / "model_final.crn1"),
                   "--data", str(dataset_dir), "--out", str(tmp_path / "ev")])
        assert rc == 0
        with open(tmp_path / "ev" / "report.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "image_id"
        n_test = len(load_dataset(dataset_dir / "test" / "data.crd1"))
        assert len(rows) == 1 + n_test + 2

    def test_eval_missing_checkpoint_fails_cleanly(self, dataset_dir,
                                                   tmp_path, capsys):
        rc = main(["eval", "--ckpt", str(tmp_path / "nope.crn1"),
                   "--data", str(dataset_dir), "--out", str(tmp_path / "ev")])
        assert rc != 0
        assert "ERROR:" in capsys.readouterr().err


class TestSweep:
    def test_ablation_sweep_table(self, tmp_path, dataset_dir):
        cfg_path = tmp_path / "sweep.ini"
        write_config(fast_exp(), cfg_path)
        out = tmp_path / "sweep"
        rc = main(["sweep", "--config", str(cfg_path), "--data",
                   str(dataset_dir), "--out", str(out), "--kind", "ablation"])
        assert rc == 0
        with open(out / "table_ablation.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["variant", "dsc", "ppv", "tpr", "hd"]
        assert [r[0] for r in rows[1:]] == ["seg", "ours"]
        with open(out / "cells.csv") as fh:
            cells = list(csv.reader(fh))
        assert len(cells) == 1 + 2  # two variants x one seed
        # each cell is independently reproducible: config snapshot exists
        assert all((out / "cells").glob("*/config.ini"))

    def test_alpha_sweep_star_label(self, tmp_path, dataset_dir):
        cfg_path = tmp_path / "alpha.ini"
        write_config(fast_exp(), cfg_path)
        out = tmp_path / "alpha"
        rc = main(["sweep", "--config", str(cfg_path), "--data",
                   str(dataset_dir), "--out", str(out), "--kind", "alpha"])
        assert rc == 0
        with open(out / "table_alpha.csv") as fh:
            rows = list(csv.reader(fh))
        assert [r[0] for r in rows[1:]] == ["1*", "5"]

    def test_failed_cell_recorded_sweep_continues(self, tmp_path, dataset_dir,
                                                  capsys):
        exp = fast_exp()
        exp = replace(exp, ratios=("1:1", "1:9999"), variants=("seg",))
        cfg_path = tmp_path / "bad.ini"
        write_config(exp, cfg_path)
        out = tmp_path / "badsweep"
        rc = main(["sweep", "--config", str(cfg_path), "--data",
                   str(dataset_dir), "--out", str(out), "--kind", "ratio"])
        assert rc == 0
        with open(out / "cells.csv") as fh:
            rows = list(csv.reader(fh))
        errors = [r[-1] for r in rows[1:]]
        assert any(errors) and not all(errors)
        with open(out / "table_ratio.csv") as fh:
            table = list(csv.reader(fh))
        assert "FAILED" in table[1][2]


class TestMasks:
    def test_overlays_written_and_aligned(self, tmp_path, dataset_dir):
        cfg_path = tmp_path / "m.ini"
        write_config(fast_exp(), cfg_path)
        run_dir = tmp_path / "mrun"
        main(["train", "--config", str(cfg_path), "--data", str(dataset_dir),
              "--out", str(run_dir)])
        out = tmp_path / "masks"
        rc = main(["masks", "--run", str(run_dir), "--data", str(dataset_dir),
                   "--out", str(out), "--count", "2"])
        assert rc == 0
        uncertain = sorted(out.glob("*_uncertain.png"))
        overlays = sorted(out.glob("*_overlay.png"))
        assert len(uncertain) == len(overlays) > 0
        # raw mask pixels align with the red tint in the overlay
        from PIL import Image
        mask = load_mask_png(uncertain[0])
        rgb = np.asarray(Image.open(overlays[0]).convert("RGB")).astype(int)
        redness = (rgb[:, :, 0] - rgb[:, :, 1]) > 60
        yellow = (rgb[:, :, 0] > 200) & (rgb[:, :, 1] > 150) & (rgb[:, :, 2] < 90)
        assert np.array_equal(mask.astype(bool) & ~yellow, redness & ~yellow)

    def test_epoch_series_ordered(self, tmp_path, dataset_dir):
        cfg_path = tmp_path / "m2.ini"
        write_config(fast_exp(joint_epochs=4, relabel_interval=2), cfg_path)
        run_dir = tmp_path / "mrun2"
        main(["train", "--config", str(cfg_path), "--data", str(dataset_dir),
              "--out", str(run_dir)])
        out = tmp_path / "masks2"
        rc = main(["masks", "--run", str(run_dir), "--data", str(dataset_dir),
                   "--out", str(out), "--count", "1"])
        assert rc == 0
        stems = sorted(p.stem for p in out.glob("*_uncertain.png"))
        epochs = [int(s.split("_")[0].replace("epoch", "")) for s in stems]
        assert epochs == sorted(epochs) and len(set(epochs)) >= 2


def test_unknown_command_exits_nonzero(capsys):
    with pytest.raises(SystemExit):
        main(["frobnicate"])
