import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crseg.metrics import (MetricReport, confusion_counts, csi, dice,
                           hausdorff, jaccard, ppv, tpr)

masks = arrays(np.uint8, (8, 8), elements=st.integers(0, 1))


def oracle_counts(pred, truth, fg=1):
    """Naive double-loop confusion counting."""
    tp = fp = fn = tn = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            p = pred[i, j] == fg
            t = truth[i, j] == fg
            if p and t:
                tp += 1
            elif p and not t:
                fp += 1
            elif not p and t:
                fn += 1
            else:
                tn += 1
    return tp, fp, fn, tn


def oracle_hausdorff(a, b):
    """Brute-force max-min pairwise Euclidean distance."""
    pa = [(i, j) for i in range(a.shape[0]) for j in range(a.shape[1]) if a[i, j]]
    pb = [(i, j) for i in range(b.shape[0]) for j in range(b.shape[1]) if b[i, j]]
    if not pa or not pb:
        return None

    def directed(src, dst):
        return max(min(math.dist(s, d) for d in dst) for s in src)

    return max(directed(pa, pb), directed(pb, pa))


class TestConfusionCounts:
    def test_identical_masks(self):
        truth = np.zeros((5, 5), dtype=int)
        truth[1:3, 0:5] = 1
        assert truth.sum() == 10
        assert confusion_counts(truth, truth) == (10, 0, 0, 15)

    def test_disjoint_foregrounds(self):
        pred = np.zeros((4, 4), dtype=int)
        truth = np.zeros((4, 4), dtype=int)
        pred[0, :3] = 1
        truth[3, :2] = 1
        tp, fp, fn, tn = confusion_counts(pred, truth)
        assert (tp, fp, fn) == (0, 3, 2)
        assert tn == 16 - 5

    def test_all_background(self):
        z = np.zeros((3, 3), dtype=int)
        assert confusion_counts(z, z) == (0, 0, 0, 9)

    @given(pred=masks, truth=masks)
    @settings(max_examples=200, deadline=None)
    def test_matches_double_loop_oracle(self, pred, truth):
        assert confusion_counts(pred, truth) == oracle_counts(pred, truth)


class TestRatios:
    def test_worked_example(self):
        counts = (3, 1, 2, 10)
        assert ppv(counts) == pytest.approx(0.75)
        assert tpr(counts) == pytest.approx(0.6)
        assert csi(counts) == pytest.approx(0.5)
        assert dice(counts) == pytest.approx(2 / 3)
        assert jaccard(counts) == pytest.approx(0.5)

    def test_perfect(self):
        counts = (7, 0, 0, 2)
        for fn in (ppv, tpr, csi, dice, jaccard):
            assert fn(counts) == 1.0

    def test_empty_prediction_nonempty_truth(self):
        counts = (0, 0, 4, 12)
        assert dice(counts) == 0.0
        assert ppv(counts) is None
        assert tpr(counts) == 0.0
        assert csi(counts) == 0.0

    def test_undefined_is_none_not_zero(self):
        counts = (0, 0, 0, 9)
        for fn in (ppv, tpr, csi, dice, jaccard):
            assert fn(counts) is None

    @given(pred=masks, truth=masks)
    @settings(max_examples=100, deadline=None)
    def test_bounds_and_jaccard_equals_csi(self, pred, truth):
        counts = confusion_counts(pred, truth)
        for fn in (ppv, tpr, csi, dice, jaccard):
            v = fn(counts)
            assert v is None or 0.0 <= v <= 1.0
        assert jaccard(counts) == csi(counts)
        d, c = dice(counts), csi(counts)
        if d is not None and c is not None:
            # dice = 2j/(1+j) for jaccard j
            assert d == pytest.approx(2 * c / (1 + c))


class TestHausdorff:
    def test_identical_sets_zero(self):
        m = np.zeros((6, 6), dtype=int)
        m[2:4, 2:4] = 1
        assert hausdorff(m, m) == 0.0

    def test_single_pixel_pair(self):
        a = np.zeros((6, 6), dtype=int)
        b = np.zeros((6, 6), dtype=int)
        a[0, 0] = 1
        b[3, 4] = 1
        assert hausdorff(a, b) == pytest.approx(5.0)

    def test_subset_uses_reverse_direction(self):
        # A strictly inside B: directed(A->B)=0, HD = directed(B->A)
        a = np.zeros((8, 8), dtype=int)
        b = np.zeros((8, 8), dtype=int)
        a[3, 3] = 1
        b[3, 3] = b[3, 4] = b[3, 5] = b[0, 3] = b[7, 3] = 1
        expected = oracle_hausdorff(a, b)
        assert expected == pytest.approx(4.0)  # (7,3) is farthest from (3,3)
        assert hausdorff(a, b) == pytest.approx(expected)

    def test_empty_set_undefined(self):
        a = np.zeros((4, 4), dtype=int)
        b = np.ones((4, 4), dtype=int)
        assert hausdorff(a, b) is None
        assert hausdorff(b, a) is None
        assert hausdorff(a, a) is None

    @given(a=masks, b=masks)
    @settings(max_examples=100, deadline=None)
    def test_matches_bruteforce_and_symmetry(self, a, b):
        got = hausdorff(a, b)
        want = oracle_hausdorff(a, b)
        if want is None:
            assert got is None
        else:
            assert got == pytest.approx(want, abs=1e-9)
            assert hausdorff(b, a) == pytest.approx(got, abs=1e-9)
            diag = math.dist((0, 0), (7, 7))
            assert got <= diag


class TestMetricReport:
    def build(self, rng, n=4):
        report = MetricReport()
        for i in range(n):
            pred = rng.integers(0, 2, size=(8, 8))
            truth = rng.integers(0, 2, size=(8, 8))
            report.add(f"img{i}", pred, truth)
        return report

    def test_aggregate_mean_matches_rows(self, rng):
        report = self.build(rng)
        means, stds = report.aggregate()
        manual = np.mean([m.dsc for m in report.per_image])
        assert means["dsc"] == pytest.approx(manual)
        assert stds["dsc"] >= 0

    def test_csv_columns_and_rows(self, rng, tmp_path):
        report = self.build(rng, n=3)
        path = tmp_path / "report.csv"
        report.write_csv(path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["image_id", "dsc", "ppv", "tpr", "csi",
                           "jaccard", "hd"]
        assert len(rows) == 1 + 3 + 2
        assert rows[-2][0] == "mean" and rows[-1][0] == "std"
        mean_dsc = float(rows[-2][1])
        per_image = [float(r[1]) for r in rows[1:4]]
        assert mean_dsc == pytest.approx(np.mean(per_image), rel=1e-6)

    def test_undefined_written_as_empty_cell(self, tmp_path):
        report = MetricReport()
        report.add("empty", np.zeros((4, 4), dtype=int),
                   np.zeros((4, 4), dtype=int))
        path = tmp_path / "report.csv"
        report.write_csv(path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[1][1] == ""  # dsc undefined for both-empty masks
        assert rows[1][6] == ""  # hd undefined too
