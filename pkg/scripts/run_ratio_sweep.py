#!/usr/bin/env python3
"""Labeled:unlabeled ratio sweep on the synthetic benchmark.

Trains `seg` and `ours` at 1:4, 1:2, and 1:1 over several seeds and prints
the mean (std) DSC grid, the desk-scale analog of the ratio comparison.

Usage:
    python scripts/run_ratio_sweep.py [--seeds 0 1 2] [--workers 2]
"""

import argparse
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from crseg.benchmark import benchmark_train_config, run_matrix

RATIOS = ((1, 4), (1, 2), (1, 1))
VARIANTS = ("seg", "ours")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--workers", type=int,
                        default=min(4, os.cpu_count() or 1))
    parser.add_argument("--pretrain-epochs", type=int, default=12)
    parser.add_argument("--joint-epochs", type=int, default=10)
    args = parser.parse_args()

    base = benchmark_train_config(seed=0, pretrain_epochs=args.pretrain_epochs,
                                  joint_epochs=args.joint_epochs,
                                  relabel_interval=5)
    cells = [(seed, ratio, VARIANTS)
             for ratio in RATIOS for seed in args.seeds]
    t0 = time.time()
    results = run_matrix(cells, base, workers=args.workers)
    print(f"\n{len(results)} cells in {time.time() - t0:.0f}s\n")

    header = "variant     " + "".join(f"{a}:{b}".ljust(16) for a, b in RATIOS)
    print(header)
    for variant in VARIANTS:
        line = f"{variant:<12}"
        for ratio in RATIOS:
            vals = [c["dsc"][variant] for c in results if c["ratio"] == ratio]
            line += f"{100 * np.mean(vals):6.2f} ({100 * np.std(vals):4.2f})  "
        print(line)


if __name__ == "__main__":
    main()
