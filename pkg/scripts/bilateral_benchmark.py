"""Accuracy and speed of the grid cross bilateral filter against direct evaluation."""

import argparse
import time

import numpy as np

from guidedseg.bilateral import (
    BilateralParams,
    cross_bilateral_align,
    cross_bilateral_align_grid,
    srgb_to_lab,
)
from guidedseg.synthetic import piecewise_scene, random_distribution_map


def accuracy(n, size, channels, sigma_s, seed):
    rng = np.random.default_rng(seed)
    p = BilateralParams(sigma_s=sigma_s)
    errs = []
    for _ in range(n):
        img, _, _ = piecewise_scene(rng, size, size, channels)
        s = random_distribution_map(rng, size, size, channels)
        lab = srgb_to_lab(img)
        errs.append(np.abs(cross_bilateral_align(s, lab, p).values
                           - cross_bilateral_align_grid(s, lab, p).values).max())
    return np.array(errs)


def speed(h, w, channels, sigma_s, sample_rows, seed):
    rng = np.random.default_rng(seed)
    img, s, _ = piecewise_scene(rng, h, w, channels)
    lab = srgb_to_lab(img)
    p = BilateralParams(sigma_s=sigma_s)
    cross_bilateral_align_grid(s, lab, p)  # compile and warm caches
    t0 = time.perf_counter()
    cross_bilateral_align_grid(s, lab, p)
    t_grid = time.perf_counter() - t0
    rows = np.linspace(0, h - 1, sample_rows).round().astype(int)
    cross_bilateral_align(s, lab, p, rows=rows[:1])
    t0 = time.perf_counter()
    cross_bilateral_align(s, lab, p, rows=rows)
    t_naive = (time.perf_counter() - t0) * h / len(rows)
    return t_grid, t_naive


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--sigma-s", type=float, default=8.0)
    ap.add_argument("--speed-shape", type=int, nargs=2, default=(512, 512), metavar=("H", "W"))
    ap.add_argument("--speed-sigma-s", type=float, default=80.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    errs = accuracy(args.trials, args.size, 4, args.sigma_s, args.seed)
    print(f"{args.trials} {args.size}x{args.size} scenes, sigma_s={args.sigma_s}: "
          f"max error {errs.max():.4f}, p99 {np.percentile(errs, 99):.4f}")
    h, w = args.speed_shape
    t_grid, t_naive = speed(h, w, 19, args.speed_sigma_s, 16, args.seed)
    print(f"{h}x{w} C=19 sigma_s={args.speed_sigma_s}: grid {t_grid:.2f} s, "
          f"naive ~{t_naive:.1f} s (from 16 rows), speedup {t_naive / t_grid:.1f}x")


if __name__ == "__main__":
    main()
