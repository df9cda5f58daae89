"""Command line: match, refine, evaluate, curve.

Every command exits 0 only when all items succeeded. Per-item failures are
logged and reported, and the remaining items still run.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .bilateral import BilateralParams
from .core import DEFAULT_CATALOG, ClassCatalog, GuidedSegError, InvalidMask
from .dataset import (
    ManifestRecord,
    gps_nearest_correspondence,
    load_depth,
    load_image,
    load_labels,
    load_mask,
    load_soft_map,
    parse_manifest,
    read_correspondences,
    save_labels,
    save_soft_map,
    write_correspondences,
)
from .fusion import FusionParams
from .geometry import read_match_file
from .refine import BILATERAL_IMPLS, MODES, RefineConfig, refine_prediction
from .uiou import (
    FIELDS,
    TallyTable,
    check_theta,
    curve_from_tallies,
    default_thetas,
    image_tallies,
    merge_tallies,
    uiou_score,
)

log = logging.getLogger("guidedseg")

WORKERS_ENV = "GUIDEDSEG_WORKERS"


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def catalog_for(num_classes: int) -> ClassCatalog:
    if num_classes == DEFAULT_CATALOG.num_classes:
        return DEFAULT_CATALOG
    return ClassCatalog.generic(num_classes)


@dataclass
class ItemResult:
    ok: bool
    value: object = None
    error: str = ""


def run_items(fn: Callable, items: Sequence, workers: int) -> list[ItemResult]:
    """Apply ``fn`` to every item; results come back in input order."""
    def guarded(item):
        try:
            return ItemResult(True, fn(item))
        except (GuidedSegError, OSError, ValueError) as e:
            return ItemResult(False, error=f"{type(e).__name__}: {e}")

    if workers <= 1 or len(items) <= 1:
        return [guarded(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(guarded, items))


def fmt(v: float) -> str:
    return "nan" if not np.isfinite(v) else f"{v:.9g}"


# match

def cmd_match(args) -> int:
    dark = parse_manifest(args.dark)
    day = parse_manifest(args.day)
    rows = gps_nearest_correspondence(dark, day)
    write_correspondences(args.out, rows)
    log.info("wrote %d correspondences to %s", len(rows), args.out)
    return 0


# refine

def refine_config(args) -> RefineConfig:
    return RefineConfig(
        alignment_mode=args.mode,
        min_inliers=args.min_inliers,
        bilateral=BilateralParams(args.sigma_s, args.sigma_r),
        fusion=FusionParams(args.alpha_low, args.alpha_high, args.eta),
        seed=args.seed,
        ransac_iterations=args.ransac_iterations,
        inlier_threshold=args.inlier_threshold,
        bilateral_impl=args.bilateral_impl,
        catalog=catalog_for(args.num_classes),
    )


def refine_pair(dark: ManifestRecord, day: ManifestRecord, config: RefineConfig, out_dir: Path):
    cat = config.catalog
    s_dark = load_soft_map(dark.require("soft_map"), cat)
    s_day = load_soft_map(day.require("soft_map"), cat)
    img_dark = load_image(dark.require("image"))
    img_day = load_image(day.image) if day.image is not None and day.image.exists() else None
    depth = load_depth(day.require("depth")) if day.depth is not None else None
    cams = (day.camera, dark.camera) if day.camera is not None and dark.camera is not None else None
    matches = read_match_file(dark.require("matches")) if dark.matches is not None else None
    res = refine_prediction(s_dark, img_dark, s_day, img_day, depth, cams, config, matches=matches)
    save_soft_map(out_dir / f"{dark.id}_refined.spm", res.fused)
    save_labels(out_dir / f"{dark.id}_labels.png", res.labels)
    return res.report


def cmd_refine(args) -> int:
    config = refine_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dark = {r.id: r for r in parse_manifest(args.dark)}
    day = {r.id: r for r in parse_manifest(args.day)}
    pairs = read_correspondences(args.correspondences)

    def work(row):
        if row.dark_id not in dark:
            raise ValueError(f"dark id {row.dark_id!r} not in manifest")
        if row.day_id not in day:
            raise ValueError(f"day id {row.day_id!r} not in manifest")
        return refine_pair(dark[row.dark_id], day[row.day_id], config, out_dir)

    results = run_items(work, pairs, args.workers)
    failures = 0
    with open(out_dir / "report.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["dark_id", "day_id", "status", "mode", "inlier_count", "note"])
        for row, r in zip(pairs, results):
            if r.ok:
                rep = r.value
                cnt = "" if rep.inlier_count is None else rep.inlier_count
                w.writerow([row.dark_id, row.day_id, "ok", rep.mode, cnt, rep.note])
            else:
                failures += 1
                log.error("pair %s/%s failed: %s", row.dark_id, row.day_id, r.error)
                w.writerow([row.dark_id, row.day_id, "failed", "", "", r.error])
    log.info("refined %d of %d pairs", len(pairs) - failures, len(pairs))
    return 1 if failures else 0


# evaluate and curve

def _eval_items(args):
    preds = parse_manifest(args.pred)
    gts = {r.id: r for r in parse_manifest(args.gt)}
    items = []
    for p in preds:
        if p.id not in gts:
            raise GuidedSegError(f"prediction {p.id!r} has no ground truth record")
        items.append((p, gts[p.id]))
    return items


def _load_eval_pair(pred: ManifestRecord, gt: ManifestRecord, catalog: ClassCatalog):
    if pred.soft_map is not None:
        s = load_soft_map(pred.require("soft_map"), catalog)
    else:
        s = load_labels(pred.require("label"))
    g = load_labels(gt.require("label"))
    j = load_mask(gt.require("invalid")) if gt.invalid is not None else InvalidMask(
        np.zeros(g.shape, dtype=bool))
    return s, g, j


def _corpus_tallies(args, catalog, thetas):
    items = _eval_items(args)

    def work(item):
        s, g, j = _load_eval_pair(*item, catalog)
        return image_tallies(s, g, j, thetas, catalog)

    results = run_items(work, items, args.workers)
    failures = [(it[0].id, r.error) for it, r in zip(items, results) if not r.ok]
    for rid, err in failures:
        log.error("item %s failed: %s", rid, err)
    per_theta = [merge_tallies((r.value[k] for r in results if r.ok), catalog.num_classes)
                 for k in range(len(thetas))]
    return per_theta, len(failures)


def write_score_table(path, catalog: ClassCatalog, t: TallyTable, theta: float) -> float:
    per, mean = uiou_score(t)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["class", "uiou", *FIELDS])
        for k, name in enumerate(catalog.names):
            w.writerow([name, fmt(per[k]), *(int(getattr(t, fld)[k]) for fld in FIELDS)])
        w.writerow(["mean", fmt(mean), "", "", "", "", ""])
        w.writerow(["theta", fmt(theta), "", "", "", "", ""])
    return mean


def cmd_evaluate(args) -> int:
    catalog = catalog_for(args.num_classes)
    theta = 1.0 / catalog.num_classes if args.theta is None else args.theta
    check_theta(theta, catalog.num_classes)
    (t,), failures = _corpus_tallies(args, catalog, [theta])
    mean = write_score_table(args.out, catalog, t, theta)
    print(f"mean UIoU at theta={fmt(theta)}: {fmt(mean)}")
    return 1 if failures else 0


def write_curve(path, catalog: ClassCatalog, curve) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["theta", "mean_uiou", *catalog.names])
        for th, m, per in curve:
            w.writerow([fmt(th), fmt(m), *(fmt(v) for v in per)])


def cmd_curve(args) -> int:
    catalog = catalog_for(args.num_classes)
    thetas = default_thetas(catalog.num_classes, args.grid_size)
    per_theta, failures = _corpus_tallies(args, catalog, thetas)
    curve = curve_from_tallies(thetas, per_theta)
    write_curve(args.out, catalog, curve)
    if np.all(np.isnan(curve.mean)):
        print("no class present; curve is undefined")
    else:
        k = int(np.nanargmax(curve.mean))
        print(f"max mean UIoU {fmt(curve.mean[k])} at theta={fmt(curve.thetas[k])}")
    return 1 if failures else 0


# argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="guidedseg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--workers", type=int, default=default_workers(),
                        help=f"parallel items (default: ${WORKERS_ENV} or CPU count)")
        sp.add_argument("--num-classes", type=int, default=DEFAULT_CATALOG.num_classes,
                        help="19 uses the Cityscapes catalog; other values a generic one")

    sp = sub.add_parser("match", help="GPS nearest day frame for every dark frame")
    sp.add_argument("--dark", required=True)
    sp.add_argument("--day", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_match)

    sp = sub.add_parser("refine", help="refined soft maps and pseudo-labels per pair")
    sp.add_argument("--correspondences", required=True)
    sp.add_argument("--dark", required=True)
    sp.add_argument("--day", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--mode", choices=MODES, default="warp_with_fallback")
    sp.add_argument("--sigma-s", type=float, default=80.0)
    sp.add_argument("--sigma-r", type=float, default=10.0)
    sp.add_argument("--alpha-low", type=float, default=0.3)
    sp.add_argument("--alpha-high", type=float, default=0.6)
    sp.add_argument("--eta", type=float, default=0.2)
    sp.add_argument("--min-inliers", type=int, default=14)
    sp.add_argument("--ransac-iterations", type=int, default=1000)
    sp.add_argument("--inlier-threshold", type=float, default=2.0)
    sp.add_argument("--bilateral-impl", choices=BILATERAL_IMPLS, default="auto")
    sp.add_argument("--seed", type=int, default=0)
    common(sp)
    sp.set_defaults(func=cmd_refine)

    sp = sub.add_parser("evaluate", help="per-class and mean UIoU at one threshold")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--theta", type=float, default=None, help="default 1/C (plain IoU)")
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("curve", help="mean and per-class UIoU over a threshold grid")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--grid-size", type=int, default=101)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_curve)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (GuidedSegError, OSError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
