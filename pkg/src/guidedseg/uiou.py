"""Uncertainty-aware IoU.

A soft prediction is turned into a hard one with an "invalid" label wherever
its confidence falls below a threshold. Against ground truth that carries a
per-pixel invalid mask J, every pixel of class c then lands in one of five
sets: true positive, false positive, false negative, true invalid (predicted
invalid where J=1) or false invalid (predicted invalid where J=0).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import (
    DEFAULT_CATALOG,
    ClassCatalog,
    GuidedSegError,
    HardLabelMap,
    InvalidInput,
    InvalidMask,
    SoftPredictionMap,
    check_same_shape,
)

_THETA_SLACK = 1e-12
FIELDS = ("tp", "fp", "fn", "ti", "fi")


class ThetaOutOfRange(GuidedSegError):
    pass


def check_theta(theta: float, num_classes: int) -> None:
    if not (1.0 / num_classes - _THETA_SLACK <= theta <= 1.0 + _THETA_SLACK):
        raise ThetaOutOfRange(f"theta={theta!r} outside [1/{num_classes}, 1]")


def _threshold(labels: np.ndarray, conf: np.ndarray, theta: float, num_classes: int,
               invalid_code: int) -> np.ndarray:
    # at theta = 1/C nothing is invalidated, even where rounding puts the
    # top probability of a flat distribution a hair below 1/C
    if theta <= 1.0 / num_classes:
        return labels
    return np.where(conf >= theta, labels, invalid_code)


def threshold_to_hard(s: SoftPredictionMap, theta: float,
                      catalog: ClassCatalog = DEFAULT_CATALOG) -> HardLabelMap:
    """Argmax label where its probability is at least ``theta``, invalid elsewhere."""
    check_theta(theta, s.channels)
    labels = np.argmax(s.values, axis=2)
    conf = np.take_along_axis(s.values, labels[..., None], axis=2)[..., 0]
    return HardLabelMap(_threshold(labels, conf, theta, s.channels, catalog.invalid_code))


@dataclass(frozen=True, eq=False)
class TallyTable:
    """Per-class pixel counts of the five sets; tables add componentwise."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    ti: np.ndarray
    fi: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(getattr(self, f), dtype=np.int64) for f in FIELDS]
        if len({a.shape for a in arrs}) != 1 or arrs[0].ndim != 1:
            raise InvalidInput("tally fields must be equal-length 1-D arrays")
        if any(np.any(a < 0) for a in arrs):
            raise InvalidInput("tally counts must be nonnegative")
        for f, a in zip(FIELDS, arrs):
            object.__setattr__(self, f, a)

    @classmethod
    def zeros(cls, num_classes: int) -> TallyTable:
        return cls(*(np.zeros(num_classes, dtype=np.int64) for _ in FIELDS))

    @property
    def num_classes(self) -> int:
        return len(self.tp)

    def __add__(self, other: TallyTable) -> TallyTable:
        if other.num_classes != self.num_classes:
            raise InvalidInput("cannot merge tallies over different class counts")
        return TallyTable(*(getattr(self, f) + getattr(other, f) for f in FIELDS))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TallyTable):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in FIELDS)

    def as_array(self) -> np.ndarray:
        """(5, C) array in the order tp, fp, fn, ti, fi."""
        return np.stack([getattr(self, f) for f in FIELDS])


def merge_tallies(tables: Iterable[TallyTable], num_classes: int) -> TallyTable:
    total = TallyTable.zeros(num_classes)
    for t in tables:
        total = total + t
    return total


def _check_labels(pred: np.ndarray, gt: np.ndarray, catalog: ClassCatalog) -> None:
    c = catalog.num_classes
    bad_gt = ~(((gt >= 0) & (gt < c)) | (gt == catalog.ignore_code))
    if np.any(bad_gt):
        raise InvalidInput(f"ground truth holds label {gt[bad_gt].flat[0]} outside the catalog")
    bad_pred = ~(((pred >= 0) & (pred < c)) | (pred == catalog.invalid_code))
    if np.any(bad_pred):
        raise InvalidInput(f"prediction holds label {pred[bad_pred].flat[0]} outside the catalog")


def tally(pred: HardLabelMap, gt: HardLabelMap, invalid_gt: InvalidMask,
          catalog: ClassCatalog = DEFAULT_CATALOG) -> TallyTable:
    """Count the five sets per class; ground-truth ignore pixels are skipped."""
    check_same_shape(pred.shape, gt.shape, invalid_gt.shape)
    p = np.asarray(pred.labels).ravel().astype(np.int64)
    g = np.asarray(gt.labels).ravel().astype(np.int64)
    j = np.asarray(invalid_gt.mask, dtype=bool).ravel()
    _check_labels(p, g, catalog)
    keep = g != catalog.ignore_code
    p, g, j = p[keep], g[keep], j[keep]
    c = catalog.num_classes
    inv = p == catalog.invalid_code
    hit = p == g
    miss = ~hit & ~inv

    def count(labels):
        return np.bincount(labels, minlength=c)

    return TallyTable(
        tp=count(g[hit]),
        fp=count(p[miss]),
        fn=count(g[miss]),
        ti=count(g[inv & j]),
        fi=count(g[inv & ~j]),
    )


def uiou_score(t: TallyTable) -> tuple[np.ndarray, float]:
    """Per-class UIoU (NaN where the class never occurs) and their mean."""
    num = t.tp + t.ti
    den = num + t.fp + t.fn + t.fi
    per = np.full(t.num_classes, np.nan)
    present = den > 0
    per[present] = num[present] / den[present]
    mean = float(per[present].mean()) if np.any(present) else float("nan")
    return per, mean


def default_thetas(num_classes: int, n: int = 101) -> np.ndarray:
    return np.linspace(1.0 / num_classes, 1.0, n)


@dataclass(frozen=True, eq=False)
class UiouCurve:
    thetas: np.ndarray     # (T,)
    mean: np.ndarray       # (T,)
    per_class: np.ndarray  # (T, C), NaN for absent classes
    tallies: tuple[TallyTable, ...]

    def __iter__(self):
        return iter(zip(self.thetas, self.mean, self.per_class))

    def __len__(self) -> int:
        return len(self.thetas)


def _check_grid(thetas: np.ndarray, num_classes: int) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=np.float64).ravel()
    if len(thetas) == 0:
        raise InvalidInput("empty theta grid")
    if np.any(np.diff(thetas) <= 0):
        raise InvalidInput("theta grid must be strictly increasing")
    for th in (thetas[0], thetas[-1]):
        check_theta(th, num_classes)
    return thetas


def image_tallies(s: SoftPredictionMap | HardLabelMap, gt: HardLabelMap, invalid_gt: InvalidMask,
                  thetas: Sequence[float], catalog: ClassCatalog = DEFAULT_CATALOG) -> list[TallyTable]:
    """Tallies of one image at every threshold on the grid.

    A hard prediction (possibly already holding invalid labels) is scored
    as is at every threshold.
    """
    c = catalog.num_classes
    if isinstance(s, HardLabelMap):
        t = tally(s, gt, invalid_gt, catalog)
        return [t] * len(thetas)
    if s.channels != c:
        raise InvalidInput(f"soft map has {s.channels} channels, catalog has {c}")
    labels = np.argmax(s.values, axis=2)
    conf = np.take_along_axis(s.values, labels[..., None], axis=2)[..., 0]
    return [tally(HardLabelMap(_threshold(labels, conf, th, c, catalog.invalid_code)),
                  gt, invalid_gt, catalog) for th in thetas]


def curve_from_tallies(thetas: Sequence[float], per_theta: Sequence[TallyTable]) -> UiouCurve:
    means, per = [], []
    for t in per_theta:
        pc, m = uiou_score(t)
        per.append(pc)
        means.append(m)
    return UiouCurve(np.asarray(thetas, dtype=np.float64), np.array(means), np.array(per),
                     tuple(per_theta))


def uiou_curve(s_maps: Sequence[SoftPredictionMap | HardLabelMap], gts: Sequence[HardLabelMap],
               invalid_masks: Sequence[InvalidMask], thetas=None,
               catalog: ClassCatalog = DEFAULT_CATALOG) -> UiouCurve:
    """Mean and per-class UIoU over a corpus at each threshold.

    Tallies are merged across images before scoring, so the value at
    theta = 1/C is the corpus-level mean IoU.
    """
    if not len(s_maps) == len(gts) == len(invalid_masks):
        raise InvalidInput("predictions, ground truths and masks must align")
    c = catalog.num_classes
    thetas = _check_grid(default_thetas(c) if thetas is None else thetas, c)
    totals = [TallyTable.zeros(c) for _ in thetas]
    for s, g, j in zip(s_maps, gts, invalid_masks):
        for k, t in enumerate(image_tallies(s, g, j, thetas, catalog)):
            totals[k] = totals[k] + t
    return curve_from_tallies(thetas, totals)


def check_separation(s_maps: Sequence[SoftPredictionMap], invalid_masks: Sequence[InvalidMask],
                     gts: Sequence[HardLabelMap] | None = None,
                     catalog: ClassCatalog = DEFAULT_CATALOG) -> tuple[float, float] | None:
    """(max confidence on J=1 pixels, min confidence on J=0 pixels) if separated.

    Empty sides take the vacuous bounds 1/C and 1. When ground truths are
    given, their ignore pixels are left out. Returns None on overlap.
    """
    if len(s_maps) != len(invalid_masks) or (gts is not None and len(gts) != len(s_maps)):
        raise InvalidInput("predictions and masks must align")
    if len(s_maps) == 0:
        return None
    c = s_maps[0].channels
    lo, hi = 1.0 / c, 1.0
    for k, (s, j) in enumerate(zip(s_maps, invalid_masks)):
        check_same_shape(s.shape, j.shape)
        conf = s.values.max(axis=2)
        mask = np.asarray(j.mask, dtype=bool)
        use = np.ones_like(mask)
        if gts is not None:
            use = np.asarray(gts[k].labels) != catalog.ignore_code
        inv = conf[mask & use]
        val = conf[~mask & use]
        if inv.size:
            lo = max(lo, float(inv.max()))
        if val.size:
            hi = min(hi, float(val.min()))
    return (lo, hi) if lo < hi else None
