"""Confidence-adaptive fusion of the aligned day prediction with the dark one."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DEFAULT_CATALOG,
    ClassCatalog,
    InvalidInput,
    SoftPredictionMap,
    check_same_shape,
)


@dataclass(frozen=True)
class FusionParams:
    alpha_low: float = 0.3
    alpha_high: float = 0.6
    eta: float = 0.2

    def __post_init__(self):
        if not 0 < self.alpha_low <= self.alpha_high <= 1:
            raise InvalidInput("need 0 < alpha_low <= alpha_high <= 1")
        if not 0 <= self.eta <= 1:
            raise InvalidInput("eta must lie in [0, 1]")


def compute_alpha(s_dark: SoftPredictionMap, s_day_aligned: SoftPredictionMap,
                  catalog: ClassCatalog = DEFAULT_CATALOG,
                  params: FusionParams = FusionParams()) -> np.ndarray:
    """Per-pixel weight of the day prediction.

    alpha_low where one view's top class is dynamic and the other view gives
    that class at most ``eta`` (likely a moved object), alpha_high elsewhere.
    """
    check_same_shape(s_dark.shape, s_day_aligned.shape)
    check_same_shape((s_dark.channels,), (s_day_aligned.channels,))
    dyn = np.zeros(s_dark.channels, dtype=bool)
    dyn[list(catalog.dynamic_classes)] = True
    a_day = np.argmax(s_day_aligned.values, axis=2)
    a_dark = np.argmax(s_dark.values, axis=2)
    dark_at_day = np.take_along_axis(s_dark.values, a_day[..., None], axis=2)[..., 0]
    day_at_dark = np.take_along_axis(s_day_aligned.values, a_dark[..., None], axis=2)[..., 0]
    low = (dyn[a_day] & (dark_at_day <= params.eta)) | (dyn[a_dark] & (day_at_dark <= params.eta))
    return np.where(low, params.alpha_low, params.alpha_high)


def fuse(s_dark: SoftPredictionMap, s_day_aligned: SoftPredictionMap,
         alpha: np.ndarray) -> SoftPredictionMap:
    """Blend with weights F_dark and alpha * F_day, F being each map's max probability."""
    check_same_shape(s_dark.shape, s_day_aligned.shape, np.shape(alpha))
    check_same_shape((s_dark.channels,), (s_day_aligned.channels,))
    f_dark = s_dark.values.max(axis=2)
    f_day = alpha * s_day_aligned.values.max(axis=2)
    den = f_dark + f_day
    assert np.all(den > 0)
    out = (f_dark[..., None] * s_dark.values + f_day[..., None] * s_day_aligned.values) / den[..., None]
    return SoftPredictionMap(out)
