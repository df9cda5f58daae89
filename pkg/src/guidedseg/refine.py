"""Pseudo-label generation for a dark image from its daytime counterpart.

The day prediction is first aligned to the dark view, either by a cross
bilateral filter guided by the dark image or by warping it with estimated
camera motion and day depth, and then fused with the dark prediction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .bilateral import (
    BilateralParams,
    cross_bilateral_align,
    cross_bilateral_align_auto,
    cross_bilateral_align_grid,
    srgb_to_lab,
)
from .core import (
    DEFAULT_CATALOG,
    CameraModel,
    CameraMotion,
    ClassCatalog,
    DepthMap,
    GuidedSegError,
    HardLabelMap,
    InvalidInput,
    SoftPredictionMap,
    check_same_shape,
)
from .fusion import FusionParams, compute_alpha, fuse
from .geometry import (
    GeometryError,
    MatchSet,
    MotionParams,
    build_warp_mesh,
    clamp_sky,
    detect_and_match,
    estimate_motion,
    forward_warp,
)

log = logging.getLogger(__name__)

MODES = ("bilateral", "warp", "warp_with_fallback")
BILATERAL_IMPLS = ("auto", "grid", "naive")


class MissingDepth(GuidedSegError):
    pass


class MissingCameras(GuidedSegError):
    pass


@dataclass(frozen=True)
class RefineConfig:
    alignment_mode: str = "warp_with_fallback"
    min_inliers: int = 14
    bilateral: BilateralParams = field(default_factory=BilateralParams)
    fusion: FusionParams = field(default_factory=FusionParams)
    seed: int = 0
    ransac_iterations: int = 1000
    inlier_threshold: float = 2.0
    bilateral_impl: str = "auto"
    catalog: ClassCatalog = DEFAULT_CATALOG

    def __post_init__(self):
        if self.alignment_mode not in MODES:
            raise InvalidInput(f"alignment_mode must be one of {MODES}")
        if self.min_inliers < 7:
            raise InvalidInput("min_inliers must be at least 7")
        if self.bilateral_impl not in BILATERAL_IMPLS:
            raise InvalidInput(f"bilateral_impl must be one of {BILATERAL_IMPLS}")

    @property
    def motion_params(self) -> MotionParams:
        return MotionParams(self.ransac_iterations, self.inlier_threshold, self.seed)


@dataclass(frozen=True)
class RefineReport:
    mode: str                        # alignment actually used: bilateral or warp
    inlier_count: int | None = None  # None when no RANSAC ran
    note: str = ""


@dataclass(frozen=True, eq=False)
class RefineResult:
    fused: SoftPredictionMap
    labels: HardLabelMap
    aligned: SoftPredictionMap
    report: RefineReport


def bilateral_alignment(s_day: SoftPredictionMap, img_dark: np.ndarray,
                        config: RefineConfig) -> SoftPredictionMap:
    lab = srgb_to_lab(img_dark)
    if config.bilateral_impl == "naive":
        return cross_bilateral_align(s_day, lab, config.bilateral)
    if config.bilateral_impl == "grid":
        return cross_bilateral_align_grid(s_day, lab, config.bilateral)
    return cross_bilateral_align_auto(s_day, lab, config.bilateral)


def warp_alignment(s_day: SoftPredictionMap, depth_day: DepthMap, motion: CameraMotion,
                   k_day: CameraModel, k_dark: CameraModel,
                   catalog: ClassCatalog = DEFAULT_CATALOG) -> SoftPredictionMap:
    depth = clamp_sky(depth_day, s_day, catalog)
    mesh = build_warp_mesh(depth, motion, k_day, k_dark)
    return forward_warp(s_day, mesh)[0]


def refine_prediction(s_dark: SoftPredictionMap, img_dark: np.ndarray, s_day: SoftPredictionMap,
                      img_day: np.ndarray | None = None, depth_day: DepthMap | None = None,
                      cameras: tuple[CameraModel, CameraModel] | None = None,
                      config: RefineConfig = RefineConfig(), matches: MatchSet | None = None,
                      motion: CameraMotion | None = None) -> RefineResult:
    """Align the day prediction, fuse it with the dark one, take the argmax.

    ``cameras`` is (day, dark). In the warp modes the motion is estimated from
    ``matches`` (or from the two images when none are given), unless a known
    ``motion`` is passed. In ``warp_with_fallback`` mode any geometry failure
    or fewer than ``min_inliers`` RANSAC inliers switches to the bilateral
    alignment.
    """
    check_same_shape(s_dark.shape, s_day.shape, np.shape(img_dark)[:2])
    if img_day is not None:
        check_same_shape(s_dark.shape, np.shape(img_day)[:2])
    mode = config.alignment_mode

    aligned, report = None, None
    if mode != "bilateral":
        if depth_day is None:
            raise MissingDepth("warp alignment needs the day depth map")
        if cameras is None:
            raise MissingCameras("warp alignment needs both camera models")
        check_same_shape(s_day.shape, depth_day.shape)
        k_day, k_dark = cameras
        try:
            inliers = None
            if motion is None:
                if matches is None:
                    if img_day is None:
                        raise InvalidInput("need matches or the day image to estimate motion")
                    matches = detect_and_match(img_day, img_dark)
                sky_safe = clamp_sky(depth_day, s_day, config.catalog)
                motion, inliers = estimate_motion(matches, k_day, k_dark, sky_safe,
                                                  config.motion_params)
            if mode == "warp_with_fallback" and inliers is not None and inliers < config.min_inliers:
                report = RefineReport("bilateral", inliers, f"only {inliers} inliers")
            else:
                aligned = warp_alignment(s_day, depth_day, motion, k_day, k_dark, config.catalog)
                report = RefineReport("warp", inliers)
        except GeometryError as e:
            if mode == "warp":
                raise
            log.info("falling back to bilateral alignment: %s", e)
            report = RefineReport("bilateral", e.inlier_count, f"{type(e).__name__}: {e}")

    if aligned is None:
        aligned = bilateral_alignment(s_day, img_dark, config)
        if report is None:
            report = RefineReport("bilateral")

    alpha = compute_alpha(s_dark, aligned, config.catalog, config.fusion)
    fused = fuse(s_dark, aligned, alpha)
    labels = HardLabelMap(np.argmax(fused.values, axis=2).astype(np.int64))
    return RefineResult(fused, labels, aligned, report)
