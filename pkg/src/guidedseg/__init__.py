"""Map-guided pseudo-labels for dark images and uncertainty-aware evaluation."""

from .core import (  # noqa: F401
    D_MAX,
    DEFAULT_CATALOG,
    CameraModel,
    CameraMotion,
    ClassCatalog,
    DepthMap,
    GuidedSegError,
    HardLabelMap,
    InvalidMask,
    SoftPredictionMap,
    argmax_with_confidence,
    validate_soft_map,
)
from .bilateral import (  # noqa: F401
    BilateralParams,
    cross_bilateral_align,
    cross_bilateral_align_auto,
    cross_bilateral_align_grid,
)
from .fusion import FusionParams, compute_alpha, fuse  # noqa: F401
from .refine import RefineConfig, RefineResult, refine_prediction  # noqa: F401
from .uiou import TallyTable, UiouCurve, tally, threshold_to_hard, uiou_curve, uiou_score  # noqa: F401

__version__ = "0.1.0"
