"""Two-view geometry: matching, relative motion and depth-based warping."""

from .errors import (  # noqa: F401
    BehindCamera,
    CheiralityAmbiguous,
    DegenerateSample,
    GeometryError,
    InsufficientMatches,
    NoKeypoints,
    NoValidTriangulation,
)
from .matching import (  # noqa: F401
    THETA_REL,
    THETA_SEC,
    MatchSet,
    NeighborTables,
    detect_and_match,
    filter_matches,
    read_match_file,
    write_match_file,
)
from .epipolar import (  # noqa: F401
    FundamentalMatrix,
    MotionEstimate,
    MotionParams,
    decompose_essential,
    direction_error_deg,
    eight_point,
    essential_and_decompose,
    essential_from_fundamental,
    estimate_motion,
    ransac_fundamental,
    recover_scale,
    refine_pose,
    rotation_angle_deg,
    sampson_distance,
    seven_point,
    skew,
    triangulate,
)
from .warp import (  # noqa: F401
    UNCOVERED,
    WarpAssignment,
    WarpMesh,
    assign_pixels,
    backproject_reproject,
    build_warp_mesh,
    clamp_sky,
    forward_warp,
)
