from __future__ import annotations

from ..core import GuidedSegError


class GeometryError(GuidedSegError):
    """Failure while estimating or applying two-view geometry.

    ``inlier_count`` carries the RANSAC inlier count when it was known at the
    point of failure, so callers can still report it.
    """

    def __init__(self, message: str = "", inlier_count: int | None = None):
        super().__init__(message)
        self.inlier_count = inlier_count


class NoKeypoints(GeometryError):
    pass


class InsufficientMatches(GeometryError):
    pass


class DegenerateSample(GeometryError):
    pass


class CheiralityAmbiguous(GeometryError):
    pass


class NoValidTriangulation(GeometryError):
    pass


class BehindCamera(GeometryError):
    pass
