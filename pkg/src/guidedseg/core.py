"""Shared data model: class catalog, soft/hard label maps, depth, cameras."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CITYSCAPES_CLASSES = (
    "road", "sidewalk", "building", "wall", "fence", "pole", "traffic light",
    "traffic sign", "vegetation", "terrain", "sky", "person", "rider", "car",
    "truck", "bus", "train", "motorcycle", "bicycle",
)

SUM_TOLERANCE = 1e-3
RENORM_TOLERANCE = 1e-6
D_MAX = 540.0


class GuidedSegError(Exception):
    """Base class for all library errors."""


class ChannelMismatch(GuidedSegError):
    pass


class NotADistribution(GuidedSegError):
    pass


class DimensionMismatch(GuidedSegError):
    pass


class InvalidInput(GuidedSegError):
    pass


@dataclass(frozen=True)
class ClassCatalog:
    names: tuple[str, ...] = CITYSCAPES_CLASSES
    dynamic_classes: frozenset[int] = frozenset(range(11, 19))
    invalid_code: int = 19
    ignore_code: int = 255
    sky_class: int | None = 10

    def __post_init__(self):
        c = len(self.names)
        if c == 0:
            raise InvalidInput("catalog needs at least one class")
        if not all(0 <= k < c for k in self.dynamic_classes):
            raise InvalidInput("dynamic classes must be class indices")
        if self.invalid_code == self.ignore_code:
            raise InvalidInput("invalid_code and ignore_code must differ")
        for code in (self.invalid_code, self.ignore_code):
            if 0 <= code < c:
                raise InvalidInput(f"reserved code {code} collides with a class index")
        if self.sky_class is not None and not 0 <= self.sky_class < c:
            raise InvalidInput("sky_class out of range")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @classmethod
    def generic(cls, num_classes: int, dynamic=(), invalid_code=None, ignore_code=255):
        """Catalog with placeholder names, for tests and non-Cityscapes data."""
        if invalid_code is None:
            invalid_code = num_classes
        return cls(
            names=tuple(f"class_{k}" for k in range(num_classes)),
            dynamic_classes=frozenset(dynamic),
            invalid_code=invalid_code,
            ignore_code=ignore_code,
            sky_class=None,
        )

    def allowed_labels(self) -> np.ndarray:
        return np.array(
            list(range(self.num_classes)) + [self.invalid_code, self.ignore_code]
        )


DEFAULT_CATALOG = ClassCatalog()


@dataclass(frozen=True, eq=False)
class SoftPredictionMap:
    """Per-pixel class distribution, shape (H, W, C), float64."""

    values: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True, eq=False)
class HardLabelMap:
    labels: np.ndarray  # (H, W) integer

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True, eq=False)
class InvalidMask:
    mask: np.ndarray  # (H, W) bool, True = invalid

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


@dataclass(frozen=True, eq=False)
class DepthMap:
    depth: np.ndarray  # (H, W) meters
    d_max: float = D_MAX

    def __post_init__(self):
        d = self.depth
        if d.ndim != 2:
            raise InvalidInput("depth map must be 2-D")
        if not np.all(np.isfinite(d)) or np.any(d <= 0) or np.any(d > self.d_max):
            raise InvalidInput(f"depth must be finite and in (0, {self.d_max}]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInput("focal lengths must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])


@dataclass(frozen=True, eq=False)
class CameraMotion:
    """Rigid transform from the day camera frame to the dark camera frame: X' = R X + t."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise InvalidInput("rotation must be 3x3")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1) > 1e-9:
            raise InvalidInput("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> CameraMotion:
        return cls(np.eye(3), np.zeros(3))

    def scaled(self, factor: float) -> CameraMotion:
        return CameraMotion(self.rotation, self.translation * factor)


def validate_soft_map(raw: np.ndarray, catalog: ClassCatalog = DEFAULT_CATALOG) -> SoftPredictionMap:
    """Check a decoded (H, W, C) buffer and return a normalized soft map.

    Pixels whose sum is within 1e-3 of one are rescaled to sum to one;
    anything further off, negative or non-finite raises NotADistribution.
    """
    arr = np.asarray(raw)
    if arr.ndim != 3:
        raise InvalidInput(f"soft map must be (H, W, C), got shape {arr.shape}")
    if arr.shape[2] != catalog.num_classes:
        raise ChannelMismatch(f"expected {catalog.num_classes} channels, got {arr.shape[2]}")
    values = arr.astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise NotADistribution("non-finite entries")
    if np.any(values < 0):
        raise NotADistribution("negative entries")
    sums = values.sum(axis=2)
    bad = np.abs(sums - 1.0) > SUM_TOLERANCE
    if np.any(bad):
        y, x = np.argwhere(bad)[0]
        raise NotADistribution(f"pixel ({y}, {x}) sums to {sums[y, x]:.6g}")
    # pixels already within the post-condition band are left bit-identical
    off = np.abs(sums - 1.0) > RENORM_TOLERANCE
    if np.any(off):
        values[off] /= sums[off][:, None]
    values.setflags(write=False)
    return SoftPredictionMap(values)


def argmax_with_confidence(s: SoftPredictionMap) -> tuple[HardLabelMap, np.ndarray]:
    """Hard labels (lowest index wins ties) and the per-pixel max probability."""
    labels = np.argmax(s.values, axis=2)
    conf = np.take_along_axis(s.values, labels[..., None], axis=2)[..., 0]
    return HardLabelMap(labels.astype(np.int64)), conf


def confidence(values: np.ndarray) -> np.ndarray:
    return values.max(axis=-1)


def check_same_shape(*shapes) -> None:
    first = tuple(shapes[0])
    for s in shapes[1:]:
        if tuple(s) != first:
            raise DimensionMismatch(f"shape {tuple(s)} != {first}")
