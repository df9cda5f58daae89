"""Putative matches between a day and a dark image.

The descriptor matching rules are: mutual nearest neighbors only, a
second-neighbor ratio test on squared distances, and a cap on the squared
distance relative to the globally best match.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import NoKeypoints

THETA_SEC = 0.7
THETA_REL = 20.0


@dataclass(frozen=True, eq=False)
class MatchSet:
    """Point correspondences; coordinates are (x, y) = (column, row)."""

    p_day: np.ndarray   # (n, 2)
    p_dark: np.ndarray  # (n, 2)
    dist_sq: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.p_day, dtype=np.float64).reshape(-1, 2)
        b = np.asarray(self.p_dark, dtype=np.float64).reshape(-1, 2)
        if a.shape != b.shape:
            raise ValueError("p_day and p_dark must have the same length")
        object.__setattr__(self, "p_day", a)
        object.__setattr__(self, "p_dark", b)
        if self.dist_sq is not None:
            object.__setattr__(self, "dist_sq", np.asarray(self.dist_sq, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.p_day)

    def subset(self, idx) -> MatchSet:
        d = None if self.dist_sq is None else self.dist_sq[idx]
        return MatchSet(self.p_day[idx], self.p_dark[idx], d)

    def within_bounds(self, day_shape, dark_shape) -> bool:
        def inside(p, shape):
            h, w = shape[:2]
            return bool(np.all((p[:, 0] >= 0) & (p[:, 0] <= w - 1) & (p[:, 1] >= 0) & (p[:, 1] <= h - 1)))
        return inside(self.p_day, day_shape) and inside(self.p_dark, dark_shape)


@dataclass(frozen=True, eq=False)
class NeighborTables:
    """Nearest-neighbor lookups in both directions over a squared-distance matrix.

    Rows index dark-image descriptors, columns day-image descriptors.
    """

    fwd_nn: np.ndarray       # dark -> day index
    fwd_d2: np.ndarray       # squared distance to that neighbor
    fwd_second_d2: np.ndarray  # squared distance to the second neighbor (inf if none)
    bwd_nn: np.ndarray       # day -> dark index

    @classmethod
    def from_distances(cls, dist_sq: np.ndarray) -> NeighborTables:
        d = np.asarray(dist_sq, dtype=np.float64)
        if d.ndim != 2 or 0 in d.shape:
            raise ValueError("distance matrix must be 2-D and non-empty")
        fwd = np.argmin(d, axis=1)
        rows = np.arange(d.shape[0])
        best = d[rows, fwd]
        if d.shape[1] > 1:
            second = np.partition(d, 1, axis=1)[:, 1]
        else:
            second = np.full(d.shape[0], np.inf)
        bwd = np.argmin(d, axis=0)
        return cls(fwd, best, second, bwd)


def filter_matches(tables: NeighborTables, theta_sec: float = THETA_SEC,
                   theta_rel: float = THETA_REL) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Apply the three rejection rules; returns (dark_idx, day_idx, dist_sq).

    Ratios are tested in multiplied-out form so zero distances are handled:
    a zero second-neighbor distance makes the match ambiguous, and a zero
    global best only admits other exact matches.
    """
    dark = np.arange(len(tables.fwd_nn))
    day = tables.fwd_nn
    d1 = tables.fwd_d2
    mutual = tables.bwd_nn[day] == dark
    ratio = (d1 <= theta_sec * tables.fwd_second_d2) & (tables.fwd_second_d2 > 0)
    best = d1[mutual].min() if np.any(mutual) else 0.0
    rel = d1 <= theta_rel * best
    keep = mutual & ratio & rel
    return dark[keep], day[keep], d1[keep]


# built-in keypoints and descriptors

PATCH = 11


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = img[..., :3] @ np.array([0.299, 0.587, 0.114])
    return img


def harris_corners(gray: np.ndarray, max_points: int = 1000, sigma: float = 1.5,
                   k: float = 0.04, rel_threshold: float = 1e-3,
                   border: int = PATCH // 2) -> np.ndarray:
    """Harris corners (row, col) after 5x5 non-maximum suppression, strongest first."""
    gy = ndimage.sobel(gray, axis=0)
    gx = ndimage.sobel(gray, axis=1)
    sxx = ndimage.gaussian_filter(gx * gx, sigma)
    syy = ndimage.gaussian_filter(gy * gy, sigma)
    sxy = ndimage.gaussian_filter(gx * gy, sigma)
    resp = sxx * syy - sxy * sxy - k * (sxx + syy) ** 2
    peak = resp.max()
    if not peak > 0:
        return np.empty((0, 2), dtype=np.int64)
    local = (resp == ndimage.maximum_filter(resp, size=5)) & (resp > rel_threshold * peak)
    local[:border] = local[-border:] = False
    local[:, :border] = local[:, -border:] = False
    pts = np.argwhere(local)
    order = np.argsort(-resp[pts[:, 0], pts[:, 1]], kind="stable")
    return pts[order[:max_points]]


def patch_descriptors(gray: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-norm 11x11 intensity patches around (row, col) points."""
    r = PATCH // 2
    off = np.arange(-r, r + 1)
    rows = pts[:, 0, None, None] + off[None, :, None]
    cols = pts[:, 1, None, None] + off[None, None, :]
    patches = gray[rows, cols].reshape(len(pts), -1)
    patches = patches - patches.mean(axis=1, keepdims=True)
    norm = np.linalg.norm(patches, axis=1, keepdims=True)
    return patches / np.where(norm > 0, norm, 1.0)


def detect_and_match(img_day: np.ndarray, img_dark: np.ndarray, max_points: int = 1000,
                     theta_sec: float = THETA_SEC, theta_rel: float = THETA_REL) -> MatchSet:
    g_day, g_dark = to_gray(img_day), to_gray(img_dark)
    k_day = harris_corners(g_day, max_points)
    k_dark = harris_corners(g_dark, max_points)
    if len(k_day) == 0 or len(k_dark) == 0:
        raise NoKeypoints("no corners found in one of the images")
    f_day = patch_descriptors(g_day, k_day)
    f_dark = patch_descriptors(g_dark, k_dark)
    # |a - b|^2 for unit-norm vectors
    d2 = np.maximum(2.0 - 2.0 * f_dark @ f_day.T, 0.0)
    d2[np.abs(d2) < 1e-12] = 0.0
    i_dark, i_day, dist = filter_matches(NeighborTables.from_distances(d2), theta_sec, theta_rel)
    return MatchSet(k_day[i_day][:, ::-1], k_dark[i_dark][:, ::-1], dist)


# match files: "x_day y_day x_dark y_dark" per line, '#' comments

def read_match_file(path: str | Path) -> MatchSet:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 numbers, got {len(parts)}")
        rows.append([float(v) for v in parts])
    arr = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return MatchSet(arr[:, :2], arr[:, 2:])


def write_match_file(path: str | Path, matches: MatchSet) -> None:
    lines = ["# x_day y_day x_dark y_dark"]
    for (a, b), (c, d) in zip(matches.p_day, matches.p_dark):
        lines.append(" ".join(repr(float(v)) for v in (a, b, c, d)))
    Path(path).write_text("\n".join(lines) + "\n")
