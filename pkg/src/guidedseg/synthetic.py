"""Synthetic inputs for tests, benchmarks and the experiment scripts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CameraModel, CameraMotion, DepthMap, SoftPredictionMap
from .geometry.matching import MatchSet


def random_distribution_map(rng: np.random.Generator, h: int, w: int, c: int,
                            temperature: float = 1.0) -> SoftPredictionMap:
    """Softmax of i.i.d. Gaussian logits: an unstructured soft map."""
    logits = rng.normal(size=(h, w, c)) / temperature
    e = np.exp(logits - logits.max(axis=2, keepdims=True))
    return SoftPredictionMap(e / e.sum(axis=2, keepdims=True))


def voronoi_labels(rng: np.random.Generator, h: int, w: int, n_regions: int) -> np.ndarray:
    seeds = rng.uniform([0, 0], [h, w], size=(n_regions, 2))
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    best = np.full((h, w), np.inf)
    labels = np.zeros((h, w), dtype=np.int64)
    for i, (sy, sx) in enumerate(seeds):
        d = (yy - sy) ** 2 + (xx - sx) ** 2
        closer = d < best
        best[closer] = d[closer]
        labels[closer] = i
    return labels


def piecewise_scene(rng: np.random.Generator, h: int, w: int, c: int,
                    n_regions: int | None = None, noise: float = 3.0,
                    logit_noise: float = 0.5):
    """Voronoi scene: an 8-bit sRGB image and a soft map that agree on regions.

    Each region gets a random color (plus a gentle gradient and per-pixel
    noise of ``noise`` gray levels) and a random class-logit vector (plus
    per-pixel logit noise).
    """
    if n_regions is None:
        n_regions = int(rng.integers(3, 9))
    regions = voronoi_labels(rng, h, w, n_regions)
    colors = rng.uniform(0, 255, size=(n_regions, 3))
    grad = rng.normal(scale=20.0 / max(h, w), size=(n_regions, 2, 3))
    yy, xx = np.mgrid[:h, :w]
    img = colors[regions] + yy[..., None] * grad[regions, 0] + xx[..., None] * grad[regions, 1]
    img = img + rng.normal(scale=noise, size=img.shape)
    img = np.clip(np.round(img), 0, 255).astype(np.uint8)

    logits = rng.normal(scale=2.0, size=(n_regions, c))[regions]
    logits = logits + rng.normal(scale=logit_noise, size=logits.shape)
    e = np.exp(logits - logits.max(axis=2, keepdims=True))
    soft = SoftPredictionMap(e / e.sum(axis=2, keepdims=True))
    return img, soft, regions


# two-view geometry

def random_rotation(rng: np.random.Generator, max_deg: float) -> np.ndarray:
    """Rotation about a uniformly random axis by an angle uniform in [0, max_deg]."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    ang = np.deg2rad(rng.uniform(0, max_deg))
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(ang) * k + (1 - np.cos(ang)) * k @ k


def facet_depth(rng: np.random.Generator, h: int, w: int, near: float = 4.0,
                far: float = 60.0, n_facets: int | None = None) -> np.ndarray:
    """Piecewise-planar depth: Voronoi facets, each an inverse-depth plane.

    Facet depths are spread over [near, far], so the scene is far from a
    single plane (which would leave the epipolar geometry undetermined).
    """
    if n_facets is None:
        n_facets = int(rng.integers(6, 13))
    facets = voronoi_labels(rng, h, w, n_facets)
    yy, xx = np.mgrid[:h, :w] / max(h, w)
    inv = rng.uniform(1 / far, 1 / near, size=n_facets)
    slope = rng.normal(scale=0.3, size=(n_facets, 2)) * inv[:, None]
    z = inv[facets] + slope[facets, 0] * (yy - 0.5) + slope[facets, 1] * (xx - 0.5)
    return np.clip(1.0 / np.clip(z, 1 / far, 1 / near), near, far)


def homography_residual(a: np.ndarray, b: np.ndarray) -> float:
    """Median transfer error (px) of the least-squares homography a -> b."""
    def norm(p):
        c = p.mean(axis=0)
        s = np.sqrt(2) / np.linalg.norm(p - c, axis=1).mean()
        return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    Ta, Tb = norm(a), norm(b)
    ah = np.c_[a, np.ones(len(a))] @ Ta.T
    bh = np.c_[b, np.ones(len(b))] @ Tb.T
    z = np.zeros_like(ah)
    A = np.concatenate([
        np.hstack([ah, z, -bh[:, :1] * ah]),
        np.hstack([z, ah, -bh[:, 1:2] * ah]),
    ])
    H = np.linalg.inv(Tb) @ np.linalg.svd(A)[2][-1].reshape(3, 3) @ Ta
    m = np.c_[a, np.ones(len(a))] @ H.T
    return float(np.median(np.linalg.norm(m[:, :2] / m[:, 2:] - b, axis=1)))


@dataclass(frozen=True, eq=False)
class TwoViewScene:
    camera: CameraModel
    motion: CameraMotion
    depth: DepthMap
    matches: MatchSet
    is_outlier: np.ndarray
    shape: tuple


def two_view_scene(rng: np.random.Generator, n_matches: int | None = None,
                   max_rot_deg: float = 20.0, t_range=(0.5, 3.0), noise_px: float = 0.0,
                   outlier_frac: float = 0.0, h: int = 480, w: int = 640,
                   focal: float = 500.0) -> TwoViewScene:
    """Calibrated pair with known metric motion; day points lie on integer pixels.

    Clean matches project the day pixel's depth-map point into the dark view;
    ``outlier_frac`` of them get a uniformly random dark position instead.
    """
    cam = CameraModel(focal, focal, (w - 1) / 2, (h - 1) / 2)
    depth = DepthMap(facet_depth(rng, h, w))
    if n_matches is None:
        n_matches = int(rng.integers(50, 201))
    while True:
        R = random_rotation(rng, max_rot_deg)
        t = rng.normal(size=3)
        t *= rng.uniform(*t_range) / np.linalg.norm(t)
        motion = CameraMotion(R, t)
        cand = np.stack([rng.integers(0, w, 20 * n_matches),
                         rng.integers(0, h, 20 * n_matches)], axis=1).astype(np.float64)
        d = depth.depth[cand[:, 1].astype(int), cand[:, 0].astype(int)]
        X = d[:, None] * (np.concatenate([cand, np.ones((len(cand), 1))], 1) @ cam.K_inv.T)
        Xd = X @ R.T + t
        ok = Xd[:, 2] > 0.1
        q = (Xd @ cam.K.T)
        q = q[:, :2] / np.where(ok, q[:, 2], 1.0)[:, None]
        ok &= (q[:, 0] >= 0) & (q[:, 0] <= w - 1) & (q[:, 1] >= 0) & (q[:, 1] <= h - 1)
        _, first = np.unique(cand[ok], axis=0, return_index=True)
        idx = np.flatnonzero(ok)[np.sort(first)][:n_matches]
        # a near-planar visible set leaves F undetermined; draw again
        if len(idx) == n_matches and homography_residual(cand[idx], q[idx]) > 5.0:
            break
    p_day, p_dark = cand[idx], q[idx]
    if noise_px > 0:
        p_dark = np.clip(p_dark + rng.normal(scale=noise_px, size=p_dark.shape),
                         0, [w - 1, h - 1])
    out = np.zeros(n_matches, dtype=bool)
    n_out = int(round(outlier_frac * n_matches))
    if n_out:
        sel = rng.choice(n_matches, n_out, replace=False)
        out[sel] = True
        p_dark = p_dark.copy()
        p_dark[sel] = rng.uniform([0, 0], [w - 1, h - 1], size=(n_out, 2))
    return TwoViewScene(cam, motion, depth, MatchSet(p_day, p_dark), out, (h, w))


# refinement scene

@dataclass(frozen=True, eq=False)
class CorruptedPair:
    s_day: SoftPredictionMap
    s_dark: SoftPredictionMap
    img_day: np.ndarray
    img_dark: np.ndarray
    depth: DepthMap
    camera: CameraModel
    motion: CameraMotion
    gt_dark: np.ndarray
    corrupted: np.ndarray


def _soft_from_labels(labels: np.ndarray, c: int, p: float) -> SoftPredictionMap:
    v = np.full(labels.shape + (c,), (1.0 - p) / (c - 1))
    np.put_along_axis(v, labels[..., None], p, axis=2)
    return SoftPredictionMap(v)


def corrupted_pair(rng: np.random.Generator, h: int = 96, w: int = 128, num_classes: int = 19,
                   label_pool: int = 10, corrupt: float = 0.3, depth_m: float = 20.0,
                   shift: tuple = (0.4, 0.1, 0.3), day_conf: float = 0.9,
                   dark_conf: float = 0.6) -> CorruptedPair:
    """Day/dark pair over a fronto-parallel plane at ``depth_m``.

    The day prediction is confident and correct. The dark ground truth is
    the day labeling pulled through the plane-induced homography (nearest
    neighbor, computed independently of the mesh warp), and the dark
    prediction is that ground truth with a ``corrupt`` fraction of pixels
    relabeled to a random other class. Labels come from the first
    ``label_pool`` classes (static and not sky in the default catalog).
    """
    cam = CameraModel(0.9 * w, 0.9 * w, (w - 1) / 2, (h - 1) / 2)
    motion = CameraMotion(random_rotation(rng, 1.0), np.asarray(shift, dtype=np.float64))
    regions = voronoi_labels(rng, h, w, int(rng.integers(4, 9)))
    lab_of_region = rng.integers(0, label_pool, size=regions.max() + 1)
    day_labels = lab_of_region[regions]

    n = np.array([0.0, 0.0, 1.0])
    H = cam.K @ (motion.rotation + np.outer(motion.translation, n) / depth_m) @ cam.K_inv
    yy, xx = np.mgrid[:h, :w].astype(np.float64)
    src = np.stack([xx, yy, np.ones_like(xx)], axis=-1) @ np.linalg.inv(H).T
    sx = np.round(src[..., 0] / src[..., 2]).astype(np.int64)
    sy = np.round(src[..., 1] / src[..., 2]).astype(np.int64)
    inside = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    gt_dark = np.where(inside, day_labels[np.clip(sy, 0, h - 1), np.clip(sx, 0, w - 1)], day_labels)

    corrupted = rng.random((h, w)) < corrupt
    noisy = gt_dark.copy()
    off = rng.integers(1, label_pool, size=(h, w))
    noisy[corrupted] = ((gt_dark + off) % label_pool)[corrupted]

    palette = rng.uniform(0, 255, size=(num_classes, 3))
    img_day = np.clip(palette[day_labels] + rng.normal(scale=3, size=(h, w, 3)), 0, 255).astype(np.uint8)
    img_dark = np.clip(0.3 * palette[gt_dark] + rng.normal(scale=3, size=(h, w, 3)), 0, 255).astype(np.uint8)
    return CorruptedPair(
        s_day=_soft_from_labels(day_labels, num_classes, day_conf),
        s_dark=_soft_from_labels(noisy, num_classes, dark_conf),
        img_day=img_day,
        img_dark=img_dark,
        depth=DepthMap(np.full((h, w), depth_m)),
        camera=cam,
        motion=motion,
        gt_dark=gt_dark,
        corrupted=corrupted,
    )
