"""Relative camera motion from point matches.

Conventions: ``x_dark^T F x_day = 0`` for homogeneous pixel coordinates, and
the motion maps day-camera points to dark-camera points, ``X' = R X + t``,
so that ``E = K_dark^T F K_day = [t]_x R``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from ..core import CameraModel, CameraMotion, DepthMap
from .errors import (
    CheiralityAmbiguous,
    DegenerateSample,
    GeometryError,
    InsufficientMatches,
    NoValidTriangulation,
)
from .matching import MatchSet


@dataclass(frozen=True, eq=False)
class FundamentalMatrix:
    """Rank-2, unit Frobenius norm, sign fixed so the largest entry is positive."""

    matrix: np.ndarray

    def __post_init__(self):
        F = np.asarray(self.matrix, dtype=np.float64)
        U, s, Vt = np.linalg.svd(F)
        F = U @ np.diag([s[0], s[1], 0.0]) @ Vt
        F /= np.linalg.norm(F)
        flat = F.ravel()
        if flat[np.argmax(np.abs(flat))] < 0:
            F = -F
        object.__setattr__(self, "matrix", F)


@dataclass(frozen=True)
class MotionParams:
    iterations: int = 1000
    inlier_threshold: float = 2.0
    seed: int = 0
    min_parallax_deg: float = 0.05
    refine: bool = True


def homogeneous(p: np.ndarray) -> np.ndarray:
    return np.concatenate([p, np.ones((len(p), 1))], axis=1)


def hartley_transform(p: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to 0 and the mean distance to sqrt(2)."""
    c = p.mean(axis=0)
    d = np.linalg.norm(p - c, axis=1).mean()
    s = np.sqrt(2) / d if d > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _design(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Rows of the linear system vec(F) . row = x2^T F x1 (row-major vec)."""
    return np.einsum("...i,...j->...ij", x2, x1).reshape(*x1.shape[:-1], 9)


def sampson_distance(F: np.ndarray, p_day: np.ndarray, p_dark: np.ndarray) -> np.ndarray:
    """First-order geometric distance (pixels) of each match to F; F may be batched."""
    x1 = homogeneous(p_day)
    x2 = homogeneous(p_dark)
    Fx1 = x1 @ np.swapaxes(F, -1, -2)
    Ftx2 = x2 @ F
    num = np.sum(x2 * Fx1, axis=-1)
    den = Fx1[..., 0] ** 2 + Fx1[..., 1] ** 2 + Ftx2[..., 0] ** 2 + Ftx2[..., 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.abs(num) / np.sqrt(den)
    return np.where(den > 0, d, np.where(num == 0, 0.0, np.inf))


# cubic det(a F1 + (1 - a) F2) sampled at these points, then interpolated
_A_SAMPLES = np.array([0.0, 1.0, -1.0, 2.0])
_VANDER_INV = np.linalg.inv(np.vander(_A_SAMPLES, 4))


def _cubic_real_roots(coeffs: np.ndarray) -> list[np.ndarray]:
    """Real roots of a batch of cubics (highest power first) via companion eigenvalues."""
    out = [np.empty(0)] * len(coeffs)
    lead = np.abs(coeffs[:, 0])
    scale = np.abs(coeffs).max(axis=1)
    ok = np.all(np.isfinite(coeffs), axis=1) & (scale > 0)
    cubic = ok & (lead > 1e-12 * scale)
    if np.any(cubic):
        c = coeffs[cubic] / coeffs[cubic, :1]
        comp = np.zeros((len(c), 3, 3))
        comp[:, 0, :] = -c[:, 1:]
        comp[:, 1, 0] = comp[:, 2, 1] = 1.0
        ev = np.linalg.eigvals(comp)
        for i, b in enumerate(np.flatnonzero(cubic)):
            e = ev[i]
            out[b] = e.real[np.abs(e.imag) <= 1e-8 * np.maximum(1.0, np.abs(e.real))]
    for b in np.flatnonzero(ok & ~cubic):
        # degenerate leading term: fall back to the general polynomial solver
        r = np.roots(coeffs[b])
        out[b] = r.real[np.abs(r.imag) <= 1e-8 * np.maximum(1.0, np.abs(r.real))]
    return out


def _seven_point_batch(x1n: np.ndarray, x2n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimal solutions for a batch of 7-point samples in normalized coordinates.

    Returns the stacked candidate matrices and the sample index of each.
    """
    A = _design(x1n, x2n)                         # (B, 7, 9)
    _, _, Vt = np.linalg.svd(A, full_matrices=True)
    F1 = Vt[:, -1].reshape(-1, 3, 3)
    F2 = Vt[:, -2].reshape(-1, 3, 3)
    dets = np.stack([np.linalg.det(a * F1 + (1 - a) * F2) for a in _A_SAMPLES], axis=1)
    coeffs = dets @ _VANDER_INV.T                  # (B, 4), highest power first
    roots = _cubic_real_roots(coeffs)
    owner = np.repeat(np.arange(len(A)), [len(r) for r in roots])
    if len(owner) == 0:
        return np.empty((0, 3, 3)), owner
    a = np.concatenate(roots)[:, None, None]
    return a * F1[owner] + (1 - a) * F2[owner], owner


def seven_point(p_day: np.ndarray, p_dark: np.ndarray) -> list[np.ndarray]:
    """All real fundamental matrices through exactly seven matches (pixel units)."""
    if len(p_day) != 7:
        raise ValueError("seven_point needs exactly 7 matches")
    T1, T2 = hartley_transform(p_day), hartley_transform(p_dark)
    x1 = homogeneous(p_day) @ T1.T
    x2 = homogeneous(p_dark) @ T2.T
    return [T2.T @ F @ T1 for F in _seven_point_batch(x1[None], x2[None])[0]]


def eight_point(p_day: np.ndarray, p_dark: np.ndarray) -> np.ndarray:
    """Normalized linear least-squares F from >= 8 matches, rank 2 enforced."""
    T1, T2 = hartley_transform(p_day), hartley_transform(p_dark)
    x1 = homogeneous(p_day) @ T1.T
    x2 = homogeneous(p_dark) @ T2.T
    _, _, Vt = np.linalg.svd(_design(x1, x2))
    F = Vt[-1].reshape(3, 3)
    U, s, Vt = np.linalg.svd(F)
    F = U @ np.diag([s[0], s[1], 0.0]) @ Vt
    return T2.T @ F @ T1


def _score(F: np.ndarray, p_day, p_dark, t: float):
    d = sampson_distance(F, p_day, p_dark)
    inl = d <= t
    return inl, inl.sum(axis=-1), np.where(inl, d * d, 0.0).sum(axis=-1)


def ransac_fundamental(matches: MatchSet, iterations: int = 1000, inlier_threshold: float = 2.0,
                       seed: int = 0) -> tuple[FundamentalMatrix, np.ndarray]:
    """7-point RANSAC. Returns F and the sorted inlier indices.

    All samples are drawn up front from ``np.random.default_rng(seed)``, so the
    result depends only on (matches, iterations, threshold, seed). The best
    model maximizes the inlier count (ties: smaller summed squared residual of
    inliers); it is then re-fit on its inliers by the 8-point method for as
    long as that does not lose inliers.
    """
    n = len(matches)
    if n < 7:
        raise InsufficientMatches(f"need at least 7 matches, got {n}")
    p1, p2 = matches.p_day, matches.p_dark
    rng = np.random.default_rng(seed)
    samples = np.argsort(rng.random((iterations, n)), axis=1)[:, :7]

    T1, T2 = hartley_transform(p1), hartley_transform(p2)
    x1 = homogeneous(p1) @ T1.T
    x2 = homogeneous(p2) @ T2.T
    stack, _ = _seven_point_batch(x1[samples], x2[samples])
    stack = T2.T @ stack @ T1
    good = np.all(np.isfinite(stack), axis=(1, 2)) & (np.abs(stack).max(axis=(1, 2)) > 0)
    stack = stack[good]
    if len(stack) == 0:
        raise DegenerateSample("no sample produced a valid fundamental matrix")

    best = None
    for start in range(0, len(stack), 512):
        _, counts, cost = _score(stack[start:start + 512], p1, p2, inlier_threshold)
        for j in range(len(counts)):
            key = (-int(counts[j]), float(cost[j]))
            if best is None or key < best[0]:
                best = (key, stack[start + j])
    F = best[1]
    inl, count, cost = _score(F, p1, p2, inlier_threshold)
    if count < 7:
        raise DegenerateSample(f"best model has only {count} inliers", inlier_count=int(count))

    for _ in range(10):
        if inl.sum() < 8:
            break
        F_new = eight_point(p1[inl], p2[inl])
        inl_new, count_new, cost_new = _score(F_new, p1, p2, inlier_threshold)
        if (count_new, -cost_new) <= (count, -cost):
            break
        F, inl, count, cost = F_new, inl_new, count_new, cost_new

    # the reported inliers are re-checked against the normalized matrix
    Fm = FundamentalMatrix(F)
    inl = sampson_distance(Fm.matrix, p1, p2) <= inlier_threshold
    return Fm, np.flatnonzero(inl)


# essential matrix and pose

def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


def essential_from_fundamental(F: FundamentalMatrix, k_day: CameraModel,
                               k_dark: CameraModel) -> np.ndarray:
    """E = K_dark^T F K_day projected to two equal singular values and a zero."""
    E = k_dark.K.T @ F.matrix @ k_day.K
    U, s, Vt = np.linalg.svd(E)
    return U @ np.diag([1.0, 1.0, 0.0]) @ Vt


def decompose_essential(E: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """The four (R, t) candidates, ||t|| = 1."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = U[:, 2]
    out = []
    for R in (U @ W @ Vt, U @ W.T @ Vt):
        # re-orthonormalize against rounding
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
        out.extend([(R, t.copy()), (R, -t)])
    return out


def triangulate(R: np.ndarray, t: np.ndarray, k_day: CameraModel, k_dark: CameraModel,
                p_day: np.ndarray, p_dark: np.ndarray) -> np.ndarray:
    """Linear (DLT) triangulation in the day camera frame; (n, 3), NaN where degenerate."""
    y1 = homogeneous(p_day) @ k_day.K_inv.T
    y2 = homogeneous(p_dark) @ k_dark.K_inv.T
    P1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    P2 = np.hstack([R, t.reshape(3, 1)])
    A = np.stack([
        y1[:, 0, None] * P1[2] - P1[0],
        y1[:, 1, None] * P1[2] - P1[1],
        y2[:, 0, None] * P2[2] - P2[0],
        y2[:, 1, None] * P2[2] - P2[1],
    ], axis=1)
    _, _, Vt = np.linalg.svd(A)
    Xh = Vt[:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        X = Xh[:, :3] / Xh[:, 3:]
    X[np.abs(Xh[:, 3]) < 1e-12] = np.nan
    return X


def _cheirality(R, t, X):
    z1 = X[:, 2]
    z2 = (X @ R.T + t)[:, 2]
    return np.isfinite(z1) & (z1 > 0) & (z2 > 0)


def parallax_angles(R: np.ndarray, t: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Angle (rad) between the two viewing rays of each triangulated point."""
    c2 = -R.T @ t
    r1 = X
    r2 = X - c2
    cos = np.sum(r1 * r2, axis=1) / (np.linalg.norm(r1, axis=1) * np.linalg.norm(r2, axis=1))
    return np.arccos(np.clip(cos, -1.0, 1.0))


def essential_and_decompose(F: FundamentalMatrix, k_day: CameraModel, k_dark: CameraModel,
                            inliers: MatchSet, min_parallax_deg: float = 0.05) -> CameraMotion:
    """Pose with unit translation chosen by a cheirality vote over the inliers.

    The winning candidate needs strictly more points in front of both cameras
    than the runner-up, and the median parallax of its points must reach
    ``min_parallax_deg``; otherwise the translation is not observable and
    CheiralityAmbiguous is raised.
    """
    if len(inliers) < 1:
        raise CheiralityAmbiguous("no inliers to vote with")
    E = essential_from_fundamental(F, k_day, k_dark)
    votes = []
    for R, t in decompose_essential(E):
        X = triangulate(R, t, k_day, k_dark, inliers.p_day, inliers.p_dark)
        front = _cheirality(R, t, X)
        votes.append((int(front.sum()), R, t, X, front))
    ranked = sorted(range(4), key=lambda i: -votes[i][0])
    top, second = votes[ranked[0]], votes[ranked[1]]
    if top[0] == 0 or top[0] == second[0]:
        raise CheiralityAmbiguous(
            f"cheirality vote tied ({top[0]} vs {second[0]})", inlier_count=len(inliers))
    _, R, t, X, front = top
    par = np.median(parallax_angles(R, t, X[front]))
    if not par >= np.deg2rad(min_parallax_deg):
        raise CheiralityAmbiguous(
            f"median parallax {np.rad2deg(par):.3g} deg is too small to fix the translation",
            inlier_count=len(inliers))
    return CameraMotion(R, t / np.linalg.norm(t))


def refine_pose(motion: CameraMotion, inliers: MatchSet, k_day: CameraModel,
                k_dark: CameraModel) -> CameraMotion:
    """Polish a unit-translation pose by least squares on the Sampson distances.

    Five parameters: a rotation-vector update and a two-dimensional step in
    the tangent plane of the translation direction.
    """
    if len(inliers) < 6:
        return motion
    R0, t0 = motion.rotation, motion.translation
    b1 = np.linalg.svd(t0.reshape(1, 3))[2][1:]   # orthonormal tangent basis
    Kd_inv, Kz_inv = k_day.K_inv, k_dark.K_inv

    def pose(x):
        R = Rotation.from_rotvec(x[:3]).as_matrix() @ R0
        t = t0 + x[3:] @ b1
        return R, t / np.linalg.norm(t)

    def resid(x):
        R, t = pose(x)
        F = Kz_inv.T @ skew(t) @ R @ Kd_inv
        return sampson_distance(F, inliers.p_day, inliers.p_dark)

    sol = least_squares(resid, np.zeros(5), loss="cauchy", f_scale=0.5)
    if not np.all(np.isfinite(sol.x)):
        return motion
    R, t = pose(sol.x)
    u, _, vt = np.linalg.svd(R)
    return CameraMotion(u @ vt, t)


def sample_depth(depth: DepthMap, p: np.ndarray) -> np.ndarray:
    """Nearest-pixel depth lookup at (x, y) points, clamped to the image."""
    h, w = depth.shape
    x = np.clip(np.round(p[:, 0]).astype(np.int64), 0, w - 1)
    y = np.clip(np.round(p[:, 1]).astype(np.int64), 0, h - 1)
    return depth.depth[y, x]


def recover_scale(motion: CameraMotion, inliers: MatchSet, k_day: CameraModel,
                  k_dark: CameraModel, depth_day: DepthMap) -> CameraMotion:
    """Scale t by the median ratio of map depth to triangulated depth."""
    X = triangulate(motion.rotation, motion.translation, k_day, k_dark,
                    inliers.p_day, inliers.p_dark)
    ok = _cheirality(motion.rotation, motion.translation, X)
    if not np.any(ok):
        raise NoValidTriangulation("no inlier triangulates in front of both cameras",
                                   inlier_count=len(inliers))
    ratios = sample_depth(depth_day, inliers.p_day[ok]) / X[ok, 2]
    return motion.scaled(float(np.median(ratios)))


class MotionEstimate(NamedTuple):
    motion: CameraMotion
    inlier_count: int


def estimate_motion(matches: MatchSet, k_day: CameraModel, k_dark: CameraModel,
                    depth_day: DepthMap, params: MotionParams = MotionParams()) -> MotionEstimate:
    """Metric day-to-dark motion plus the RANSAC inlier count.

    Errors raised after RANSAC carry ``inlier_count``.
    """
    F, idx = ransac_fundamental(matches, params.iterations, params.inlier_threshold, params.seed)
    inliers = matches.subset(idx)
    try:
        unit = essential_and_decompose(F, k_day, k_dark, inliers, params.min_parallax_deg)
        if params.refine:
            unit = refine_pose(unit, inliers, k_day, k_dark)
        metric = recover_scale(unit, inliers, k_day, k_dark, depth_day)
    except GeometryError as e:
        e.inlier_count = len(idx)
        raise
    return MotionEstimate(metric, len(idx))


def rotation_angle_deg(R: np.ndarray) -> float:
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.rad2deg(np.arccos(np.clip(c, -1.0, 1.0))))


def direction_error_deg(a: np.ndarray, b: np.ndarray) -> float:
    c = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.rad2deg(np.arccos(np.clip(c, -1.0, 1.0))))
