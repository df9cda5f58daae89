"""Depth-based forward warping of a day prediction into the dark view.

A quad mesh joins 4-connected pixel centers of the day image. Every vertex
is back-projected with its depth, moved by the camera motion and projected
into the dark camera. Each dark pixel then takes the bilinear blend of the
quad covering it; where several quads overlap the nearest one (smallest
mean depth) wins, and pixels no quad covers keep the day prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..core import (
    D_MAX,
    CameraModel,
    CameraMotion,
    ClassCatalog,
    DEFAULT_CATALOG,
    DepthMap,
    SoftPredictionMap,
    check_same_shape,
)
from .errors import BehindCamera

UNCOVERED = -1
IRREGULAR_RATIO = 5.0
_EPS = 1e-9


def _project(x: np.ndarray, y: np.ndarray, d: np.ndarray, motion: CameraMotion,
             k_day: CameraModel, k_dark: CameraModel):
    """Vectorized back-projection and reprojection; returns (x', y', z')."""
    rays = np.stack([x, y, np.ones_like(x)], axis=-1) @ k_day.K_inv.T
    X = d[..., None] * rays
    Xd = X @ motion.rotation.T + motion.translation
    q = Xd @ k_dark.K.T
    z = Xd[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return q[..., 0] / q[..., 2], q[..., 1] / q[..., 2], z


def backproject_reproject(p, depth_day: DepthMap, motion: CameraMotion, k_day: CameraModel,
                          k_dark: CameraModel) -> np.ndarray:
    """Map day pixel(s) (x, y) to fractional dark-view coordinates.

    Depth is read at the nearest pixel. Raises BehindCamera if any point
    ends up at or behind the dark camera plane.
    """
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p = p.reshape(-1, 2)
    h, w = depth_day.shape
    xi = np.clip(np.round(p[:, 0]).astype(np.int64), 0, w - 1)
    yi = np.clip(np.round(p[:, 1]).astype(np.int64), 0, h - 1)
    x, y, z = _project(p[:, 0], p[:, 1], depth_day.depth[yi, xi], motion, k_day, k_dark)
    if np.any(z <= 0):
        raise BehindCamera("point lies behind the dark camera")
    out = np.stack([x, y], axis=1)
    return out[0] if single else out


def clamp_sky(depth_day: DepthMap, s_day: SoftPredictionMap,
              catalog: ClassCatalog = DEFAULT_CATALOG, d_max: float = D_MAX) -> DepthMap:
    """Set depth to ``d_max`` wherever the day prediction's argmax is sky."""
    check_same_shape(depth_day.shape, s_day.shape)
    if catalog.sky_class is None:
        return depth_day
    sky = np.argmax(s_day.values, axis=2) == catalog.sky_class
    d = np.where(sky, d_max, np.minimum(depth_day.depth, d_max))
    return DepthMap(d, d_max)


@dataclass(frozen=True, eq=False)
class WarpMesh:
    """Deformed pixel grid.

    Quad (i, j) has vertices a=(i, j), b=(i, j+1), c=(i+1, j+1), d=(i+1, j)
    in (row, col) source-pixel order; ``keep`` marks which of them survive the
    cut of an irregular quad (all four otherwise).
    """

    vertices: np.ndarray     # (H, W, 2) dark-view (x, y)
    vertex_ok: np.ndarray    # (H, W) bool: in front of the dark camera
    quad_depth: np.ndarray   # (H-1, W-1) mean source depth
    irregular: np.ndarray    # (H-1, W-1) bool
    usable: np.ndarray       # (H-1, W-1) bool
    keep: np.ndarray         # (H-1, W-1, 4) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.vertices.shape[:2]


@dataclass(frozen=True, eq=False)
class WarpAssignment:
    quad: np.ndarray     # (H, W) flat quad index i * (W-1) + j, or UNCOVERED
    weights: np.ndarray  # (H, W, 4) over vertices a, b, c, d


# index offsets of the quad corners a, b, c, d
_CORNERS = ((0, 0), (0, 1), (1, 1), (1, 0))
# sides ab, bc, cd, da as corner-index pairs
_SIDES = ((0, 1), (1, 2), (2, 3), (3, 0))


def _cut_keep(lengths: np.ndarray, depths: np.ndarray) -> np.ndarray:
    """Surviving corners after removing the two longest sides of each quad.

    Of the two connected pieces left over, the one with the larger mean depth
    is kept (the far surface behind a disocclusion).
    """
    n = len(lengths)
    order = np.argsort(-lengths, axis=1, kind="stable")
    cut = np.zeros((n, 4), dtype=bool)
    rows = np.arange(n)
    cut[rows, order[:, 0]] = True
    cut[rows, order[:, 1]] = True
    # union-find over four corners is small enough to unroll: label pieces
    comp = np.tile(np.arange(4), (n, 1))
    for _ in range(3):
        for s, (u, v) in enumerate(_SIDES):
            join = ~cut[:, s]
            m = np.minimum(comp[:, u], comp[:, v])
            comp[join, u] = m[join]
            comp[join, v] = m[join]
    keep = np.zeros((n, 4), dtype=bool)
    best = np.full(n, -np.inf)
    for label in range(4):
        member = comp == label
        cnt = member.sum(axis=1)
        has = cnt > 0
        mean = np.where(has, (depths * member).sum(axis=1) / np.maximum(cnt, 1), -np.inf)
        better = has & (mean > best)
        best[better] = mean[better]
        keep[better] = member[better]
    return keep


def build_warp_mesh(depth_day: DepthMap, motion: CameraMotion, k_day: CameraModel,
                    k_dark: CameraModel) -> WarpMesh:
    """Deform the day pixel grid into the dark view.

    Sky clamping (see ``clamp_sky``) is the caller's job. Quads with a
    vertex behind the dark camera are marked unusable rather than raising.
    """
    h, w = depth_day.shape
    yy, xx = np.mgrid[:h, :w].astype(np.float64)
    x, y, z = _project(xx, yy, depth_day.depth, motion, k_day, k_dark)
    ok = z > 0
    verts = np.stack([x, y], axis=-1)
    verts[~ok] = np.nan

    corners = np.stack([verts[i:h - 1 + i, j:w - 1 + j] for i, j in _CORNERS], axis=2)
    cdepth = np.stack([depth_day.depth[i:h - 1 + i, j:w - 1 + j] for i, j in _CORNERS], axis=2)
    cok = np.stack([ok[i:h - 1 + i, j:w - 1 + j] for i, j in _CORNERS], axis=2)
    usable = cok.all(axis=2)
    quad_depth = cdepth.mean(axis=2)

    lengths = np.stack([np.linalg.norm(corners[..., u, :] - corners[..., v, :], axis=-1)
                        for u, v in _SIDES], axis=2)
    srt = -np.sort(-np.where(usable[..., None], lengths, 0.0), axis=2)
    second, third = srt[..., 1], srt[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        irregular = usable & (second > IRREGULAR_RATIO * third)

    keep = np.ones(quad_depth.shape + (4,), dtype=bool)
    if np.any(irregular):
        keep[irregular] = _cut_keep(lengths[irregular], cdepth[irregular])
    return WarpMesh(verts, ok, quad_depth, irregular, usable, keep)


@numba.njit(cache=True)
def _tri_bary(px, py, ax, ay, bx, by, cx, cy):
    det = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy)
    if det == 0.0:
        return -1.0, -1.0, -1.0
    l1 = ((by - cy) * (px - cx) + (cx - bx) * (py - cy)) / det
    l2 = ((cy - ay) * (px - cx) + (ax - cx) * (py - cy)) / det
    return l1, l2, 1.0 - l1 - l2


@numba.njit(cache=True)
def _quad_weights(px, py, qx, qy, tri, l1, l2, l3, out):
    """Bilinear weights of (px, py) in quad q by Newton inversion.

    Starts from the containing triangle's barycentric point; if Newton does
    not land inside the unit square the triangle weights are used instead.
    """
    if tri == 0:      # triangle a, b, c
        u = l2 + l3
        v = l3
    else:             # triangle a, c, d
        u = l2
        v = l2 + l3
    conv = False
    for _ in range(20):
        fx = ((1 - u) * (1 - v) * qx[0] + u * (1 - v) * qx[1] + u * v * qx[2]
              + (1 - u) * v * qx[3] - px)
        fy = ((1 - u) * (1 - v) * qy[0] + u * (1 - v) * qy[1] + u * v * qy[2]
              + (1 - u) * v * qy[3] - py)
        if abs(fx) < 1e-12 and abs(fy) < 1e-12:
            conv = True
            break
        dxu = (1 - v) * (qx[1] - qx[0]) + v * (qx[2] - qx[3])
        dxv = (1 - u) * (qx[3] - qx[0]) + u * (qx[2] - qx[1])
        dyu = (1 - v) * (qy[1] - qy[0]) + v * (qy[2] - qy[3])
        dyv = (1 - u) * (qy[3] - qy[0]) + u * (qy[2] - qy[1])
        det = dxu * dyv - dxv * dyu
        if det == 0.0:
            break
        u -= (dyv * fx - dxv * fy) / det
        v -= (-dyu * fx + dxu * fy) / det
    if conv and -1e-9 <= u <= 1 + 1e-9 and -1e-9 <= v <= 1 + 1e-9:
        u = min(max(u, 0.0), 1.0)
        v = min(max(v, 0.0), 1.0)
        out[0] = (1 - u) * (1 - v)
        out[1] = u * (1 - v)
        out[2] = u * v
        out[3] = (1 - u) * v
    else:
        out[:] = 0.0
        if tri == 0:
            out[0], out[1], out[2] = l1, l2, l3
        else:
            out[0], out[2], out[3] = l1, l2, l3
        for k in range(4):
            out[k] = max(out[k], 0.0)
    s = out[0] + out[1] + out[2] + out[3]
    for k in range(4):
        out[k] /= s


@numba.njit(cache=True)
def _rasterize(verts, usable, quad_depth, H, W, quad_out, depth_out, w_out):
    qh, qw = quad_depth.shape
    qx = np.empty(4)
    qy = np.empty(4)
    wbuf = np.empty(4)
    for i in range(qh):
        for j in range(qw):
            if not usable[i, j]:
                continue
            qx[0], qy[0] = verts[i, j, 0], verts[i, j, 1]
            qx[1], qy[1] = verts[i, j + 1, 0], verts[i, j + 1, 1]
            qx[2], qy[2] = verts[i + 1, j + 1, 0], verts[i + 1, j + 1, 1]
            qx[3], qy[3] = verts[i + 1, j, 0], verts[i + 1, j, 1]
            x0 = max(int(np.ceil(min(qx[0], qx[1], qx[2], qx[3]) - _EPS)), 0)
            x1 = min(int(np.floor(max(qx[0], qx[1], qx[2], qx[3]) + _EPS)), W - 1)
            y0 = max(int(np.ceil(min(qy[0], qy[1], qy[2], qy[3]) - _EPS)), 0)
            y1 = min(int(np.floor(max(qy[0], qy[1], qy[2], qy[3]) + _EPS)), H - 1)
            qd = quad_depth[i, j]
            qid = i * qw + j
            for py in range(y0, y1 + 1):
                for px in range(x0, x1 + 1):
                    if quad_out[py, px] != -1 and depth_out[py, px] <= qd:
                        continue
                    l1, l2, l3 = _tri_bary(px, py, qx[0], qy[0], qx[1], qy[1], qx[2], qy[2])
                    tri = 0
                    if not (l1 >= -_EPS and l2 >= -_EPS and l3 >= -_EPS):
                        l1, l2, l3 = _tri_bary(px, py, qx[0], qy[0], qx[2], qy[2], qx[3], qy[3])
                        tri = 1
                        if not (l1 >= -_EPS and l2 >= -_EPS and l3 >= -_EPS):
                            continue
                    _quad_weights(px, py, qx, qy, tri, l1, l2, l3, wbuf)
                    quad_out[py, px] = qid
                    depth_out[py, px] = qd
                    for k in range(4):
                        w_out[py, px, k] = wbuf[k]


def assign_pixels(mesh: WarpMesh) -> WarpAssignment:
    """Per dark pixel: the nearest covering quad and its vertex weights."""
    h, w = mesh.shape
    quad = np.full((h, w), UNCOVERED, dtype=np.int64)
    depth = np.full((h, w), np.inf)
    weights = np.zeros((h, w, 4))
    if h < 2 or w < 2:
        return WarpAssignment(quad, weights)
    verts = np.where(np.isfinite(mesh.vertices), mesh.vertices, 0.0)
    _rasterize(verts, mesh.usable, mesh.quad_depth, h, w, quad, depth, weights)

    covered = quad != UNCOVERED
    qi, qj = np.divmod(quad[covered], w - 1)
    irr = mesh.irregular[qi, qj]
    if np.any(irr):
        keep = mesh.keep[qi[irr], qj[irr]]
        wk = weights[covered][irr] * keep
        s = wk.sum(axis=1, keepdims=True)
        # a pixel on the discarded side: spread over the kept corners
        eq = keep / keep.sum(axis=1, keepdims=True)
        wk = np.where(s > 0, wk / np.where(s > 0, s, 1.0), eq)
        sub = weights[covered]
        sub[irr] = wk
        weights[covered] = sub
    return WarpAssignment(quad, weights)


def forward_warp(s1: SoftPredictionMap, mesh: WarpMesh) -> tuple[SoftPredictionMap, WarpAssignment]:
    """Warp the day soft map through the mesh into the dark view."""
    check_same_shape(s1.shape, mesh.shape)
    assign = assign_pixels(mesh)
    h, w = mesh.shape
    out = s1.values.copy()
    covered = assign.quad != UNCOVERED
    qi, qj = np.divmod(assign.quad[covered], w - 1)
    wts = assign.weights[covered]
    acc = np.zeros((len(qi), s1.channels))
    for k, (di, dj) in enumerate(_CORNERS):
        acc += wts[:, k, None] * s1.values[qi + di, qj + dj]
    out[covered] = acc
    return SoftPredictionMap(out), assign
