"""Cross bilateral alignment of a soft prediction to a reference image.

Two implementations of the same filter:

* ``cross_bilateral_align`` evaluates the weighted average directly over a
  square window of radius ceil(3 * sigma_s). It is the reference.
* ``cross_bilateral_align_grid`` is the accelerated version. The spatial axes
  are sampled on a coarse grid (spacing sigma_s / spatial_sampling) and the
  three CIELAB range axes on a sparse lattice (spacing sigma_r /
  range_sampling). Range weights towards every occupied lattice node are
  evaluated exactly per pixel; the spatial part is a splat / Gaussian blur /
  slice pipeline, and the final range lookup is trilinear in the lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from .core import SoftPredictionMap, check_same_shape


@dataclass(frozen=True)
class BilateralParams:
    sigma_s: float = 80.0
    sigma_r: float = 10.0
    radius: int | None = None

    def __post_init__(self):
        if not (self.sigma_s > 0 and self.sigma_r > 0):
            raise ValueError("sigma_s and sigma_r must be positive")
        if self.radius is not None and self.radius < 1:
            raise ValueError("radius must be >= 1")

    @property
    def window_radius(self) -> int:
        if self.radius is not None:
            return self.radius
        # a 2-sigma cut leaves a weight jump of exp(-2) at the window edge,
        # which no smooth grid kernel can follow
        return max(1, math.ceil(3 * self.sigma_s))


# sRGB -> CIELAB (D65)

_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_WHITE_D65 = _SRGB_TO_XYZ.sum(axis=1)


def srgb_to_lab(img: np.ndarray) -> np.ndarray:
    """8-bit sRGB image (H, W, 3) -> float64 CIELAB (H, W, 3)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    c = img.astype(np.float64) / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _SRGB_TO_XYZ.T / _WHITE_D65
    eps = (6 / 29) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3 * (6 / 29) ** 2) + 4 / 29)
    L = 116 * f[..., 1] - 16
    a = 500 * (f[..., 0] - f[..., 1])
    b = 200 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


# reference implementation

@numba.njit(cache=True)
def _naive_kernel(S, ref, sigma_s, sigma_r, radius, rows, out):
    H, W, C = S.shape
    inv_s = 1.0 / (2.0 * sigma_s * sigma_s)
    inv_r = 1.0 / (2.0 * sigma_r * sigma_r)
    acc = np.empty(C)
    for ii in range(rows.shape[0]):
        y = rows[ii]
        for x in range(W):
            acc[:] = 0.0
            wsum = 0.0
            for qy in range(max(0, y - radius), min(H, y + radius + 1)):
                dy2 = (qy - y) * (qy - y)
                for qx in range(max(0, x - radius), min(W, x + radius + 1)):
                    dx2 = (qx - x) * (qx - x)
                    d0 = ref[qy, qx, 0] - ref[y, x, 0]
                    d1 = ref[qy, qx, 1] - ref[y, x, 1]
                    d2 = ref[qy, qx, 2] - ref[y, x, 2]
                    w = math.exp(-(dx2 + dy2) * inv_s - (d0 * d0 + d1 * d1 + d2 * d2) * inv_r)
                    wsum += w
                    for c in range(C):
                        acc[c] += w * S[qy, qx, c]
            for c in range(C):
                out[ii, x, c] = acc[c] / wsum


def cross_bilateral_align(
    s1: SoftPredictionMap, ref: np.ndarray, params: BilateralParams = BilateralParams(),
    rows: np.ndarray | None = None,
) -> SoftPredictionMap:
    """Direct evaluation of the cross bilateral filter.

    ``ref`` is a CIELAB image of the same size as ``s1``. ``rows`` restricts
    the evaluation to a subset of output rows (the result then has only those
    rows); it exists for timing and spot checks on large inputs.
    """
    check_same_shape(s1.shape, ref.shape[:2])
    S = np.ascontiguousarray(s1.values, dtype=np.float64)
    R = np.ascontiguousarray(ref, dtype=np.float64)
    if rows is None:
        rows = np.arange(S.shape[0])
    rows = np.asarray(rows, dtype=np.int64)
    out = np.empty((len(rows), S.shape[1], S.shape[2]))
    _naive_kernel(S, R, float(params.sigma_s), float(params.sigma_r),
                  params.window_radius, rows, out)
    return SoftPredictionMap(out)


# accelerated implementation

def _gaussian_taps(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-0.5 * (x / sigma) ** 2)


def _interp_indices(n: int, h: float, size: int):
    """Lower/upper grid node and fraction for samples 0..n-1 on nodes spaced h."""
    u = np.arange(n) / h
    i0 = np.minimum(np.floor(u).astype(np.int64), size - 1)
    f = u - i0
    i1 = np.minimum(i0 + 1, size - 1)
    return i0, i1, f


@numba.njit(cache=True)
def _splat_chunk(k0, k1, near_ptr, near_cells, cell_ptr, pix_sorted, lab, node_lab,
                 inv2, cutoff2, Sx, W, y0, y1, fy, x0, x1, fx, buf):
    K1 = Sx.shape[1]
    for k in range(k0, k1):
        b = buf[k - k0]
        n0 = node_lab[k, 0]
        n1 = node_lab[k, 1]
        n2 = node_lab[k, 2]
        for ci in range(near_ptr[k], near_ptr[k + 1]):
            cell = near_cells[ci]
            for pi in range(cell_ptr[cell], cell_ptr[cell + 1]):
                q = pix_sorted[pi]
                d0 = lab[q, 0] - n0
                d1 = lab[q, 1] - n1
                d2 = lab[q, 2] - n2
                dd = d0 * d0 + d1 * d1 + d2 * d2
                if dd > cutoff2:
                    continue
                g = math.exp(-dd * inv2)
                yy = q // W
                xx = q % W
                w00 = g * (1.0 - fy[yy]) * (1.0 - fx[xx])
                w01 = g * (1.0 - fy[yy]) * fx[xx]
                w10 = g * fy[yy] * (1.0 - fx[xx])
                w11 = g * fy[yy] * fx[xx]
                a0 = y0[yy]
                a1 = y1[yy]
                c0 = x0[xx]
                c1 = x1[xx]
                for c in range(K1):
                    v = Sx[q, c]
                    b[a0, c0, c] += w00 * v
                    b[a0, c1, c] += w01 * v
                    b[a1, c0, c] += w10 * v
                    b[a1, c1, c] += w11 * v


@numba.njit(cache=True)
def _slice_chunk(k0, k1, slice_ptr, slice_pix, slice_w, W, y0, y1, fy, x0, x1, fx, buf, num):
    K1 = num.shape[1]
    for k in range(k0, k1):
        b = buf[k - k0]
        for si in range(slice_ptr[k], slice_ptr[k + 1]):
            q = slice_pix[si]
            lam = slice_w[si]
            yy = q // W
            xx = q % W
            w00 = lam * (1.0 - fy[yy]) * (1.0 - fx[xx])
            w01 = lam * (1.0 - fy[yy]) * fx[xx]
            w10 = lam * fy[yy] * (1.0 - fx[xx])
            w11 = lam * fy[yy] * fx[xx]
            a0 = y0[yy]
            a1 = y1[yy]
            c0 = x0[xx]
            c1 = x1[xx]
            for c in range(K1):
                num[q, c] += (w00 * b[a0, c0, c] + w01 * b[a0, c1, c]
                              + w10 * b[a1, c0, c] + w11 * b[a1, c1, c])


def _csr(keys: np.ndarray, n_keys: int):
    order = np.argsort(keys, kind="stable")
    ptr = np.searchsorted(keys[order], np.arange(n_keys + 1))
    return order, ptr


def cross_bilateral_align_grid(
    s1: SoftPredictionMap,
    ref: np.ndarray,
    params: BilateralParams = BilateralParams(),
    spatial_sampling: float = 4.0,
    range_sampling: float = 3.0,
    range_cutoff: float = 3.5,
    chunk_bytes: int = 64 * 2**20,
) -> SoftPredictionMap:
    """Accelerated cross bilateral filter; see the module docstring.

    ``range_cutoff`` (in units of sigma_r) bounds the color distance at which
    range weights are still evaluated; beyond it they count as zero.
    ``chunk_bytes`` caps the size of the per-chunk node grids.
    """
    check_same_shape(s1.shape, ref.shape[:2])
    S = np.asarray(s1.values, dtype=np.float64)
    H, W, C = S.shape
    N = H * W
    lab = np.ascontiguousarray(np.asarray(ref, dtype=np.float64).reshape(N, 3))
    sigma_s, sr = float(params.sigma_s), float(params.sigma_r)
    hr = sr / range_sampling
    hs = max(1.0, sigma_s / spatial_sampling)

    # spatial grid; splat and slice each add a tent of variance h^2 / 6
    if hs == 1.0:
        gh, gw = H, W
        taps = _gaussian_taps(sigma_s, params.window_radius)
    else:
        gh = int(math.ceil((H - 1) / hs)) + 1
        gw = int(math.ceil((W - 1) / hs)) + 1
        sb = math.sqrt(max(sigma_s**2 - hs**2 / 3.0, 0.25 * hs**2)) / hs
        taps = _gaussian_taps(sb, max(1, int(round(params.window_radius / hs))))
    y0, y1, fy = _interp_indices(H, hs, gh)
    x0, x1, fx = _interp_indices(W, hs, gw)

    # range lattice: occupied cells and their corner nodes
    lo = lab.min(axis=0)
    u = (lab - lo) / hr
    base = np.floor(u).astype(np.int64)
    frac = u - base
    dims = base.max(axis=0) + 2
    cell_key = (base[:, 0] * dims[1] + base[:, 1]) * dims[2] + base[:, 2]
    cells, pix_cell = np.unique(cell_key, return_inverse=True)
    cell_idx = np.stack(np.unravel_index(cells, dims), axis=1)
    offsets = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)])
    corner_key = np.empty((N, 8), dtype=np.int64)
    corner_w = np.empty((N, 8))
    for n, off in enumerate(offsets):
        node = base + off
        corner_key[:, n] = (node[:, 0] * dims[1] + node[:, 1]) * dims[2] + node[:, 2]
        corner_w[:, n] = np.prod(np.where(off == 1, frac, 1.0 - frac), axis=1)
    nodes, corner_node = np.unique(corner_key.ravel(), return_inverse=True)
    K = len(nodes)
    node_idx = np.stack(np.unravel_index(nodes, dims), axis=1)
    node_lab = np.ascontiguousarray(node_idx * hr + lo)

    # pixels sorted by cell
    pix_sorted, cell_ptr = _csr(pix_cell.ravel(), len(cells))

    # for every node, the cells whose box lies within the cutoff
    cutoff2 = (range_cutoff * sr) ** 2
    near_node, near_cell = [], []
    step = max(1, 4_000_000 // max(1, len(cells)))
    for k0 in range(0, K, step):
        nk = node_idx[k0:k0 + step, None, :]
        gap = np.maximum(0, np.maximum(cell_idx[None] - nk, nk - cell_idx[None] - 1)) * hr
        kk, cc = np.nonzero((gap**2).sum(axis=2) <= cutoff2)
        near_node.append(kk + k0)
        near_cell.append(cc)
    near_node = np.concatenate(near_node)
    near_cells = np.concatenate(near_cell)
    order, near_ptr = _csr(near_node, K)
    near_cells = near_cells[order]

    # slice lists: for every node, the pixels interpolating from it
    slot = corner_node.ravel()
    slice_order, slice_ptr = _csr(slot, K)
    slice_pix = slice_order // 8
    slice_w = corner_w.ravel()[slice_order]

    # the channels of a distribution sum to one, so the normalizer of the
    # weighted average is the channel sum of the numerator
    Sx = np.ascontiguousarray(S.reshape(N, C))
    num = np.zeros((N, C))
    inv2 = 1.0 / (2.0 * (sr * sr - hr * hr / 6.0))
    chunk = max(1, chunk_bytes // (gh * gw * C * 4))
    for k0 in range(0, K, chunk):
        k1 = min(K, k0 + chunk)
        buf = np.zeros((k1 - k0, gh, gw, C), dtype=np.float32)
        _splat_chunk(k0, k1, near_ptr, near_cells, cell_ptr, pix_sorted, lab, node_lab,
                     inv2, cutoff2, Sx, W, y0, y1, fy, x0, x1, fx, buf)
        for axis in (1, 2):
            buf = ndimage.correlate1d(buf, taps, axis=axis, mode="constant", cval=0.0)
        _slice_chunk(k0, k1, slice_ptr, slice_pix, slice_w, W, y0, y1, fy, x0, x1, fx, buf, num)
    out = num / num.sum(axis=1, keepdims=True)
    return SoftPredictionMap(out.reshape(H, W, C))


def _grid_shape(h: int, w: int, params: BilateralParams, spatial_sampling: float):
    hs = max(1.0, params.sigma_s / spatial_sampling)
    if hs == 1.0:
        return h, w, 2 * params.window_radius + 1
    gh = int(math.ceil((h - 1) / hs)) + 1
    gw = int(math.ceil((w - 1) / hs)) + 1
    return gh, gw, 2 * max(1, int(round(params.window_radius / hs))) + 1


def grid_node_count(ref: np.ndarray, sigma_r: float, range_sampling: float = 3.0) -> int:
    """Number of occupied range-lattice nodes the grid filter would allocate."""
    lab = np.asarray(ref, dtype=np.float64).reshape(-1, 3)
    base = np.floor((lab - lab.min(axis=0)) / (sigma_r / range_sampling)).astype(np.int64)
    dims = base.max(axis=0) + 2
    keys = [((base[:, 0] + i) * dims[1] + base[:, 1] + j) * dims[2] + base[:, 2] + k
            for i in (0, 1) for j in (0, 1) for k in (0, 1)]
    return len(np.unique(np.concatenate(keys)))


def cross_bilateral_align_auto(
    s1: SoftPredictionMap, ref: np.ndarray, params: BilateralParams = BilateralParams(),
    spatial_sampling: float = 4.0, range_sampling: float = 3.0,
) -> SoftPredictionMap:
    """Grid filter unless a rough operation count favors direct evaluation.

    The grid pays per occupied range node for a full coarse spatial plane, so
    guide images with very scattered colors (noise) are cheaper to filter
    directly, especially for small sigma_s.
    """
    check_same_shape(s1.shape, ref.shape[:2])
    h, w, c = s1.values.shape
    gh, gw, taps = _grid_shape(h, w, params, spatial_sampling)
    k = grid_node_count(ref, params.sigma_r, range_sampling)
    grid_cost = k * gh * gw * c * (1 + 2 * taps)
    naive_cost = h * w * (2 * params.window_radius + 1) ** 2 * (c + 4)
    if naive_cost < grid_cost:
        return cross_bilateral_align(s1, ref, params)
    return cross_bilateral_align_grid(s1, ref, params, spatial_sampling, range_sampling)
