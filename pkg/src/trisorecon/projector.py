"""Matched ray-driven cone-beam projector pair (exact intersection lengths).

Both directions walk each source-to-pixel-centre ray through the voxel grid
with the same incremental Siddon traversal, so ``back_project`` is the exact
transpose of ``forward_project`` up to floating-point rounding.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .geometry import (
    ConeBeamGeometry,
    GeometryError,
    ProjectionKind,
    ProjectionStack,
    Volume,
    VolumeGrid,
)

# Fixed view partition for the back projector: the summation order depends on
# this constant only, never on the thread count.
BACKPROJECT_CHUNKS = 8


@numba.njit(cache=True, inline="always")
def _ray_endpoints(view_cos, view_sin, sr, sc, row, col, sad, sdd, pitch, nrows, ncols):
    sx = sad * view_cos
    sy = sad * view_sin
    u = ((col + sc) - (ncols - 1) / 2.0) * pitch
    v = ((row + sr) - (nrows - 1) / 2.0) * pitch
    back = sdd - sad
    px = -back * view_cos - u * view_sin
    py = -back * view_sin + u * view_cos
    return sx, sy, 0.0, px, py, v


@numba.njit(cache=True)
def _trace(sx, sy, sz, px, py, pz, x0, y0, z0, vs, nx, ny, nz, idx_buf, len_buf):
    """Fill ``idx_buf``/``len_buf`` with (flat voxel index, length) pairs; return count."""
    dx = px - sx
    dy = py - sy
    dz = pz - sz
    dlen = math.sqrt(dx * dx + dy * dy + dz * dz)
    x1 = x0 + nx * vs
    y1 = y0 + ny * vs
    z1 = z0 + nz * vs

    amin = 0.0
    amax = 1.0
    if dx != 0.0:
        t0 = (x0 - sx) / dx
        t1 = (x1 - sx) / dx
        amin = max(amin, min(t0, t1))
        amax = min(amax, max(t0, t1))
    elif sx < x0 or sx > x1:
        return 0
    if dy != 0.0:
        t0 = (y0 - sy) / dy
        t1 = (y1 - sy) / dy
        amin = max(amin, min(t0, t1))
        amax = min(amax, max(t0, t1))
    elif sy < y0 or sy > y1:
        return 0
    if dz != 0.0:
        t0 = (z0 - sz) / dz
        t1 = (z1 - sz) / dz
        amin = max(amin, min(t0, t1))
        amax = min(amax, max(t0, t1))
    elif sz < z0 or sz > z1:
        return 0
    if amax <= amin:
        return 0

    ex = sx + amin * dx
    ey = sy + amin * dy
    ez = sz + amin * dz
    i = min(max(int(math.floor((ex - x0) / vs)), 0), nx - 1)
    j = min(max(int(math.floor((ey - y0) / vs)), 0), ny - 1)
    k = min(max(int(math.floor((ez - z0) / vs)), 0), nz - 1)

    inf = np.inf
    if dx > 0.0:
        si = 1
        ax = (x0 + (i + 1) * vs - sx) / dx
        dax = vs / dx
    elif dx < 0.0:
        si = -1
        ax = (x0 + i * vs - sx) / dx
        dax = -vs / dx
    else:
        si = 0
        ax = inf
        dax = inf
    if dy > 0.0:
        sj = 1
        ay = (y0 + (j + 1) * vs - sy) / dy
        day = vs / dy
    elif dy < 0.0:
        sj = -1
        ay = (y0 + j * vs - sy) / dy
        day = -vs / dy
    else:
        sj = 0
        ay = inf
        day = inf
    if dz > 0.0:
        sk = 1
        az = (z0 + (k + 1) * vs - sz) / dz
        daz = vs / dz
    elif dz < 0.0:
        sk = -1
        az = (z0 + k * vs - sz) / dz
        daz = -vs / dz
    else:
        sk = 0
        az = inf
        daz = inf

    n = 0
    cap = idx_buf.shape[0]
    a = amin
    while n < cap:
        if ax <= ay and ax <= az:
            an = ax
            axis = 0
        elif ay <= az:
            an = ay
            axis = 1
        else:
            an = az
            axis = 2
        done = an >= amax
        if done:
            an = amax
        seg = (an - a) * dlen
        if seg > 0.0:
            idx_buf[n] = (k * ny + j) * nx + i
            len_buf[n] = seg
            n += 1
        if done:
            break
        a = an
        if axis == 0:
            i += si
            if i < 0 or i >= nx:
                break
            ax += dax
        elif axis == 1:
            j += sj
            if j < 0 or j >= ny:
                break
            ay += day
        else:
            k += sk
            if k < 0 or k >= nz:
                break
            az += daz
    return n


@numba.njit(cache=True, parallel=True)
def _forward_kernel(vol, cos_t, sin_t, shifts, sad, sdd, pitch, nrows, ncols,
                    x0, y0, z0, vs, nx, ny, nz, out):
    nviews = cos_t.shape[0]
    cap = nx + ny + nz + 4
    for vr in numba.prange(nviews * nrows):
        view = vr // nrows
        row = vr - view * nrows
        idx_buf = np.empty(cap, dtype=np.int64)
        len_buf = np.empty(cap, dtype=np.float64)
        for col in range(ncols):
            sx, sy, sz, px, py, pz = _ray_endpoints(
                cos_t[view], sin_t[view], shifts[view, 0], shifts[view, 1],
                row, col, sad, sdd, pitch, nrows, ncols)
            m = _trace(sx, sy, sz, px, py, pz, x0, y0, z0, vs, nx, ny, nz, idx_buf, len_buf)
            acc = 0.0
            for q in range(m):
                acc += vol[idx_buf[q]] * len_buf[q]
            out[view, row, col] = acc


@numba.njit(cache=True, parallel=True)
def _back_kernel(proj, cos_t, sin_t, shifts, sad, sdd, pitch, nrows, ncols,
                 x0, y0, z0, vs, nx, ny, nz, bounds, partial):
    nchunks = bounds.shape[0] - 1
    cap = nx + ny + nz + 4
    for c in numba.prange(nchunks):
        idx_buf = np.empty(cap, dtype=np.int64)
        len_buf = np.empty(cap, dtype=np.float64)
        acc = partial[c]
        for view in range(bounds[c], bounds[c + 1]):
            for row in range(nrows):
                for col in range(ncols):
                    val = proj[view, row, col]
                    if val == 0.0:
                        continue
                    sx, sy, sz, px, py, pz = _ray_endpoints(
                        cos_t[view], sin_t[view], shifts[view, 0], shifts[view, 1],
                        row, col, sad, sdd, pitch, nrows, ncols)
                    m = _trace(sx, sy, sz, px, py, pz, x0, y0, z0, vs, nx, ny, nz,
                               idx_buf, len_buf)
                    for q in range(m):
                        acc[idx_buf[q]] += val * len_buf[q]


def _check_source_outside(geometry: ConeBeamGeometry, grid: VolumeGrid) -> None:
    lo, hi = grid.lower_corner, grid.upper_corner
    # the source orbit lies in z = 0; it is inside the grid only if the grid spans z = 0
    if not lo[2] <= 0.0 <= hi[2]:
        return
    r = geometry.source_to_axis_distance
    for c, s in zip(np.cos(geometry.view_angles), np.sin(geometry.view_angles)):
        if lo[0] <= r * c <= hi[0] and lo[1] <= r * s <= hi[1]:
            raise GeometryError("source position lies inside the volume grid")


def _common_args(geometry: ConeBeamGeometry, grid: VolumeGrid):
    lo = grid.lower_corner
    return (
        np.cos(geometry.view_angles),
        np.sin(geometry.view_angles),
        np.ascontiguousarray(geometry.per_view_detector_shift, dtype=np.float64),
        float(geometry.source_to_axis_distance),
        float(geometry.source_to_detector_distance),
        float(geometry.detector_pixel_pitch),
        int(geometry.detector_rows),
        int(geometry.detector_cols),
        float(lo[0]), float(lo[1]), float(lo[2]),
        float(grid.voxel_size),
        int(grid.nx), int(grid.ny), int(grid.nz),
    )


def forward_project_array(values: np.ndarray, geometry: ConeBeamGeometry, grid: VolumeGrid) -> np.ndarray:
    """Array-level ``A f``; ``values`` has shape ``grid.shape``."""
    _check_source_outside(geometry, grid)
    vol = np.ascontiguousarray(values, dtype=np.float64).reshape(-1)
    out = np.empty(geometry.shape, dtype=np.float64)
    _forward_kernel(vol, *_common_args(geometry, grid), out)
    return out


def back_project_array(proj: np.ndarray, geometry: ConeBeamGeometry, grid: VolumeGrid) -> np.ndarray:
    """Array-level ``A^T g``; returns an array of shape ``grid.shape``."""
    proj = np.ascontiguousarray(proj, dtype=np.float64)
    if proj.shape != geometry.shape:
        raise GeometryError(f"projection shape {proj.shape} does not match geometry {geometry.shape}")
    _check_source_outside(geometry, grid)
    nchunks = min(BACKPROJECT_CHUNKS, geometry.n_views)
    bounds = np.linspace(0, geometry.n_views, nchunks + 1).round().astype(np.int64)
    partial = np.zeros((nchunks, grid.size), dtype=np.float64)
    _back_kernel(proj, *_common_args(geometry, grid), bounds, partial)
    out = partial[0].copy()
    for c in range(1, nchunks):
        out += partial[c]
    return out.reshape(grid.shape)


def forward_project(volume: Volume, geometry: ConeBeamGeometry) -> ProjectionStack:
    """Line integrals of ``volume`` along every source-to-pixel ray."""
    return ProjectionStack(
        geometry,
        forward_project_array(volume.values, geometry, volume.grid),
        ProjectionKind.LOG_NORMALIZED,
    )


def back_project(projections: ProjectionStack, geometry: ConeBeamGeometry, grid: VolumeGrid) -> Volume:
    if projections.values.shape != geometry.shape:
        raise GeometryError("projection stack does not match geometry")
    return Volume(grid, back_project_array(projections.values, geometry, grid))


def ray_trace(source, target, grid: VolumeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Flat voxel indices and intersection lengths for one ray (diagnostics and tests)."""
    lo = grid.lower_corner
    cap = grid.nx + grid.ny + grid.nz + 4
    idx = np.empty(cap, dtype=np.int64)
    lengths = np.empty(cap, dtype=np.float64)
    n = _trace(float(source[0]), float(source[1]), float(source[2]),
               float(target[0]), float(target[1]), float(target[2]),
               float(lo[0]), float(lo[1]), float(lo[2]), float(grid.voxel_size),
               grid.nx, grid.ny, grid.nz, idx, lengths)
    return idx[:n].copy(), lengths[:n].copy()


def pixel_rays(geometry: ConeBeamGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Source positions and pixel-centre positions, each shaped ``(views, rows, cols, 3)``."""
    v, r, c = np.meshgrid(
        np.arange(geometry.n_views), np.arange(geometry.detector_rows),
        np.arange(geometry.detector_cols), indexing="ij")
    cos_t = np.cos(geometry.view_angles)[v]
    sin_t = np.sin(geometry.view_angles)[v]
    shifts = geometry.per_view_detector_shift
    sad = geometry.source_to_axis_distance
    back = geometry.source_to_detector_distance - sad
    pitch = geometry.detector_pixel_pitch
    u = ((c + shifts[v, 1]) - (geometry.detector_cols - 1) / 2.0) * pitch
    w = ((r + shifts[v, 0]) - (geometry.detector_rows - 1) / 2.0) * pitch
    src = np.stack([sad * cos_t, sad * sin_t, np.zeros_like(cos_t)], axis=-1)
    pix = np.stack([-back * cos_t - u * sin_t, -back * sin_t + u * cos_t, w], axis=-1)
    return src, pix
