"""Image-quality measures and line profiles."""

from __future__ import annotations

import numpy as np

from .geometry import Volume, VolumeGrid

NRMSE_NORMALIZATION = "l2 norm of the reference over the mask"


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, Volume) else np.asarray(x, dtype=np.float64)


def _mask(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ValueError(f"mask shape {mask.shape} does not match {shape}")
    return mask


def nrmse(x, reference, mask=None) -> float:
    """``||(x - ref)[mask]|| / ||ref[mask]||``; not symmetric in its arguments."""
    x, ref = _values(x), _values(reference)
    if x.shape != ref.shape:
        raise ValueError("volumes differ in shape")
    m = _mask(mask, ref.shape)
    denom = np.linalg.norm(ref[m])
    if denom == 0:
        raise ValueError("reference has zero norm over the mask")
    return float(np.linalg.norm((x - ref)[m]) / denom)


def region_stddev(volume, mask=None) -> float:
    """Population standard deviation over the mask."""
    v = _values(volume)
    m = _mask(mask, v.shape)
    if not m.any():
        raise ValueError("empty region")
    return float(np.std(v[m]))


def cylinder_mask(grid: VolumeGrid, radius: float | None = None, half_height: float | None = None) -> np.ndarray:
    """Voxels inside an upright cylinder about the rotation axis.

    Defaults to the cylinder inscribed in the grid.
    """
    z, y, x = grid.center_coordinates()
    ox, oy, oz = grid.origin
    if radius is None:
        radius = 0.5 * min(grid.nx, grid.ny) * grid.voxel_size
    if half_height is None:
        half_height = 0.5 * grid.nz * grid.voxel_size
    inside = ((x - ox) ** 2 + (y - oy) ** 2 <= radius ** 2) & (np.abs(z - oz) <= half_height)
    return np.broadcast_to(inside, grid.shape).copy()


def default_mask(grid: VolumeGrid, exclude_center=None, exclude_radius: float = 0.0,
                 radius: float | None = None) -> np.ndarray:
    """Inscribed cylinder minus an optional sphere (the kernel region)."""
    m = cylinder_mask(grid, radius)
    if exclude_radius > 0:
        z, y, x = grid.center_coordinates()
        cx, cy, cz = exclude_center if exclude_center is not None else grid.origin
        m &= (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 > exclude_radius ** 2
    return m


def bresenham_3d(start, end) -> list[tuple[int, int, int]]:
    """Integer points on the discrete line from ``start`` to ``end`` inclusive."""
    p = [int(v) for v in start]
    q = [int(v) for v in end]
    d = [abs(b - a) for a, b in zip(p, q)]
    s = [1 if b >= a else -1 for a, b in zip(p, q)]
    driver = int(np.argmax(d))
    others = [i for i in range(3) if i != driver]
    err = [2 * d[i] - d[driver] for i in others]
    points = [tuple(p)]
    for _ in range(d[driver]):
        p[driver] += s[driver]
        for n, i in enumerate(others):
            if err[n] > 0:
                p[i] += s[i]
                err[n] -= 2 * d[driver]
            err[n] += 2 * d[i]
        points.append(tuple(p))
    return points


def extract_line_profile(volume: Volume, start, end) -> list[tuple[float, float]]:
    """Samples along a Bresenham line between voxel indices ``(k, j, i)``.

    Positions are distances in mm from the centre of the ``start`` voxel.
    """
    shape = volume.values.shape
    for idx in (start, end):
        if any(not 0 <= int(a) < n for a, n in zip(idx, shape)):
            raise ValueError(f"index {idx} outside grid {shape}")
    pts = bresenham_3d(start, end)
    origin = np.asarray(pts[0], dtype=np.float64)
    vs = volume.grid.voxel_size
    return [
        (float(np.linalg.norm(np.asarray(pt) - origin) * vs), float(volume.values[pt]))
        for pt in pts
    ]
