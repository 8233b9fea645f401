"""Feldkamp-Davis-Kress reconstruction for full circular scans."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numba
import numpy as np

from .geometry import ConeBeamGeometry, ProjectionKind, ProjectionStack, Volume, VolumeGrid


class FilterKind(str, Enum):
    RAM_LAK = "ram-lak"
    HANN = "hann-apodized"


@dataclass(frozen=True)
class FdkParams:
    grid: VolumeGrid
    filter_kind: FilterKind = FilterKind.RAM_LAK
    short_scan_weighting: bool = False

    def __post_init__(self):
        object.__setattr__(self, "filter_kind", FilterKind(self.filter_kind))

    def to_dict(self) -> dict:
        return {
            "filter_kind": self.filter_kind.value,
            "short_scan_weighting": self.short_scan_weighting,
            "grid": self.grid.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> FdkParams:
        return cls(
            grid=VolumeGrid.from_dict(d["grid"]),
            filter_kind=FilterKind(d.get("filter_kind", "ram-lak")),
            short_scan_weighting=bool(d.get("short_scan_weighting", False)),
        )


def ramp_kernel_response(n_pad: int, spacing: float, kind: FilterKind = FilterKind.RAM_LAK) -> np.ndarray:
    """Frequency response of the band-limited spatial Ram-Lak kernel (times ``spacing``).

    Built from ``h[0] = 1/(4 s^2)``, ``h[n odd] = -1/(pi n s)^2``, ``h[n even] = 0``
    so the zero-frequency gain is exactly the kernel sum rather than a forced 0.
    """
    n = np.arange(n_pad)
    n = np.where(n <= n_pad // 2, n, n - n_pad)
    h = np.zeros(n_pad)
    h[0] = 1.0 / (4.0 * spacing ** 2)
    odd = (n % 2) != 0
    h[odd] = -1.0 / (np.pi * n[odd] * spacing) ** 2
    response = np.real(np.fft.fft(h)) * spacing
    if FilterKind(kind) is FilterKind.HANN:
        freq = np.fft.fftfreq(n_pad)
        response = response * 0.5 * (1.0 + np.cos(2.0 * np.pi * freq))
    return response


def _padded_length(ncols: int) -> int:
    return int(2 ** np.ceil(np.log2(max(2 * ncols, 2))))


def filter_projections(g: np.ndarray, geometry: ConeBeamGeometry, kind: FilterKind = FilterKind.RAM_LAK) -> np.ndarray:
    """Cosine pre-weighting and row-wise ramp filtering on the isocentre-scaled detector."""
    sad = geometry.source_to_axis_distance
    pitch_iso = geometry.detector_pixel_pitch / geometry.magnification
    nrows, ncols = geometry.detector_rows, geometry.detector_cols
    shifts = geometry.per_view_detector_shift

    weighted = np.empty_like(g, dtype=np.float64)
    for v in range(geometry.n_views):
        u = ((np.arange(ncols) + shifts[v, 1]) - (ncols - 1) / 2.0) * pitch_iso
        w = ((np.arange(nrows) + shifts[v, 0]) - (nrows - 1) / 2.0) * pitch_iso
        cosine = sad / np.sqrt(sad ** 2 + u[None, :] ** 2 + w[:, None] ** 2)
        weighted[v] = g[v] * cosine

    n_pad = _padded_length(ncols)
    response = ramp_kernel_response(n_pad, pitch_iso, kind)
    spectrum = np.fft.fft(weighted, n=n_pad, axis=-1)
    return np.real(np.fft.ifft(spectrum * response, axis=-1))[..., :ncols]


@numba.njit(cache=True, parallel=True)
def _fdk_backproject(q, cos_t, sin_t, shifts, sad, sdd, pitch, xs, ys, zs, r_fov, dtheta, out):
    nviews, nrows, ncols = q.shape
    nz = zs.shape[0]
    ny = ys.shape[0]
    nx = xs.shape[0]
    cc = (ncols - 1) / 2.0
    rc = (nrows - 1) / 2.0
    for k in numba.prange(nz):
        z = zs[k]
        for j in range(ny):
            y = ys[j]
            for i in range(nx):
                x = xs[i]
                if x * x + y * y > r_fov * r_fov:
                    out[k, j, i] = 0.0
                    continue
                acc = 0.0
                for v in range(nviews):
                    c = cos_t[v]
                    s = sin_t[v]
                    dist = sad - (x * c + y * s)
                    mag = sdd / dist
                    ucol = (-x * s + y * c) * mag / pitch + cc - shifts[v, 1]
                    vrow = z * mag / pitch + rc - shifts[v, 0]
                    c0 = int(np.floor(ucol))
                    r0 = int(np.floor(vrow))
                    if c0 < -1 or c0 >= ncols or r0 < -1 or r0 >= nrows:
                        continue
                    fu = ucol - c0
                    fv = vrow - r0
                    val = 0.0
                    if r0 >= 0:
                        if c0 >= 0:
                            val += (1 - fv) * (1 - fu) * q[v, r0, c0]
                        if c0 + 1 < ncols:
                            val += (1 - fv) * fu * q[v, r0, c0 + 1]
                    if r0 + 1 < nrows:
                        if c0 >= 0:
                            val += fv * (1 - fu) * q[v, r0 + 1, c0]
                        if c0 + 1 < ncols:
                            val += fv * fu * q[v, r0 + 1, c0 + 1]
                    w = sad / dist
                    acc += w * w * val
                out[k, j, i] = 0.5 * dtheta * acc


def scanned_radius(geometry: ConeBeamGeometry) -> float:
    """Radius of the cylinder seen by every view (in-plane field of view)."""
    half_width = 0.5 * geometry.detector_cols * geometry.detector_pixel_pitch
    half_width -= np.max(np.abs(geometry.per_view_detector_shift[:, 1])) * geometry.detector_pixel_pitch
    return float(geometry.source_to_axis_distance * np.sin(np.arctan2(half_width, geometry.source_to_detector_distance)))


def fdk_reconstruct(projections: ProjectionStack, geometry: ConeBeamGeometry, params: FdkParams) -> Volume:
    """Cosine weighting, ramp filtering along rows, distance-weighted backprojection."""
    if projections.kind is not ProjectionKind.LOG_NORMALIZED:
        raise ValueError("FDK expects log-normalized projections")
    if projections.values.shape != geometry.shape:
        raise ValueError("projection stack does not match geometry")
    if params.short_scan_weighting:
        raise NotImplementedError("short-scan weighting is not implemented; use a full 2*pi scan")
    n = geometry.n_views
    if n < 2:
        raise ValueError("FDK needs at least two views")
    step = 2 * np.pi / n
    expected = geometry.view_angles[0] + step * np.arange(n)
    if not np.allclose(geometry.view_angles, expected, rtol=0, atol=1e-9):
        raise ValueError("FDK requires uniformly spaced views covering a full turn")

    q = filter_projections(np.asarray(projections.values, dtype=np.float64), geometry, params.filter_kind)
    grid = params.grid
    xs, ys, zs = grid.axis_centers()
    out = np.empty(grid.shape)
    _fdk_backproject(
        np.ascontiguousarray(q), np.cos(geometry.view_angles), np.sin(geometry.view_angles),
        geometry.per_view_detector_shift.astype(np.float64),
        float(geometry.source_to_axis_distance), float(geometry.source_to_detector_distance),
        float(geometry.detector_pixel_pitch), xs, ys, zs, scanned_radius(geometry), step, out)
    return Volume(grid, out)
