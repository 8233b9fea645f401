"""Acquisition geometry and the value types shared by every stage.

Axis and memory conventions (used everywhere in the package):

* The rotation axis is ``z``.  For view angle ``theta`` the source sits at
  ``R * (cos theta, sin theta, 0)`` and the detector centre at
  ``-(D - R) * (cos theta, sin theta, 0)``, with ``R`` the source-to-axis and
  ``D`` the source-to-detector distance.
* Detector columns run along ``(-sin theta, cos theta, 0)``, detector rows
  along ``+z``.  Pixel ``(row, col)`` of a view with shift ``(sr, sc)`` has its
  centre at column coordinate ``((col + sc) - (ncols - 1) / 2) * pitch`` and
  row coordinate ``((row + sr) - (nrows - 1) / 2) * pitch``.
* Volume arrays have shape ``(nz, ny, nx)`` in C order, so ``x`` varies
  fastest.  Voxel ``(k, j, i)`` is centred at
  ``origin + ((i, j, k) - (n - 1) / 2) * voxel_size``.
* Projection arrays have shape ``(n_views, detector_rows, detector_cols)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np


class GeometryError(ValueError):
    """Raised for an invalid or inconsistent acquisition geometry."""


class ProjectionKind(str, Enum):
    COUNTS = "counts"
    LOG_NORMALIZED = "log_normalized"


@dataclass(frozen=True)
class ConeBeamGeometry:
    source_to_axis_distance: float
    source_to_detector_distance: float
    detector_rows: int
    detector_cols: int
    detector_pixel_pitch: float
    view_angles: np.ndarray
    per_view_detector_shift: np.ndarray | None = None

    def __post_init__(self):
        angles = np.asarray(self.view_angles, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "view_angles", angles)
        if self.per_view_detector_shift is None:
            shifts = np.zeros((angles.size, 2), dtype=np.int64)
        else:
            shifts = np.asarray(self.per_view_detector_shift)
            if shifts.shape != (angles.size, 2):
                raise GeometryError(
                    f"per_view_detector_shift must have shape ({angles.size}, 2), got {shifts.shape}"
                )
            if not np.all(shifts == np.round(shifts)):
                raise GeometryError("detector shifts must be whole pixels")
            shifts = shifts.astype(np.int64)
        object.__setattr__(self, "per_view_detector_shift", shifts)

        if not 0 < self.source_to_axis_distance < self.source_to_detector_distance:
            raise GeometryError(
                "need 0 < source_to_axis_distance < source_to_detector_distance"
            )
        if self.detector_rows < 1 or self.detector_cols < 1:
            raise GeometryError("detector must have at least one row and column")
        if self.detector_pixel_pitch <= 0:
            raise GeometryError("detector_pixel_pitch must be positive")
        if angles.size == 0:
            raise GeometryError("at least one view angle is required")
        if np.any(angles < 0) or np.any(angles >= 2 * np.pi):
            raise GeometryError("view angles must lie in [0, 2*pi)")
        if np.any(np.diff(angles) <= 0):
            raise GeometryError("view angles must be strictly increasing")

    @property
    def n_views(self) -> int:
        return self.view_angles.size

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_views, self.detector_rows, self.detector_cols)

    @property
    def magnification(self) -> float:
        return self.source_to_detector_distance / self.source_to_axis_distance

    def has_shifts(self) -> bool:
        return bool(np.any(self.per_view_detector_shift))

    def without_shifts(self) -> ConeBeamGeometry:
        return replace(self, per_view_detector_shift=None)

    def with_shifts(self, shifts) -> ConeBeamGeometry:
        return replace(self, per_view_detector_shift=np.asarray(shifts))

    def subset(self, indices) -> ConeBeamGeometry:
        """Geometry restricted to the given view indices (kept in order)."""
        idx = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            view_angles=self.view_angles[idx],
            per_view_detector_shift=self.per_view_detector_shift[idx],
        )

    def to_dict(self) -> dict:
        return {
            "source_to_axis_distance": float(self.source_to_axis_distance),
            "source_to_detector_distance": float(self.source_to_detector_distance),
            "detector_rows": int(self.detector_rows),
            "detector_cols": int(self.detector_cols),
            "detector_pixel_pitch": float(self.detector_pixel_pitch),
            "view_angles": [float(a) for a in self.view_angles],
            "per_view_detector_shift": self.per_view_detector_shift.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ConeBeamGeometry:
        return cls(
            source_to_axis_distance=float(d["source_to_axis_distance"]),
            source_to_detector_distance=float(d["source_to_detector_distance"]),
            detector_rows=int(d["detector_rows"]),
            detector_cols=int(d["detector_cols"]),
            detector_pixel_pitch=float(d["detector_pixel_pitch"]),
            view_angles=np.asarray(d["view_angles"], dtype=np.float64),
            per_view_detector_shift=d.get("per_view_detector_shift"),
        )


def circular_angles(n_views: int) -> np.ndarray:
    """``n_views`` equally spaced angles over a full turn, starting at 0."""
    return 2 * np.pi * np.arange(n_views) / n_views


@dataclass(frozen=True)
class VolumeGrid:
    nx: int
    ny: int
    nz: int
    voxel_size: float
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise GeometryError("grid dimensions must be >= 1")
        if self.voxel_size <= 0:
            raise GeometryError("voxel_size must be positive")
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nz, self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def lower_corner(self) -> np.ndarray:
        n = np.array([self.nx, self.ny, self.nz], dtype=np.float64)
        return np.asarray(self.origin) - 0.5 * n * self.voxel_size

    @property
    def upper_corner(self) -> np.ndarray:
        n = np.array([self.nx, self.ny, self.nz], dtype=np.float64)
        return np.asarray(self.origin) + 0.5 * n * self.voxel_size

    def axis_centers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Voxel-centre coordinates along x, y and z."""
        out = []
        for n, o in zip((self.nx, self.ny, self.nz), self.origin):
            out.append(o + (np.arange(n) - (n - 1) / 2.0) * self.voxel_size)
        return tuple(out)

    def center_coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable ``(z, y, x)`` coordinate arrays matching the volume shape."""
        x, y, z = self.axis_centers()
        return z[:, None, None], y[None, :, None], x[None, None, :]

    def contains_point(self, p) -> bool:
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p >= self.lower_corner) and np.all(p <= self.upper_corner))

    def to_dict(self) -> dict:
        return {
            "nx": self.nx,
            "ny": self.ny,
            "nz": self.nz,
            "voxel_size": float(self.voxel_size),
            "origin": list(self.origin),
        }

    @classmethod
    def from_dict(cls, d: dict) -> VolumeGrid:
        return cls(
            nx=int(d["nx"]),
            ny=int(d["ny"]),
            nz=int(d["nz"]),
            voxel_size=float(d["voxel_size"]),
            origin=tuple(d.get("origin", (0.0, 0.0, 0.0))),
        )


@dataclass(frozen=True)
class Volume:
    """Attenuation values (1/mm) on a :class:`VolumeGrid`, shape ``(nz, ny, nx)``."""

    grid: VolumeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.size != self.grid.size:
            raise GeometryError(
                f"volume has {values.size} values, grid expects {self.grid.size}"
            )
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("volume values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: VolumeGrid) -> Volume:
        return cls(grid, np.zeros(grid.shape))


@dataclass(frozen=True)
class ProjectionStack:
    geometry: ConeBeamGeometry
    values: np.ndarray = field(repr=False)
    kind: ProjectionKind = ProjectionKind.LOG_NORMALIZED

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != self.geometry.shape:
            raise GeometryError(
                f"projection shape {values.shape} does not match geometry {self.geometry.shape}"
            )
        kind = ProjectionKind(self.kind)
        if kind is ProjectionKind.COUNTS and np.any(values < 0):
            raise ValueError("count projections must be nonnegative")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", kind)

    def subset(self, indices) -> ProjectionStack:
        idx = np.asarray(indices, dtype=np.int64)
        return ProjectionStack(self.geometry.subset(idx), self.values[idx], self.kind)
