"""Raw little-endian float32 files with JSON sidecars, plus JSON config helpers.

``name.raw`` holds the samples, ``name.json`` describes them::

    {"shape": [...], "order": "C", "dtype": "<f4", "units": "...", "kind": "...", ...}
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import ConeBeamGeometry, ProjectionKind, ProjectionStack, Volume, VolumeGrid
from .preproc import WeightSet

RAW_DTYPE = "<f4"


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".raw", ".json") else path
    return stem.with_suffix(".raw"), stem.with_suffix(".json")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_raw(path, array: np.ndarray, **meta) -> Path:
    raw_path, side_path = _paths(path)
    raw_path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(array, dtype=RAW_DTYPE)
    raw_path.write_bytes(data.tobytes(order="C"))
    sidecar = {"shape": list(data.shape), "order": "C", "dtype": RAW_DTYPE}
    sidecar.update(meta)
    write_json(side_path, sidecar)
    return raw_path


def read_raw(path) -> tuple[np.ndarray, dict]:
    raw_path, side_path = _paths(path)
    meta = read_json(side_path)
    data = np.frombuffer(raw_path.read_bytes(), dtype=meta.get("dtype", RAW_DTYPE))
    return data.reshape(meta["shape"]).astype(np.float64), meta


def save_volume(path, volume: Volume, **extra) -> Path:
    return write_raw(path, volume.values, kind="volume", units="1/mm",
                     axes=["z", "y", "x"], grid=volume.grid.to_dict(), **extra)


def load_volume(path) -> Volume:
    data, meta = read_raw(path)
    return Volume(VolumeGrid.from_dict(meta["grid"]), data)


def save_projections(path, stack: ProjectionStack, **extra) -> Path:
    units = "counts" if stack.kind is ProjectionKind.COUNTS else "dimensionless"
    return write_raw(path, stack.values, kind=stack.kind.value, units=units,
                     axes=["view", "row", "col"], geometry=stack.geometry.to_dict(), **extra)


def load_projections(path) -> ProjectionStack:
    data, meta = read_raw(path)
    return ProjectionStack(ConeBeamGeometry.from_dict(meta["geometry"]), data, ProjectionKind(meta["kind"]))


def save_weights(path, weights, geometry: ConeBeamGeometry) -> Path:
    return write_raw(path, weights.values, kind="weights", units="counts",
                     axes=["view", "row", "col"], threshold_used=weights.threshold_used,
                     geometry=geometry.to_dict())


def load_weights(path) -> WeightSet:
    data, meta = read_raw(path)
    return WeightSet(data, meta.get("threshold_used"))


def load_geometry(path) -> ConeBeamGeometry:
    return ConeBeamGeometry.from_dict(read_json(path))


def save_geometry(path, geometry: ConeBeamGeometry) -> None:
    write_json(path, geometry.to_dict())
