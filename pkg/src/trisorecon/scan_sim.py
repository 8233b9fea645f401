"""Monochromatic count simulation: Beer-Lambert, Poisson noise, detector strikes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ConeBeamGeometry, ProjectionKind, ProjectionStack, Volume
from .projector import forward_project_array

# Stream tags mixed into the seed so sample and open-beam noise never share draws.
SAMPLE_STREAM = 0
OPEN_BEAM_STREAM = 1


@dataclass(frozen=True)
class AcquisitionParams:
    incident_counts: float
    rng_seed: int = 0
    impulse_rate: float = 0.0
    impulse_amplitude: float = 0.0
    enable_poisson: bool = True
    shift_pattern: np.ndarray | None = None

    def __post_init__(self):
        if self.incident_counts <= 0:
            raise ValueError("incident_counts must be positive")
        if not 0 <= self.impulse_rate < 1:
            raise ValueError("impulse_rate must lie in [0, 1)")
        if self.shift_pattern is not None:
            object.__setattr__(self, "shift_pattern", np.asarray(self.shift_pattern, dtype=np.int64))

    def to_dict(self) -> dict:
        return {
            "incident_counts": float(self.incident_counts),
            "rng_seed": int(self.rng_seed),
            "impulse_rate": float(self.impulse_rate),
            "impulse_amplitude": float(self.impulse_amplitude),
            "enable_poisson": bool(self.enable_poisson),
            "shift_pattern": None if self.shift_pattern is None else self.shift_pattern.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> AcquisitionParams:
        return cls(
            incident_counts=float(d["incident_counts"]),
            rng_seed=int(d.get("rng_seed", 0)),
            impulse_rate=float(d.get("impulse_rate", 0.0)),
            impulse_amplitude=float(d.get("impulse_amplitude", 0.0)),
            enable_poisson=bool(d.get("enable_poisson", True)),
            shift_pattern=d.get("shift_pattern"),
        )


def alternating_shift_pattern(n_views: int, max_shift: int = 2, seed: int = 0) -> np.ndarray:
    """Seeded integer per-view (row, col) detector offsets in ``[-max_shift, max_shift]``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    return rng.integers(-max_shift, max_shift + 1, size=(n_views, 2))


def _acquisition_geometry(geometry: ConeBeamGeometry, params: AcquisitionParams) -> ConeBeamGeometry:
    if params.shift_pattern is None:
        return geometry
    return geometry.with_shifts(params.shift_pattern)


def _apply_noise(expected: np.ndarray, params: AcquisitionParams, stream: int) -> np.ndarray:
    # one child stream per view keeps draws tied to (seed, stream, view, pixel)
    children = np.random.SeedSequence([params.rng_seed, stream]).spawn(expected.shape[0])
    out = np.empty_like(expected)
    for v, child in enumerate(children):
        rng = np.random.default_rng(child)
        lam = expected[v]
        counts = rng.poisson(lam).astype(np.float64) if params.enable_poisson else lam.copy()
        if params.impulse_rate > 0:
            hit = rng.random(lam.shape) < params.impulse_rate
            counts[hit] += params.impulse_amplitude
        out[v] = counts
    return out


def expected_counts(volume: Volume, geometry: ConeBeamGeometry, incident_counts: float) -> np.ndarray:
    return incident_counts * np.exp(-forward_project_array(volume.values, geometry, volume.grid))


def simulate_counts(volume: Volume, geometry: ConeBeamGeometry, params: AcquisitionParams) -> ProjectionStack:
    """Raw detector counts for ``volume``.

    ``params.shift_pattern`` (when given) replaces the geometry's detector
    shifts; the returned stack carries the shifted acquisition geometry.
    Poisson draws use numpy's exact sampler at every rate, so no Gaussian
    approximation threshold applies.
    """
    acq = _acquisition_geometry(geometry, params)
    lam = expected_counts(volume, acq, params.incident_counts)
    return ProjectionStack(acq, _apply_noise(lam, params, SAMPLE_STREAM), ProjectionKind.COUNTS)


def simulate_open_beam(geometry: ConeBeamGeometry, params: AcquisitionParams) -> ProjectionStack:
    acq = _acquisition_geometry(geometry, params)
    lam = np.full(acq.shape, float(params.incident_counts))
    return ProjectionStack(acq, _apply_noise(lam, params, OPEN_BEAM_STREAM), ProjectionKind.COUNTS)
