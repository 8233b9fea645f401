"""Count-domain preprocessing: impulse suppression, flat-field log, shift correction, weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import ProjectionKind, ProjectionStack

DEFAULT_MEDIAN_WINDOW = 7
DEFAULT_THRESHOLD = 50.0
DEFAULT_CLIP_FLOOR = 50.0
# floor applied to counts inside the log so starved pixels stay finite
COUNT_FLOOR = 0.5


@dataclass(frozen=True)
class WeightSet:
    values: np.ndarray
    threshold_used: float | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "values", values)


def median_filter(image: np.ndarray, window: int = DEFAULT_MEDIAN_WINDOW) -> np.ndarray:
    """2D ``window x window`` median with reflected edges ('symmetric' padding)."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("median_filter expects a 2D image")
    if window < 1 or window % 2 == 0:
        raise ValueError(f"median window must be a positive odd integer, got {window}")
    if window > min(image.shape):
        raise ValueError("median window larger than the image")
    return ndimage.median_filter(image, size=window, mode="reflect")


def median_filter_stack(stack: ProjectionStack, window: int = DEFAULT_MEDIAN_WINDOW) -> ProjectionStack:
    if window == 1:
        return stack
    out = np.stack([median_filter(view, window) for view in stack.values])
    return ProjectionStack(stack.geometry, out, stack.kind)


def normalize_and_log(counts: ProjectionStack, open_beam: ProjectionStack,
                      count_floor: float = COUNT_FLOOR) -> ProjectionStack:
    """``g = ln(open / max(counts, count_floor))``; no sign constraint on ``g``."""
    if counts.values.shape != open_beam.values.shape:
        raise ValueError("counts and open-beam stacks differ in shape")
    if np.any(open_beam.values <= 0):
        raise ValueError("open-beam counts must be strictly positive")
    g = np.log(open_beam.values) - np.log(np.maximum(counts.values, count_floor))
    return ProjectionStack(counts.geometry, g, ProjectionKind.LOG_NORMALIZED)


def translate_image(image: np.ndarray, shift, fill=0.0) -> tuple[np.ndarray, np.ndarray]:
    """Translate by integer ``(drow, dcol)``: ``out[r, c] = image[r - drow, c - dcol]``.

    Returns the translated image and a boolean mask of valid (non-vacated) pixels.
    """
    dr, dc = int(shift[0]), int(shift[1])
    rows, cols = image.shape
    if abs(dr) >= rows or abs(dc) >= cols:
        raise ValueError(f"shift {shift} not smaller than image {image.shape}")
    out = np.full(image.shape, fill, dtype=image.dtype)
    valid = np.zeros(image.shape, dtype=bool)
    dst_r = slice(max(dr, 0), rows + min(dr, 0))
    dst_c = slice(max(dc, 0), cols + min(dc, 0))
    src_r = slice(max(-dr, 0), rows + min(-dr, 0))
    src_c = slice(max(-dc, 0), cols + min(-dc, 0))
    out[dst_r, dst_c] = image[src_r, src_c]
    valid[dst_r, dst_c] = True
    return out, valid


def apply_shift_correction(projections: ProjectionStack, shift_pattern=None) -> tuple[ProjectionStack, np.ndarray]:
    """Undo per-view detector shifts.

    A view acquired with shift ``s`` records at pixel ``p`` what an unshifted
    detector records at ``p + s``, so it is translated by ``+s`` in array
    index terms (the panel is moved back by ``-s``).  The result refers to the
    unshifted geometry.  Vacated pixels are zero-filled and flagged ``False``
    in the returned validity mask.
    """
    geometry = projections.geometry
    shifts = geometry.per_view_detector_shift if shift_pattern is None else np.asarray(shift_pattern)
    if shifts.shape != (geometry.n_views, 2):
        raise ValueError("shift pattern must have one (row, col) pair per view")
    out = np.empty_like(projections.values)
    valid = np.empty(projections.values.shape, dtype=bool)
    for v in range(geometry.n_views):
        out[v], valid[v] = translate_image(projections.values[v], shifts[v])
    return ProjectionStack(geometry.without_shifts(), out, projections.kind), valid


def weights_from_counts(counts: ProjectionStack) -> WeightSet:
    """``W_ii = lambda_i``: the noise weight equals the raw count."""
    if counts.kind is not ProjectionKind.COUNTS:
        raise ValueError("weights are derived from count data")
    if np.any(counts.values < 0):
        raise ValueError("negative counts")
    return WeightSet(counts.values.copy(), None)


def threshold_weights(weights: WeightSet, threshold: float = DEFAULT_THRESHOLD) -> WeightSet:
    """Zero every weight whose count is below ``threshold``; counts equal to it are kept."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    vals = np.where(weights.values >= threshold, weights.values, 0.0)
    return WeightSet(vals, float(threshold))


def clip_counts(counts: ProjectionStack, floor: float = DEFAULT_CLIP_FLOOR) -> ProjectionStack:
    if floor <= 0:
        raise ValueError("clip floor must be positive")
    return ProjectionStack(counts.geometry, np.maximum(counts.values, floor), counts.kind)


@dataclass(frozen=True)
class Preprocessed:
    """Log data and weights on the shift-corrected (unshifted) geometry."""

    g: ProjectionStack
    weights: WeightSet
    valid: np.ndarray


def preprocess(counts: ProjectionStack, open_beam: ProjectionStack, *,
               median_window: int = DEFAULT_MEDIAN_WINDOW,
               clip_floor: float | None = None,
               threshold: float | None = None) -> Preprocessed:
    """Full chain: median (counts) -> [clip] -> normalize/log -> shift correction -> weights -> [threshold].

    ``clip_floor`` is the FDK treatment and acts on the filtered counts before
    the log; ``threshold`` is the MBIR treatment and acts on the weights.  The
    weights are the filtered, unclipped counts, moved onto the corrected
    detector grid; vacated pixels get weight zero.
    """
    counts_f = median_filter_stack(counts, median_window)
    open_f = median_filter_stack(open_beam, median_window)
    for_log = clip_counts(counts_f, clip_floor) if clip_floor is not None else counts_f
    g, valid = apply_shift_correction(normalize_and_log(for_log, open_f))
    w_counts, _ = apply_shift_correction(counts_f)
    weights = weights_from_counts(w_counts)
    weights = WeightSet(np.where(valid, weights.values, 0.0))
    if threshold is not None:
        weights = threshold_weights(weights, threshold)
    return Preprocessed(g, weights, valid)
