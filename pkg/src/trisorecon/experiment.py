"""Declarative experiment configuration and the four compared reconstruction pipelines."""

from __future__ import annotations

import copy
import csv
import io as _io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .fdk import FdkParams, FilterKind, fdk_reconstruct
from .geometry import ConeBeamGeometry, ProjectionStack, Volume, VolumeGrid
from .mbir import CostRecord, PriorParams, SolverParams, ogm_reconstruct
from .metrics import NRMSE_NORMALIZATION, default_mask, nrmse, region_stddev
from .phantom import TrisoPhantomSpec, rasterize_phantom, shell_mask
from .preproc import (
    DEFAULT_CLIP_FLOOR,
    DEFAULT_MEDIAN_WINDOW,
    DEFAULT_THRESHOLD,
    preprocess,
)
from .scan_sim import AcquisitionParams, simulate_counts, simulate_open_beam

logger = logging.getLogger(__name__)

METHODS = ("fdk-naive", "fdk-clipped", "mbir-plain", "mbir-thresholded")
METRICS_HEADER = ["experiment_id", "method", "n_views", "reference", "nrmse", "region_stddev"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment_id: str
    phantom_path: Path
    geometry_path: Path
    acquisition_path: Path
    grid: VolumeGrid
    median_window: int = DEFAULT_MEDIAN_WINDOW
    threshold: float = DEFAULT_THRESHOLD
    clip_floor: float = DEFAULT_CLIP_FLOOR
    filter_kind: FilterKind = FilterKind.RAM_LAK
    prior: PriorParams | None = None
    solver: SolverParams = field(default_factory=SolverParams)
    subsampling: tuple[int, ...] = (1, 2, 4, 8)
    output_dir: Path = Path("out")
    seed: int | None = None
    cladding_shell: int = 1
    kernel_margin: float = 0.0
    cladding_margin: float | None = None
    source: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        path = Path(path)
        try:
            raw = io.read_json(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw, base=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base: Path = Path(".")) -> ExperimentConfig:
        def resolve(key):
            if key not in raw:
                raise ConfigError(f"config is missing '{key}'")
            p = Path(raw[key])
            p = p if p.is_absolute() else (base / p)
            if not p.exists():
                raise ConfigError(f"{key} does not exist: {p}")
            return p.resolve()

        try:
            pre = raw.get("preprocessing", {})
            mbir = raw.get("mbir", {})
            out = Path(raw.get("output_dir", "out"))
            cfg = cls(
                experiment_id=str(raw.get("experiment_id", "experiment")),
                phantom_path=resolve("phantom"),
                geometry_path=resolve("geometry"),
                acquisition_path=resolve("acquisition"),
                grid=VolumeGrid.from_dict(raw["grid"]),
                median_window=int(pre.get("median_window", DEFAULT_MEDIAN_WINDOW)),
                threshold=float(pre.get("threshold", DEFAULT_THRESHOLD)),
                clip_floor=float(pre.get("clip_floor", DEFAULT_CLIP_FLOOR)),
                filter_kind=FilterKind(raw.get("fdk", {}).get("filter_kind", "ram-lak")),
                prior=PriorParams.from_dict(mbir["prior"]) if "prior" in mbir else None,
                solver=SolverParams.from_dict(mbir.get("solver", {})),
                subsampling=tuple(int(s) for s in raw.get("subsampling", (1, 2, 4, 8))),
                output_dir=out if out.is_absolute() else (base / out),
                seed=raw.get("seed"),
                cladding_shell=int(raw.get("metrics", {}).get("cladding_shell", 1)),
                kernel_margin=float(raw.get("metrics", {}).get("kernel_margin", 0.0)),
                cladding_margin=raw.get("metrics", {}).get("cladding_margin"),
                source=copy.deepcopy(raw),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        if cfg.median_window < 1 or cfg.median_window % 2 == 0:
            raise ConfigError("median_window must be a positive odd integer")
        if any(s < 1 for s in cfg.subsampling):
            raise ConfigError("subsampling factors must be positive integers")
        return cfg

    def phantom_spec(self) -> TrisoPhantomSpec:
        try:
            return TrisoPhantomSpec.from_dict(io.read_json(self.phantom_path))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid phantom spec: {exc}") from exc

    def geometry(self) -> ConeBeamGeometry:
        try:
            return io.load_geometry(self.geometry_path)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid geometry: {exc}") from exc

    def acquisition(self) -> AcquisitionParams:
        try:
            params = AcquisitionParams.from_dict(io.read_json(self.acquisition_path))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid acquisition params: {exc}") from exc
        if self.seed is not None:
            params = AcquisitionParams(**{**params.__dict__, "rng_seed": int(self.seed)})
        return params

    def _cladding_margin(self) -> float:
        return self.grid.voxel_size if self.cladding_margin is None else float(self.cladding_margin)

    def prior_params(self) -> PriorParams:
        if self.prior is not None:
            return self.prior
        spec = self.phantom_spec()
        mus = [s.attenuation for s in spec.shells] + [spec.background_attenuation]
        return PriorParams.from_dynamic_range(max(mus) - min(mus))

    def resolved(self) -> dict:
        """Fully resolved configuration, echoed next to every output."""
        return {
            "experiment_id": self.experiment_id,
            "phantom": io.read_json(self.phantom_path),
            "geometry": io.read_json(self.geometry_path),
            "acquisition": self.acquisition().to_dict(),
            "grid": self.grid.to_dict(),
            "preprocessing": {"median_window": self.median_window, "threshold": self.threshold,
                              "clip_floor": self.clip_floor},
            "fdk": {"filter_kind": self.filter_kind.value},
            "mbir": {"prior": self.prior_params().to_dict(), "solver": self.solver.to_dict()},
            "subsampling": list(self.subsampling),
            "view_subset_rule": "even stride starting at view 0",
            "nrmse_normalization": NRMSE_NORMALIZATION,
            "metrics": {"cladding_shell": self.cladding_shell, "kernel_margin": self.kernel_margin,
                        "cladding_margin": self._cladding_margin()},
        }


# ---------------------------------------------------------------- pipelines


def view_subset(n_views: int, factor: int) -> np.ndarray:
    """Every ``factor``-th view starting at 0; the factor must divide ``n_views``."""
    if factor < 1 or n_views % factor != 0:
        raise ConfigError(f"subsampling factor {factor} does not divide {n_views} views")
    return np.arange(0, n_views, factor)


@dataclass
class Reconstruction:
    method: str
    volume: Volume
    n_views: int
    cost_trace: list[CostRecord] = field(default_factory=list)


def reconstruct(method: str, counts: ProjectionStack, open_beam: ProjectionStack,
                cfg: ExperimentConfig, f0: Volume | None = None,
                threshold: float | None = None) -> Reconstruction:
    """Run one of :data:`METHODS` from raw counts to a volume.

    fdk-naive: median, log, shift, FDK.  fdk-clipped: counts clipped to
    ``clip_floor`` before the log.  mbir-plain: weights equal the counts.
    mbir-thresholded: weights below ``threshold`` zeroed.  Both MBIR variants
    start from the fdk-clipped volume unless ``solver.init == 'zero'`` or an
    explicit ``f0`` is given.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method '{method}', expected one of {METHODS}")
    fdk_params = FdkParams(cfg.grid, cfg.filter_kind)
    n_views = counts.geometry.n_views

    if method.startswith("fdk"):
        clip = cfg.clip_floor if method == "fdk-clipped" else None
        pre = preprocess(counts, open_beam, median_window=cfg.median_window, clip_floor=clip)
        return Reconstruction(method, fdk_reconstruct(pre.g, pre.g.geometry, fdk_params), n_views)

    if f0 is None and cfg.solver.init == "fdk":
        f0 = reconstruct("fdk-clipped", counts, open_beam, cfg).volume
    if method == "mbir-thresholded":
        thr = cfg.threshold if threshold is None else threshold
    else:
        thr = None
    pre = preprocess(counts, open_beam, median_window=cfg.median_window, threshold=thr)
    vol, trace = ogm_reconstruct(pre.g, pre.weights, pre.g.geometry, cfg.grid,
                                 cfg.prior_params(), cfg.solver, f0=f0)
    return Reconstruction(method, vol, n_views, trace)


@dataclass
class Scan:
    truth: Volume
    counts: ProjectionStack
    open_beam: ProjectionStack


def simulate_scan(cfg: ExperimentConfig) -> Scan:
    truth = rasterize_phantom(cfg.phantom_spec(), cfg.grid)
    geometry = cfg.geometry()
    params = cfg.acquisition()
    return Scan(truth, simulate_counts(truth, geometry, params), simulate_open_beam(geometry, params))


def metric_masks(cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    """(NRMSE mask, uniform-cladding mask) for the configured phantom and grid."""
    spec = cfg.phantom_spec()
    vs = cfg.grid.voxel_size
    nrmse_mask = default_mask(cfg.grid, spec.center, spec.kernel_radius + cfg.kernel_margin,
                              radius=spec.outer_radius + 2 * vs)
    clad = shell_mask(spec, cfg.grid, cfg.cladding_shell, margin=cfg._cladding_margin())
    if not clad.any():
        raise ConfigError(f"cladding shell {cfg.cladding_shell} holds no voxels after the margin; "
                          "refine the grid or reduce metrics.cladding_margin")
    return nrmse_mask, clad


def metrics_csv(rows: list[dict]) -> str:
    buf = _io.StringIO()
    buf.write(f"# nrmse normalization: {NRMSE_NORMALIZATION}\n")
    writer = csv.DictWriter(buf, fieldnames=METRICS_HEADER, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def cost_trace_csv(trace: list[CostRecord]) -> str:
    lines = ["iteration,data_cost,prior_cost,total_cost"]
    for r in trace:
        lines.append(f"{r.iteration},{r.data_cost:.12g},{r.prior_cost:.12g},{r.total_cost:.12g}")
    return "\n".join(lines) + "\n"


def profile_csv(profile) -> str:
    lines = ["position_mm,value"]
    lines += [f"{pos:.9g},{val:.9g}" for pos, val in profile]
    return "\n".join(lines) + "\n"
