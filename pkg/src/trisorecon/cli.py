"""Command-line driver: ``trisorecon VERB --config experiment.json``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import logging
import os
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import io
from .experiment import (
    METHODS,
    ConfigError,
    ExperimentConfig,
    cost_trace_csv,
    metric_masks,
    metrics_csv,
    profile_csv,
    reconstruct,
    simulate_scan,
    view_subset,
)
from .geometry import ProjectionStack, Volume
from .mbir import NumericalError
from .metrics import extract_line_profile, nrmse, region_stddev
from .phantom import PhantomError, rasterize_phantom

logger = logging.getLogger("trisorecon")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
THREADS_ENV = "TRISORECON_THREADS"
SWEEP_METHODS = ("fdk-clipped", "mbir-thresholded")


def _set_threads(threads: int | None) -> None:
    import numba

    if threads is None and os.environ.get(THREADS_ENV):
        threads = int(os.environ[THREADS_ENV])
    if threads is not None:
        numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))


class Context:
    def __init__(self, config: Path, seed: int | None, out: Path | None):
        self.cfg = ExperimentConfig.load(config)
        if seed is not None:
            self.cfg.seed = seed
        if out is not None:
            self.cfg.output_dir = Path(out)
        self.out = Path(self.cfg.output_dir)

    def directory(self, *parts: str) -> Path:
        d = self.out.joinpath(*parts)
        d.mkdir(parents=True, exist_ok=True)
        io.write_json(d / "resolved_config.json", self.cfg.resolved())
        return d


def _run(fn):
    """Map library errors to the documented exit codes."""
    try:
        fn()
    except (ConfigError, PhantomError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)


def _window(cfg: ExperimentConfig) -> tuple[float, float]:
    """Display window spanning background to twice the brightest coating layer."""
    spec = cfg.phantom_spec()
    coat = max(s.attenuation for s in spec.shells[1:]) if len(spec.shells) > 1 else spec.shells[0].attenuation
    return min(0.0, spec.background_attenuation), 2.0 * coat


def _write_png(path: Path, image: np.ndarray, window: tuple[float, float]) -> None:
    lo, hi = window
    scaled = np.clip((image - lo) / (hi - lo), 0.0, 1.0)
    Image.fromarray(np.round(scaled * 255).astype(np.uint8)).save(path, optimize=False)


def _save_volume(d: Path, name: str, volume: Volume, cfg: ExperimentConfig, **meta) -> None:
    window = _window(cfg)
    io.save_volume(d / name, volume, png_window=list(window), **meta)
    nz, ny, nx = volume.values.shape
    _write_png(d / f"{name}_axial.png", volume.values[nz // 2], window)
    _write_png(d / f"{name}_coronal.png", volume.values[:, ny // 2, :], window)


def _central_profile(volume: Volume):
    nz, ny, nx = volume.values.shape
    return extract_line_profile(volume, (nz // 2, ny // 2, 0), (nz // 2, ny // 2, nx - 1))


def _load_or_simulate(ctx: Context):
    """Counts and open beam from ``<out>/scan`` if present, otherwise freshly simulated."""
    d = ctx.out / "scan"
    if ((d / "counts.raw").exists() and (d / "open_beam.raw").exists()
            and io.read_json(d / "counts.json").get("seed") == ctx.cfg.acquisition().rng_seed):
        truth = rasterize_phantom(ctx.cfg.phantom_spec(), ctx.cfg.grid)
        return truth, io.load_projections(d / "counts"), io.load_projections(d / "open_beam")
    scan = simulate_scan(ctx.cfg)
    return scan.truth, scan.counts, scan.open_beam


def _subset(stack: ProjectionStack, stride: int) -> ProjectionStack:
    return stack.subset(view_subset(stack.geometry.n_views, stride))


def _append_rows(path: Path, rows: list[dict]) -> None:
    text = metrics_csv(rows)
    if path.exists():
        text = "".join(text.splitlines(keepends=True)[2:])
    with open(path, "a") as fh:
        fh.write(text)


@click.group()
@click.option("--threads", type=int, default=None,
              help=f"Worker threads (default: ${THREADS_ENV} or all cores).")
@click.option("-v", "--verbose", is_flag=True)
def main(threads, verbose):
    """Simulate and reconstruct photon-starved TRISO particle scans."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads(threads)


config_option = click.option("--config", "config", required=True,
                             type=click.Path(path_type=Path), help="Experiment JSON.")
seed_option = click.option("--seed", type=int, default=None, help="Override the acquisition seed.")
out_option = click.option("--out", type=click.Path(path_type=Path), default=None,
                          help="Override the output directory.")


@main.command()
@config_option
@out_option
def phantom(config, out):
    """Rasterize the phantom onto the reconstruction grid."""
    def run():
        ctx = Context(config, None, out)
        vol = rasterize_phantom(ctx.cfg.phantom_spec(), ctx.cfg.grid)
        d = ctx.directory("phantom")
        _save_volume(d, "phantom", vol, ctx.cfg)
        g = ctx.cfg.grid
        click.echo(f"grid {g.nx}x{g.ny}x{g.nz} voxel {g.voxel_size:g} mm -> {d / 'phantom.raw'}")
    _run(run)


@main.command()
@config_option
@seed_option
@out_option
def simulate(config, seed, out):
    """Simulate counts and an open-beam scan."""
    def run():
        ctx = Context(config, seed, out)
        scan = simulate_scan(ctx.cfg)
        params = ctx.cfg.acquisition()
        d = ctx.directory("scan")
        meta = dict(seed=params.rng_seed, incident_counts=params.incident_counts)
        io.save_projections(d / "counts", scan.counts, **meta)
        io.save_projections(d / "open_beam", scan.open_beam, **meta)
        starved = float(np.mean(scan.counts.values < ctx.cfg.threshold))
        click.echo(f"{scan.counts.geometry.n_views} views, {100 * starved:.2f}% of pixels below "
                   f"{ctx.cfg.threshold:g} counts -> {d}")
    _run(run)


@main.command("reconstruct")
@config_option
@click.option("--method", required=True, type=click.Choice(METHODS))
@click.option("--views-stride", type=int, default=1, show_default=True,
              help="Use every N-th view.")
@seed_option
@out_option
def reconstruct_cmd(config, method, views_stride, seed, out):
    """Reconstruct with one method and append its metrics row."""
    def run():
        ctx = Context(config, seed, out)
        truth, counts, open_beam = _load_or_simulate(ctx)
        counts, open_beam = _subset(counts, views_stride), _subset(open_beam, views_stride)
        rec = reconstruct(method, counts, open_beam, ctx.cfg)
        d = ctx.directory("reconstruct", f"{method}_stride{views_stride}")
        _save_volume(d, method, rec.volume, ctx.cfg, method=method, n_views=rec.n_views)
        if rec.cost_trace:
            (d / "cost_trace.csv").write_text(cost_trace_csv(rec.cost_trace))
        (d / "profile.csv").write_text(profile_csv(_central_profile(rec.volume)))
        nmask, clad = metric_masks(ctx.cfg)
        row = dict(experiment_id=ctx.cfg.experiment_id, method=method, n_views=rec.n_views,
                   reference="truth", nrmse=nrmse(rec.volume, truth, nmask),
                   region_stddev=region_stddev(rec.volume, clad))
        _append_rows(ctx.out / "metrics.csv", [row])
        click.echo(f"{method}: nrmse {row['nrmse']:.4f} cladding stddev {row['region_stddev']:.4f}")
    _run(run)


@main.command("sparse-sweep")
@config_option
@seed_option
@out_option
def sparse_sweep(config, seed, out):
    """fdk-clipped and mbir-thresholded at every subsampling factor."""
    def run():
        ctx = Context(config, seed, out)
        cfg = ctx.cfg
        truth, counts, open_beam = _load_or_simulate(ctx)
        n = counts.geometry.n_views
        for factor in cfg.subsampling:
            view_subset(n, factor)
        nmask, clad = metric_masks(cfg)
        d = ctx.directory("sweep")
        full: dict[str, Volume] = {}
        rows = []
        for factor in sorted(cfg.subsampling):
            c, o = _subset(counts, factor), _subset(open_beam, factor)
            for method in SWEEP_METHODS:
                rec = reconstruct(method, c, o, cfg)
                name = f"{method}_x{factor}"
                _save_volume(d, name, rec.volume, cfg, method=method, n_views=rec.n_views,
                             subsampling_factor=factor)
                if rec.cost_trace:
                    (d / f"{name}_cost_trace.csv").write_text(cost_trace_csv(rec.cost_trace))
                (d / f"{name}_profile.csv").write_text(profile_csv(_central_profile(rec.volume)))
                if factor == 1:
                    full[method] = rec.volume
                common = dict(experiment_id=cfg.experiment_id, method=method, n_views=rec.n_views,
                              region_stddev=region_stddev(rec.volume, clad))
                new = [{**common, "reference": "full-view", "nrmse": nrmse(rec.volume, full[method], nmask)},
                       {**common, "reference": "truth", "nrmse": nrmse(rec.volume, truth, nmask)}]
                rows += new
                click.echo(f"x{factor} {method}: " + ", ".join(f"vs {r['reference']} {r['nrmse']:.4f}" for r in new))
        (d / "metrics.csv").write_text(metrics_csv(rows))
    _run(run)


@main.command()
@config_option
@click.option("--volume", "volume_path", required=True, type=click.Path(path_type=Path))
@click.option("--start", default=None, help="Start voxel k,j,i (default: central row).")
@click.option("--end", default=None, help="End voxel k,j,i.")
@out_option
def profile(config, volume_path, start, end, out):
    """Write a line profile of a saved volume as CSV."""
    def run():
        ctx = Context(config, None, out)
        vol = io.load_volume(volume_path)
        if (start is None) != (end is None):
            raise ConfigError("--start and --end go together")
        if start is None:
            prof = _central_profile(vol)
        else:
            try:
                s, e = (tuple(int(v) for v in p.split(",")) for p in (start, end))
            except ValueError as exc:
                raise ConfigError(f"bad voxel index: {exc}") from exc
            try:
                prof = extract_line_profile(vol, s, e)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        d = ctx.directory("profiles")
        path = d / f"{Path(volume_path).with_suffix('').name}_profile.csv"
        path.write_text(profile_csv(prof))
        click.echo(f"{len(prof)} samples -> {path}")
    _run(run)


@main.command()
@config_option
@click.option("--volume", "volume_path", required=True, type=click.Path(path_type=Path))
@click.option("--method", default="unknown", help="Label for the metrics row.")
@out_option
def metrics(config, volume_path, method, out):
    """Score a saved volume against the ground-truth phantom."""
    def run():
        ctx = Context(config, None, out)
        vol = io.load_volume(volume_path)
        if vol.grid.to_dict() != ctx.cfg.grid.to_dict():
            raise ConfigError("volume grid differs from the configured grid")
        truth = rasterize_phantom(ctx.cfg.phantom_spec(), ctx.cfg.grid)
        nmask, clad = metric_masks(ctx.cfg)
        _, meta = io.read_raw(volume_path)
        row = dict(experiment_id=ctx.cfg.experiment_id, method=method, n_views=meta.get("n_views", ""),
                   reference="truth", nrmse=nrmse(vol, truth, nmask),
                   region_stddev=region_stddev(vol, clad))
        click.echo(metrics_csv([row]), nl=False)
    _run(run)


if __name__ == "__main__":
    main()
