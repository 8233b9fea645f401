import json

import numpy as np
import pytest
from click.testing import CliRunner

from trisorecon import io
from trisorecon.cli import main
from trisorecon.geometry import ConeBeamGeometry, circular_angles
from trisorecon.phantom import ShellSpec, TrisoPhantomSpec, default_triso_spec, rasterize_phantom
from trisorecon.projector import forward_project_array
from trisorecon.scan_sim import AcquisitionParams


def write_config(root, *, spec=None, enable_poisson=True, seed=7, threshold=50.0,
                 lipschitz="auto", iterations=4, subsampling=(1, 2), views=16):
    root.mkdir(parents=True, exist_ok=True)
    spec = spec or default_triso_spec()
    io.write_json(root / "phantom.json", spec.to_dict() if hasattr(spec, "to_dict") else spec)
    io.save_geometry(root / "geometry.json", ConeBeamGeometry(10.0, 40.0, 20, 20, 0.27, circular_angles(views)))
    io.write_json(root / "acquisition.json",
                  AcquisitionParams(2e4, seed, 0.0, 0.0, enable_poisson).to_dict())
    cfg = {
        "experiment_id": "tiny",
        "phantom": "phantom.json",
        "geometry": "geometry.json",
        "acquisition": "acquisition.json",
        "grid": {"nx": 16, "ny": 16, "nz": 16, "voxel_size": 1.2 / 16, "origin": [0, 0, 0]},
        "preprocessing": {"median_window": 3, "threshold": threshold, "clip_floor": 50.0},
        "mbir": {"prior": {"sigma_f": 0.05, "c": 0.05, "p": 1.2},
                 "solver": {"max_iterations": iterations, "lipschitz": lipschitz, "init": "fdk",
                            "cost_log_interval": 2}},
        "subsampling": list(subsampling),
        "output_dir": "out",
        "metrics": {"cladding_shell": 1, "cladding_margin": 0.0},
    }
    (root / "experiment.json").write_text(json.dumps(cfg))
    return root / "experiment.json"


def run(*args, env=None):
    return CliRunner().invoke(main, [str(a) for a in args], env=env, catch_exceptions=False)


def test_phantom_writes_volume(tmp_path):
    cfg = write_config(tmp_path)
    res = run("phantom", "--config", cfg)
    assert res.exit_code == 0, res.output
    vol = io.load_volume(tmp_path / "out/phantom/phantom")
    assert vol.values.shape == (16, 16, 16)
    expected = rasterize_phantom(default_triso_spec(), vol.grid).values.astype(np.float32)
    np.testing.assert_array_equal(vol.values, expected)
    assert (tmp_path / "out/phantom/resolved_config.json").exists()
    assert (tmp_path / "out/phantom/phantom_axial.png").exists()


def test_phantom_bad_radii_exit_2(tmp_path):
    bad = default_triso_spec().to_dict()
    bad["shells"][1]["outer_radius"] = 0.1
    cfg = write_config(tmp_path, spec=bad)
    assert run("phantom", "--config", cfg).exit_code == 2


def test_missing_config_exit_2(tmp_path):
    assert run("phantom", "--config", tmp_path / "nope.json").exit_code == 2


def test_simulate_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    assert run("simulate", "--config", cfg, "--out", tmp_path / "a").exit_code == 0
    assert run("simulate", "--config", cfg, "--out", tmp_path / "b").exit_code == 0
    assert run("simulate", "--config", cfg, "--out", tmp_path / "c", "--seed", 8).exit_code == 0
    a = (tmp_path / "a/scan/counts.raw").read_bytes()
    assert a == (tmp_path / "b/scan/counts.raw").read_bytes()
    assert a != (tmp_path / "c/scan/counts.raw").read_bytes()
    meta = io.read_json(tmp_path / "c/scan/counts.json")
    assert meta["seed"] == 8 and meta["incident_counts"] == 2e4


def test_simulate_noiseless_is_beer_lambert(tmp_path):
    cfg = write_config(tmp_path, enable_poisson=False)
    assert run("simulate", "--config", cfg).exit_code == 0
    counts = io.load_projections(tmp_path / "out/scan/counts")
    truth = rasterize_phantom(default_triso_spec(), _grid(cfg))
    expected = 2e4 * np.exp(-forward_project_array(truth.values, counts.geometry, truth.grid))
    np.testing.assert_allclose(counts.values, expected, rtol=1e-6, atol=1e-6)


def _grid(cfg):
    from trisorecon.experiment import ExperimentConfig
    return ExperimentConfig.load(cfg).grid


def test_reconstruct_unknown_method_is_usage_error(tmp_path):
    cfg = write_config(tmp_path)
    assert run("reconstruct", "--config", cfg, "--method", "sart").exit_code == 2


def test_clip_inactive_on_unstarved_scan(tmp_path):
    spec = TrisoPhantomSpec((0, 0, 0), (ShellSpec(0.2, 1.0), ShellSpec(0.45, 0.5))).to_dict()
    cfg = write_config(tmp_path, spec=spec, enable_poisson=False)
    for method in ("fdk-naive", "fdk-clipped"):
        assert run("reconstruct", "--config", cfg, "--method", method).exit_code == 0
    a = (tmp_path / "out/reconstruct/fdk-naive_stride1/fdk-naive.raw").read_bytes()
    b = (tmp_path / "out/reconstruct/fdk-clipped_stride1/fdk-clipped.raw").read_bytes()
    assert a == b
    lines = (tmp_path / "out/metrics.csv").read_text().splitlines()
    assert lines[0].startswith("# nrmse normalization")
    assert lines[1] == "experiment_id,method,n_views,reference,nrmse,region_stddev"
    assert len(lines) == 4


def test_threshold_zero_matches_plain(tmp_path):
    cfg = write_config(tmp_path, threshold=0.0)
    assert run("reconstruct", "--config", cfg, "--method", "mbir-plain").exit_code == 0
    assert run("reconstruct", "--config", cfg, "--method", "mbir-thresholded").exit_code == 0
    a = (tmp_path / "out/reconstruct/mbir-plain_stride1/mbir-plain.raw").read_bytes()
    b = (tmp_path / "out/reconstruct/mbir-thresholded_stride1/mbir-thresholded.raw").read_bytes()
    assert a == b
    trace = (tmp_path / "out/reconstruct/mbir-plain_stride1/cost_trace.csv").read_text().splitlines()
    assert trace[0] == "iteration,data_cost,prior_cost,total_cost"
    assert [int(t.split(",")[0]) for t in trace[1:]] == [0, 2, 4]


def test_views_stride(tmp_path):
    cfg = write_config(tmp_path)
    assert run("reconstruct", "--config", cfg, "--method", "fdk-clipped", "--views-stride", 2).exit_code == 0
    meta = io.read_json(tmp_path / "out/reconstruct/fdk-clipped_stride2/fdk-clipped.json")
    assert meta["n_views"] == 8
    assert run("reconstruct", "--config", cfg, "--method", "fdk-clipped", "--views-stride", 3).exit_code == 2


def test_numerical_failure_exit_3(tmp_path):
    cfg = write_config(tmp_path, lipschitz=1e-300, iterations=20)
    assert run("reconstruct", "--config", cfg, "--method", "mbir-plain").exit_code == 3


def test_sparse_sweep(tmp_path):
    cfg = write_config(tmp_path)
    res = run("sparse-sweep", "--config", cfg)
    assert res.exit_code == 0, res.output
    d = tmp_path / "out/sweep"
    rows = [line.split(",") for line in (d / "metrics.csv").read_text().splitlines()[2:]]
    full = [r for r in rows if r[2] == "16" and r[3] == "full-view"]
    assert len(full) == 2 and all(float(r[4]) == 0.0 for r in full)
    assert {(r[1], r[2], r[3]) for r in rows} == {
        (m, n, ref) for m in ("fdk-clipped", "mbir-thresholded") for n in ("16", "8")
        for ref in ("full-view", "truth")}
    assert (d / "mbir-thresholded_x2_profile.csv").exists()
    assert io.read_json(d / "resolved_config.json")["subsampling"] == [1, 2]


def test_sparse_sweep_rejects_bad_factor(tmp_path):
    cfg = write_config(tmp_path, subsampling=(1, 3))
    assert run("sparse-sweep", "--config", cfg).exit_code == 2


def test_profile_and_metrics(tmp_path):
    cfg = write_config(tmp_path)
    assert run("phantom", "--config", cfg).exit_code == 0
    vol = tmp_path / "out/phantom/phantom.raw"
    assert run("profile", "--config", cfg, "--volume", vol).exit_code == 0
    lines = (tmp_path / "out/profiles/phantom_profile.csv").read_text().splitlines()
    assert lines[0] == "position_mm,value" and len(lines) == 17
    assert run("profile", "--config", cfg, "--volume", vol, "--start", "8,8,8", "--end", "8,8,15").exit_code == 0
    assert run("profile", "--config", cfg, "--volume", vol, "--start", "8,8,8", "--end", "8,8,16").exit_code == 2
    res = run("metrics", "--config", cfg, "--volume", vol, "--method", "truth")
    assert res.exit_code == 0
    row = res.output.strip().splitlines()[-1].split(",")
    # the stored volume is float32
    assert row[1] == "truth" and float(row[4]) < 1e-6


@pytest.mark.parametrize("env", [{"TRISORECON_THREADS": "1"}, {"TRISORECON_THREADS": "2"}])
def test_thread_setting_does_not_change_output(tmp_path, env):
    cfg = write_config(tmp_path)
    assert run("reconstruct", "--config", cfg, "--method", "fdk-naive", env=env).exit_code == 0
    assert run("--threads", "1", "reconstruct", "--config", cfg, "--method", "fdk-naive",
               "--out", tmp_path / "one").exit_code == 0
    assert ((tmp_path / "out/reconstruct/fdk-naive_stride1/fdk-naive.raw").read_bytes()
            == (tmp_path / "one/reconstruct/fdk-naive_stride1/fdk-naive.raw").read_bytes())
