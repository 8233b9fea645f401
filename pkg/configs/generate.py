"""Regenerate the shipped scenario configs.

    python configs/generate.py

``desk64`` is the full desk-scale scenario (64^3 grid, 96x96 detector, 360
views).  ``accept`` is a reduced analog sized for a single CPU core; the
acceptance tests run it.
"""

from pathlib import Path

from trisorecon.geometry import ConeBeamGeometry, circular_angles
from trisorecon.io import write_json
from trisorecon.phantom import default_triso_spec
from trisorecon.scan_sim import AcquisitionParams, alternating_shift_pattern

HERE = Path(__file__).resolve().parent

SCENARIOS = {
    "accept": dict(n=48, det=64, views=160, iterations=300),
    "desk64": dict(n=64, det=96, views=360, iterations=200),
}

FOV = 1.2  # mm, edge of the reconstruction cube
SAD, SDD = 10.0, 40.0
DETECTOR_WIDTH = 5.4  # mm
I0 = 2.0e4
SEED = 20240601


def write_scenario(name: str, n: int, det: int, views: int, iterations: int) -> None:
    out = HERE / name
    out.mkdir(exist_ok=True)
    spec = default_triso_spec()
    write_json(out / "phantom.json", spec.to_dict())

    geometry = ConeBeamGeometry(SAD, SDD, det, det, DETECTOR_WIDTH / det, circular_angles(views))
    write_json(out / "geometry.json", geometry.to_dict())

    acq = AcquisitionParams(
        incident_counts=I0,
        rng_seed=SEED,
        impulse_rate=1e-3,
        impulse_amplitude=5e3,
        enable_poisson=True,
        shift_pattern=alternating_shift_pattern(views, max_shift=2, seed=SEED),
    )
    write_json(out / "acquisition.json", acq.to_dict())

    write_json(out / "experiment.json", {
        "experiment_id": name,
        "phantom": "phantom.json",
        "geometry": "geometry.json",
        "acquisition": "acquisition.json",
        "grid": {"nx": n, "ny": n, "nz": n, "voxel_size": FOV / n, "origin": [0.0, 0.0, 0.0]},
        "preprocessing": {"median_window": 3, "threshold": 50.0, "clip_floor": 50.0},
        "fdk": {"filter_kind": "ram-lak"},
        "mbir": {
            "prior": {"sigma_f": 0.01, "c": 0.05, "p": 1.2, "neighborhood": 26},
            "solver": {"max_iterations": iterations, "lipschitz": "auto", "init": "fdk",
                       "cost_log_interval": 10},
        },
        "subsampling": [1, 2, 4, 8],
        "output_dir": f"../../runs/{name}",
        "metrics": {"cladding_shell": 1, "kernel_margin": 2 * FOV / n},
    })


if __name__ == "__main__":
    for name, kw in SCENARIOS.items():
        write_scenario(name, **kw)
        print(f"wrote {HERE / name}")
