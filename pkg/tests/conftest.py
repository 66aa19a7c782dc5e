import os

import pytest

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SCENES_DIR = os.path.join(REPO_ROOT, "scenes")

MINI_SCENE = """\
name = mini_canyon
anchor_lat_deg = 22.3
anchor_lon_deg = 114.18
anchor_h_m = 5.0
sensor_height_m = 1.8
seed = 11
noise_sigma_m = 0.0
truth_clock_bias_m = 120.0
atmosphere = off
epoch_start_s = 100.0
epoch_count = 12
epoch_step_s = 1.0
lidar_rate_hz = 10
lidar_leadin_s = 8.0
lidar_rings = 16
lidar_h_res_deg = 1.5
lidar_max_range_m = 120
traj_start_e = 0
traj_start_n = 0
traj_heading_deg = 90
traj_speed_mps = 5.0
# walls cover the middle third of the run
building = 15 12 45 12 16
building = 15 -11 45 -11 13
satellite = G05 GPS 28 92 1200
satellite = G07 GPS 25 268 -800
satellite = G12 GPS 70 25 300
satellite = G24 GPS 60 200 -350
satellite = G21 GPS 38 355 150
satellite = G31 GPS 42 5 60
"""


def scene_path(name: str) -> str:
    return os.path.join(SCENES_DIR, name)


@pytest.fixture(scope="session")
def mini_scene_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("scene") / "mini.cfg"
    path.write_text(MINI_SCENE)
    return str(path)


@pytest.fixture(scope="session")
def mini_dataset(mini_scene_file, tmp_path_factory):
    """Simulated mini canyon dataset shared across pipeline/CLI tests."""
    from canyonnav import pipeline

    out = tmp_path_factory.mktemp("mini_data")
    scene = pipeline.load_scene(mini_scene_file)
    files = pipeline.simulate_dataset(scene, str(out))
    files["scene"] = mini_scene_file
    files["dir"] = str(out)
    return files
