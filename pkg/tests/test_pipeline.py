import math
import os

import numpy as np
import pytest

from canyonnav import pipeline as pl
from canyonnav.frames import GeodeticPosition, geodetic_to_ecef
from canyonnav.measmodel import SatelliteObservation
from canyonnav.nlos import CNLOS, FNLOS, LOS
from canyonnav.scenesim import BuildingFace, facade_pointcloud
from canyonnav.swm import SlidingWindowMap

OBS_HEADER = (
    "epoch_s,sat_id,constellation,pseudorange_m,snr_dbhz,"
    "sat_x_m,sat_y_m,sat_z_m,sat_clock_bias_m\n"
)


def test_parse_header_only(tmp_path):
    path = tmp_path / "obs.csv"
    path.write_text(OBS_HEADER)
    assert pl.parse_observations(str(path)) == []


def test_parse_two_epochs_three_sats(tmp_path):
    path = tmp_path / "obs.csv"
    rows = []
    for t in (5.0, 4.0):  # unordered on purpose
        for i in range(3):
            rows.append(f"{t},S{i},GPS,2.2e7,45,2.6e7,0,0,10")
    path.write_text(OBS_HEADER + "\n".join(rows) + "\n")
    epochs = pl.parse_observations(str(path))
    assert [t for t, _ in epochs] == [4.0, 5.0]
    assert all(len(obs) == 3 for _, obs in epochs)


def test_parse_error_names_line(tmp_path):
    path = tmp_path / "obs.csv"
    path.write_text(
        OBS_HEADER
        + "1.0,S0,GPS,2.2e7,45,2.6e7,0,0,10\n"
        + "1.0,S1,GPS,abc,45,2.6e7,0,0,10\n"
    )
    with pytest.raises(pl.ParseError) as exc:
        pl.parse_observations(str(path))
    assert exc.value.line == 3


def test_parse_missing_column(tmp_path):
    path = tmp_path / "obs.csv"
    path.write_text("epoch_s,sat_id\n")
    with pytest.raises(pl.MissingColumn):
        pl.parse_observations(str(path))


def test_config_parse_and_overrides(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(
        "mode = wls\nn_thres = 7\nsnr_T = 45\n# comment\nd_thres_m = 200\n"
    )
    cfg = pl.load_run_config(str(cfg_file), {"mode": "r_wls", "k_w": "9"})
    assert cfg.mode == "r_wls"
    assert cfg.detection.neighbor_threshold == 7
    assert cfg.detection.max_range_m == 200.0
    assert cfg.weights.snr_threshold_dbhz == 45.0
    assert cfg.weights.nlos_scale == 9.0


def test_config_rejects_bad_mode(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("mode = kalman\n")
    with pytest.raises(pl.ConfigError):
        pl.load_run_config(str(cfg_file), None)


def _epoch_inputs(extra_delay_sat=None, delay=0.0, sats=None):
    """Hand-built epoch around a fixed truth with optional injected delay."""
    anchor = GeodeticPosition(math.radians(22.3), math.radians(114.18), 5.0)
    from canyonnav.frames import enu_rotation

    rx = geodetic_to_ecef(anchor)
    r = enu_rotation(anchor.latitude_rad, anchor.longitude_rad)
    sats = sats or {
        "A1": (28.0, 92.0),
        "A2": (25.0, 268.0),
        "A3": (70.0, 25.0),
        "A4": (60.0, 200.0),
        "M1": (40.0, 5.0),
        "M2": (55.0, 140.0),
    }
    obs = []
    for sid, (el, az) in sats.items():
        u = r @ np.array(
            [
                math.sin(math.radians(az)) * math.cos(math.radians(el)),
                math.cos(math.radians(az)) * math.cos(math.radians(el)),
                math.sin(math.radians(el)),
            ]
        )
        sat = rx.as_array() + 2.2e7 * u
        rho = 2.2e7 + 120.0
        if sid == extra_delay_sat:
            rho += delay
        obs.append(
            SatelliteObservation(
                50.0, sid, "GPS", rho, 42.0,
                pl.EcefPosition.from_array(sat), 0.0,
            )
        )
    return anchor, obs


def test_run_epoch_open_sky_identical_across_modes(tmp_path):
    anchor, obs = _epoch_inputs()
    empty = SlidingWindowMap(np.empty((0, 3)), anchor=anchor)
    cfg_file = tmp_path / "r.cfg"
    cfg_file.write_text("mode = wls\n")
    positions = []
    for mode in pl.MODES:
        cfg = pl.load_run_config(str(cfg_file), {"mode": mode})
        res = pl.run_epoch(cfg, empty, obs, truth=anchor)
        assert res.solution.converged
        assert res.n_sats == res.n_los == len(obs)
        positions.append(res.solution.position_ecef.as_array())
    for p in positions[1:]:
        assert np.linalg.norm(p - positions[0]) < 1e-9


def test_run_epoch_correction_beats_plain_wls(tmp_path):
    # zero noise; one blocked satellite whose injected delay matches the
    # closed-form reflection delay of the wall pair exactly
    faces = [
        BuildingFace((-60.0, 12.0), (60.0, 12.0), 16.0),
        BuildingFace((-60.0, -9.0), (60.0, -9.0), 12.0),
    ]
    delay = 2.0 * 9.0 * math.cos(math.radians(40.0))
    anchor, obs = _epoch_inputs(extra_delay_sat="M1", delay=delay)
    pts = facade_pointcloud(faces, 0.25) - np.array([0.0, 0.0, 1.8])
    swm = SlidingWindowMap(pts, anchor=anchor)
    cfg_file = tmp_path / "r.cfg"
    cfg_file.write_text("seed = 0\n")
    res_wls = pl.run_epoch(pl.load_run_config(str(cfg_file), {"mode": "wls"}), swm, obs, anchor)
    res_cr = pl.run_epoch(pl.load_run_config(str(cfg_file), {"mode": "cr_wls"}), swm, obs, anchor)
    assert res_wls.error_2d_m > 1.0
    assert res_cr.error_2d_m < 1e-3
    m1 = [v for v in res_cr.verdicts if v.sat_id == "M1"][0]
    assert m1.visibility == CNLOS
    assert m1.nlos_delay_m == pytest.approx(delay, abs=1e-9)


def test_run_epoch_exclusion_starves_solver(tmp_path):
    # blocking three of six satellites leaves three: exclusion goes dark,
    # the re-weighting modes keep solving
    faces = [
        BuildingFace((-60.0, 12.0), (60.0, 12.0), 16.0),
        BuildingFace((-60.0, -9.0), (60.0, -9.0), 12.0),
    ]
    anchor, obs = _epoch_inputs(
        sats={
            "A1": (28.0, 92.0),
            "A2": (25.0, 268.0),
            "A4": (60.0, 200.0),
            "M1": (40.0, 5.0),
            "M2": (38.0, 350.0),
            "M3": (42.0, 15.0),
        }
    )
    pts = facade_pointcloud(faces, 0.25) - np.array([0.0, 0.0, 1.8])
    swm = SlidingWindowMap(pts, anchor=anchor)
    cfg_file = tmp_path / "r.cfg"
    cfg_file.write_text("seed = 0\n")
    res_ne = pl.run_epoch(pl.load_run_config(str(cfg_file), {"mode": "wls_ne"}), swm, obs, anchor)
    res_r = pl.run_epoch(pl.load_run_config(str(cfg_file), {"mode": "r_wls"}), swm, obs, anchor)
    res_w = pl.run_epoch(pl.load_run_config(str(cfg_file), {"mode": "wls"}), swm, obs, anchor)
    blocked = [v.sat_id for v in res_ne.verdicts if v.visibility != LOS]
    assert set(blocked) == {"M1", "M2", "M3"}
    assert res_ne.solution.status == "Unavailable"
    assert res_r.solution.converged and res_w.solution.converged


def test_metrics_hand_arithmetic():
    m = pl.metrics_from_errors([3.0, 4.0, 5.0], n_total=3, n_converged=3)
    assert m.mean_2d_m == pytest.approx(4.0)
    assert m.std_2d_m == pytest.approx(0.8165, abs=1e-4)
    assert m.max_2d_m == 5.0
    assert m.availability_pct == 100.0


def test_metrics_availability():
    m = pl.metrics_from_errors([1.0] * 96, n_total=100, n_converged=96)
    assert m.availability_pct == pytest.approx(96.0)


def test_metrics_no_epochs():
    with pytest.raises(pl.NoEpochs):
        pl.metrics_from_errors([], n_total=0, n_converged=0)
    with pytest.raises(pl.NoEpochs):
        pl.compute_position_metrics([], {})


def test_detection_report_all_detected():
    verdicts = [(1.0, "S1", FNLOS, 20.0, 0.0), (2.0, "S1", CNLOS, 25.0, 0.0)]
    truth = [(1.0, "S1", "NLOS", 5.0), (2.0, "S1", "NLOS", 7.0)]
    rep = pl.compute_detection_report(verdicts, truth)
    assert rep.bins[0].accuracy_pct == 100.0
    assert rep.bins[0].share_pct == 100.0


def test_detection_report_partial_share_format():
    verdicts = []
    truth = []
    for i in range(100):
        detected = i < 46
        verdicts.append((float(i), "S1", FNLOS if detected else LOS, 45.0, 0.0))
        truth.append((float(i), "S1", "NLOS", 3.0))
    rep = pl.compute_detection_report(verdicts, truth)
    assert rep.bins[1].accuracy_pct == pytest.approx(46.0)
    assert rep.bins[1].share_pct == pytest.approx(100.0)


def test_detection_report_empty_bin_is_na():
    verdicts = [(1.0, "S1", FNLOS, 20.0, 0.0)]
    truth = [(1.0, "S1", "NLOS", 5.0)]
    rep = pl.compute_detection_report(verdicts, truth)
    assert rep.bins[2].accuracy_pct is None
    assert rep.bins[2].n_true_nlos == 0


def test_detection_report_requires_truth():
    with pytest.raises(pl.NoTruth):
        pl.compute_detection_report([], [])


def test_shares_sum_to_100():
    verdicts = [
        (1.0, "S1", FNLOS, 10.0, 0.0),
        (1.0, "S2", LOS, 45.0, 0.0),
        (1.0, "S3", FNLOS, 80.0, 0.0),
    ]
    truth = [(1.0, "S1", "NLOS", 1.0), (1.0, "S2", "NLOS", 1.0), (1.0, "S3", "NLOS", 1.0)]
    rep = pl.compute_detection_report(verdicts, truth)
    assert sum(b.share_pct for b in rep.bins) == pytest.approx(100.0)


def test_dataset_round_trips(mini_dataset):
    epochs = pl.parse_observations(mini_dataset["observations"])
    assert len(epochs) == 12
    truth = pl.read_truth(mini_dataset["truth"])
    assert len(truth) == 12
    sat_truth = pl.read_sat_truth(mini_dataset["sat_truth"])
    assert len(sat_truth) == 12 * 6
    times, positions, rotations = pl.read_poses(mini_dataset["poses"])
    n_frames = len(
        [f for f in os.listdir(mini_dataset["frames_dir"]) if f.startswith("frame_")]
    )
    assert n_frames == len(times)


def test_run_dataset_modes_and_coupling(mini_dataset):
    results = {}
    for mode in pl.MODES:
        cfg = pl.load_run_config(mini_dataset["run_config"], {"mode": mode})
        results[mode] = pl.run_dataset(cfg)
    truth = pl.read_truth(mini_dataset["truth"])

    def availability(res):
        return sum(1 for r in res if r.solution.converged) / len(res)

    # exclusion can only remove satellites, never add availability
    assert availability(results["wls_ne"]) <= availability(results["wls"])
    # counts per epoch are consistent
    for res in results.values():
        for r in res:
            assert r.n_los + r.n_cnlos + r.n_fnlos == r.n_sats
    # writing and re-reading the solutions is lossless enough to re-evaluate
    import tempfile

    for mode, res in results.items():
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "solutions.csv")
            pl.write_solutions(path, res)
            rows = pl.read_solutions(path)
            metrics = pl.compute_position_metrics(rows, truth)
            assert metrics.n_epochs == len(res)


def test_verdict_and_skyplot_round_trip(mini_dataset, tmp_path):
    cfg = pl.load_run_config(mini_dataset["run_config"], {"mode": "cr_wls"})
    results = pl.run_dataset(cfg)
    vpath = tmp_path / "verdicts.csv"
    spath = tmp_path / "skyplot.csv"
    pl.write_verdicts(str(vpath), results)
    pl.write_skyplot(str(spath), results)
    vrows = pl.read_verdicts(str(vpath))
    srows = pl.read_verdicts(str(spath))
    assert len(vrows) == len(srows) == sum(r.n_sats for r in results)
    truth_rows = pl.read_sat_truth(mini_dataset["sat_truth"])
    rep = pl.compute_detection_report(vrows, truth_rows)
    assert sum(b.n_true_nlos for b in rep.bins) > 0


def test_sweep_detection_monotone(mini_dataset):
    cfg = pl.load_run_config(mini_dataset["run_config"], None)
    swept = pl.sweep_detection(cfg, [20, 60])
    truth_rows = pl.read_sat_truth(mini_dataset["sat_truth"])
    reps = {n: pl.compute_detection_report(rows, truth_rows) for n, rows in swept.items()}
    for b_small, b_big in zip(reps[20].bins, reps[60].bins):
        if b_small.accuracy_pct is not None and b_big.accuracy_pct is not None:
            assert b_big.accuracy_pct >= b_small.accuracy_pct - 1e-9
