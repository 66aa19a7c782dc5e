"""Dataset I/O, configuration and per-epoch orchestration.

File formats
------------
* observations CSV: ``epoch_s,sat_id,constellation,pseudorange_m,snr_dbhz,
  sat_x_m,sat_y_m,sat_z_m,sat_clock_bias_m``
* pose CSV: ``epoch_s,x,y,z,qw,qx,qy,qz`` (body-to-ENU quaternion), one row
  per LiDAR frame, aligned with the numbered frame files
* frame files: one point per line ``x y z`` in the LiDAR body frame,
  ``#`` lines ignored
* truth CSV: ``epoch_s,lat_deg,lon_deg,h_m``; per-satellite truth CSV:
  ``epoch_s,sat_id,true_class,true_delay_m``
* config files: ``key = value`` lines, ``#`` comments; angle-valued keys
  are degrees, everything internal is radians
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from . import nlos as nlos_mod
from .frames import (
    EcefPosition,
    FrameTransform,
    GeodeticPosition,
    SatelliteDirection,
    ecef_to_geodetic,
    enu_rotation,
    enu_transform_at,
    geodetic_to_ecef,
    satellite_direction,
)
from .measmodel import (
    AtmosphereContext,
    SatelliteObservation,
    WeightParams,
    apply_corrections,
    ionospheric_delay,
    observation_weight,
    tropospheric_delay,
)
from .nlos import CNLOS, FNLOS, LOS, DetectionParams, VisibilityVerdict
from .scenesim import (
    BuildingFace,
    LidarModel,
    SatelliteSpec,
    SceneSpec,
    generate_lidar_frames,
    heading_rotation,
    synthesize_observations,
)
from .solver import (
    STATUS_CONVERGED,
    ReceiverSolution,
    SolverConfig,
    dilution_of_precision,
    wls_solve,
)
from .swm import Calibration, PointCloudFrame, RegistrationPose, SlidingWindowMap, SwmConfig, build_swm

MODES = ("wls", "wls_ne", "r_wls", "cr_wls")

OBS_COLUMNS = [
    "epoch_s", "sat_id", "constellation", "pseudorange_m", "snr_dbhz",
    "sat_x_m", "sat_y_m", "sat_z_m", "sat_clock_bias_m",
]


class ParseError(ValueError):
    """Malformed input file; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MissingColumn(ValueError):
    pass


class NoEpochs(ValueError):
    pass


class NoTruth(ValueError):
    pass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config files

def read_config_text(path: str) -> dict[str, list[str]]:
    """Parse a ``key = value`` file; repeated keys accumulate in order."""
    out: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
            key, value = line.split("=", 1)
            out.setdefault(key.strip(), []).append(value.strip())
    return out


def _last(cfg: dict, key: str, default=None):
    if key in cfg and cfg[key]:
        return cfg[key][-1]
    return default


def _as_float(cfg, key, default):
    raw = _last(cfg, key)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: expected a number, got {raw!r}") from exc


def _as_int(cfg, key, default):
    return int(round(_as_float(cfg, key, default)))


def _as_bool(cfg, key, default):
    raw = _last(cfg, key)
    if raw is None:
        return default
    low = raw.lower()
    if low in ("on", "true", "1", "yes"):
        return True
    if low in ("off", "false", "0", "no"):
        return False
    raise ConfigError(f"key {key!r}: expected on/off, got {raw!r}")


def _as_floats(cfg, key, default, n=None):
    raw = _last(cfg, key)
    if raw is None:
        return default
    try:
        vals = tuple(float(v) for v in raw.split())
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: expected numbers, got {raw!r}") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"key {key!r}: expected {n} numbers, got {len(vals)}")
    return vals


@dataclass
class RunConfig:
    """Everything one processing run needs; mirrors the config-file keys."""

    mode: str = "cr_wls"
    seed: int = 0
    detection: DetectionParams = field(default_factory=DetectionParams)
    weights: WeightParams = field(default_factory=WeightParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    swm: SwmConfig = field(default_factory=SwmConfig)
    elevation_mask_deg: float = 5.0
    atmosphere: bool = False
    klobuchar_alpha: tuple = (1.118e-8, 2.98e-8, -1.79e-7, 0.0)
    klobuchar_beta: tuple = (1.167e5, 1.638e5, -3.28e5, -4.59e5)
    anchor: GeodeticPosition = field(
        default_factory=lambda: GeodeticPosition(math.radians(22.3), math.radians(114.18), 5.0)
    )
    observations: str = "observations.csv"
    poses: str = "poses.csv"
    frames_dir: str = "frames"
    truth: str | None = None
    sat_truth: str | None = None
    out_dir: str = "out"


def load_run_config(path: str, overrides: dict[str, str] | None = None) -> RunConfig:
    """Read a run config file, apply CLI overrides, resolve relative paths."""
    cfg = read_config_text(path)
    if overrides:
        for key, value in overrides.items():
            cfg.setdefault(key, []).append(value)

    mode = _last(cfg, "mode", "cr_wls")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")

    detection = DetectionParams(
        step_m=_as_float(cfg, "delta_d_pix_m", 1.0),
        max_range_m=_as_float(cfg, "d_thres_m", 250.0),
        neighbor_threshold=_as_int(cfg, "n_thres", 5),
        neighbor_radius_m=_as_float(cfg, "neighbor_radius_m", 1.0),
        azimuth_resolution_rad=math.radians(_as_float(cfg, "alpha_res_deg", 1.0)),
        self_occlusion_radius_m=_as_float(cfg, "self_occlusion_radius_m", 2.0),
    )
    weights = WeightParams(
        snr_threshold_dbhz=_as_float(cfg, "snr_T", 50.0),
        snr_floor_dbhz=_as_float(cfg, "snr_F", 20.0),
        amplitude=_as_float(cfg, "snr_A", 30.0),
        decay=_as_float(cfg, "snr_a", 30.0),
        nlos_scale=_as_float(cfg, "k_w", 16.0),
    )
    solver = SolverConfig(
        max_iterations=_as_int(cfg, "max_iterations", 20),
        convergence_m=_as_float(cfg, "convergence_m", 1e-4),
        clock_mode=_last(cfg, "clock_mode", "single"),
    )
    swm = SwmConfig(
        n_sw=_as_int(cfg, "n_sw", 200),
        ground_height_m=_as_float(cfg, "ground_height_m", 0.5),
        voxel_m=_as_float(cfg, "voxel_m", 0.2),
        sensor_height_m=_as_float(cfg, "sensor_height_m", 1.8),
    )
    anchor = GeodeticPosition(
        math.radians(_as_float(cfg, "anchor_lat_deg", 22.3)),
        math.radians(_as_float(cfg, "anchor_lon_deg", 114.18)),
        _as_float(cfg, "anchor_h_m", 5.0),
    )

    base = os.path.dirname(os.path.abspath(path))

    def _path(key, default, required=False):
        raw = _last(cfg, key, default)
        if raw is None:
            return None
        return raw if os.path.isabs(raw) else os.path.join(base, raw)

    return RunConfig(
        mode=mode,
        seed=_as_int(cfg, "seed", 0),
        detection=detection,
        weights=weights,
        solver=solver,
        swm=swm,
        elevation_mask_deg=_as_float(cfg, "elevation_mask_deg", 5.0),
        atmosphere=_as_bool(cfg, "atmosphere", False),
        klobuchar_alpha=_as_floats(cfg, "klobuchar_alpha", (1.118e-8, 2.98e-8, -1.79e-7, 0.0), 4),
        klobuchar_beta=_as_floats(cfg, "klobuchar_beta", (1.167e5, 1.638e5, -3.28e5, -4.59e5), 4),
        anchor=anchor,
        observations=_path("observations", "observations.csv"),
        poses=_path("poses", "poses.csv"),
        frames_dir=_path("frames_dir", "frames"),
        truth=_path("truth", None),
        sat_truth=_path("sat_truth", None),
        out_dir=_path("out_dir", "out"),
    )


def load_scene(path: str) -> SceneSpec:
    """Build a SceneSpec from a scene config file."""
    cfg = read_config_text(path)
    sensor_height = _as_float(cfg, "sensor_height_m", 1.8)

    faces = []
    for raw in cfg.get("building", []):
        vals = raw.split()
        if len(vals) not in (5, 7):
            raise ConfigError(
                f"building needs 'x1 y1 x2 y2 height [t_on t_off]', got {raw!r}"
            )
        nums = [float(v) for v in vals]
        active = (nums[5], nums[6]) if len(nums) == 7 else None
        faces.append(
            BuildingFace((nums[0], nums[1]), (nums[2], nums[3]), nums[4], active=active)
        )

    satellites = []
    for raw in cfg.get("satellite", []):
        vals = raw.split()
        if len(vals) not in (4, 5):
            raise ConfigError(
                f"satellite needs 'id constellation elev_deg az_deg [clock_bias_m]', got {raw!r}"
            )
        satellites.append(
            SatelliteSpec(
                sat_id=vals[0],
                constellation=vals[1],
                direction=SatelliteDirection(
                    math.radians(float(vals[2])), math.radians(float(vals[3]))
                ),
                clock_bias_m=float(vals[4]) if len(vals) == 5 else 0.0,
            )
        )

    if "traj_point" in cfg:
        rows = []
        for raw in cfg["traj_point"]:
            vals = [float(v) for v in raw.split()]
            if len(vals) != 4:
                raise ConfigError(f"traj_point needs 't e n heading_deg', got {raw!r}")
            rows.append(vals)
        rows.sort(key=lambda r: r[0])
        times = np.array([r[0] for r in rows])
        positions = np.array([[r[1], r[2], sensor_height] for r in rows])
        headings = np.radians([r[3] for r in rows])
    else:
        t0 = _as_float(cfg, "epoch_start_s", 100000.0)
        count = _as_int(cfg, "epoch_count", 10)
        step = _as_float(cfg, "epoch_step_s", 1.0)
        heading = math.radians(_as_float(cfg, "traj_heading_deg", 90.0))
        speed = _as_float(cfg, "traj_speed_mps", 5.0)
        start = np.array(
            [_as_float(cfg, "traj_start_e", 0.0), _as_float(cfg, "traj_start_n", 0.0)]
        )
        times = t0 + step * np.arange(count)
        along = speed * (times - t0)
        positions = np.column_stack(
            [
                start[0] + along * math.sin(heading),
                start[1] + along * math.cos(heading),
                np.full(len(times), sensor_height),
            ]
        )
        headings = np.full(len(times), heading)

    fov = _as_floats(cfg, "lidar_fov_deg", (-30.0, 10.0), 2)
    lidar = LidarModel(
        vertical_fov_deg=fov,
        n_scan_rings=_as_int(cfg, "lidar_rings", 16),
        horizontal_resolution_deg=_as_float(cfg, "lidar_h_res_deg", 1.5),
        max_range_m=_as_float(cfg, "lidar_max_range_m", 150.0),
        ground=_as_bool(cfg, "lidar_ground", True),
    )

    return SceneSpec(
        name=_last(cfg, "name", os.path.splitext(os.path.basename(path))[0]),
        anchor=GeodeticPosition(
            math.radians(_as_float(cfg, "anchor_lat_deg", 22.3)),
            math.radians(_as_float(cfg, "anchor_lon_deg", 114.18)),
            _as_float(cfg, "anchor_h_m", 5.0),
        ),
        faces=faces,
        satellites=satellites,
        traj_times=times,
        traj_positions=positions,
        traj_headings=headings,
        sensor_height_m=sensor_height,
        noise_sigma_m=_as_float(cfg, "noise_sigma_m", 0.0),
        seed=_as_int(cfg, "seed", 0),
        atmosphere=_as_bool(cfg, "atmosphere", False),
        klobuchar_alpha=_as_floats(cfg, "klobuchar_alpha", (1.118e-8, 2.98e-8, -1.79e-7, 0.0), 4),
        klobuchar_beta=_as_floats(cfg, "klobuchar_beta", (1.167e5, 1.638e5, -3.28e5, -4.59e5), 4),
        truth_clock_bias_m=_as_float(cfg, "truth_clock_bias_m", 120.0),
        lidar=lidar,
        lidar_rate_hz=_as_float(cfg, "lidar_rate_hz", 10.0),
        lidar_leadin_s=_as_float(cfg, "lidar_leadin_s", 25.0),
    )


# ---------------------------------------------------------------------------
# CSV and frame-file I/O

def parse_observations(path: str) -> list[tuple[float, list[SatelliteObservation]]]:
    """Read an observations CSV into per-epoch lists, epochs ascending.

    Raises ``MissingColumn`` if the header is short and ``ParseError`` with
    the offending 1-based line number for malformed rows.
    """
    epochs: dict[float, list[SatelliteObservation]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1)
        header = [h.strip() for h in header]
        for col in OBS_COLUMNS:
            if col not in header:
                raise MissingColumn(f"observations file lacks column {col!r}")
        idx = {c: header.index(c) for c in OBS_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                epoch = float(row[idx["epoch_s"]])
                obs = SatelliteObservation(
                    epoch_s=epoch,
                    sat_id=row[idx["sat_id"]].strip(),
                    constellation=row[idx["constellation"]].strip(),
                    pseudorange_m=float(row[idx["pseudorange_m"]]),
                    snr_dbhz=float(row[idx["snr_dbhz"]]),
                    sat_pos_ecef=EcefPosition(
                        float(row[idx["sat_x_m"]]),
                        float(row[idx["sat_y_m"]]),
                        float(row[idx["sat_z_m"]]),
                    ),
                    sat_clock_bias_m=float(row[idx["sat_clock_bias_m"]]),
                )
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), lineno) from exc
            epochs.setdefault(round(epoch, 6), []).append(obs)
    return [(t, epochs[t]) for t in sorted(epochs)]


def write_observations(path: str, epochs) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(OBS_COLUMNS)
        for epoch_s in sorted(epochs):
            for o in epochs[epoch_s]:
                writer.writerow(
                    [
                        f"{o.epoch_s:.3f}", o.sat_id, o.constellation,
                        f"{o.pseudorange_m:.6f}", f"{o.snr_dbhz:.3f}",
                        f"{o.sat_pos_ecef.x:.6f}", f"{o.sat_pos_ecef.y:.6f}",
                        f"{o.sat_pos_ecef.z:.6f}", f"{o.sat_clock_bias_m:.6f}",
                    ]
                )


def write_truth(path: str, truth_positions: dict[float, GeodeticPosition]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch_s", "lat_deg", "lon_deg", "h_m"])
        for t in sorted(truth_positions):
            g = truth_positions[t]
            writer.writerow(
                [
                    f"{t:.3f}",
                    f"{math.degrees(g.latitude_rad):.10f}",
                    f"{math.degrees(g.longitude_rad):.10f}",
                    f"{g.height_m:.4f}",
                ]
            )


def read_truth(path: str) -> dict[float, GeodeticPosition]:
    out = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "epoch_s" not in reader.fieldnames:
            raise MissingColumn("truth file lacks column 'epoch_s'")
        for lineno, row in enumerate(reader, start=2):
            try:
                out[round(float(row["epoch_s"]), 6)] = GeodeticPosition(
                    math.radians(float(row["lat_deg"])),
                    math.radians(float(row["lon_deg"])),
                    float(row["h_m"]),
                )
            except (TypeError, ValueError, KeyError) as exc:
                raise ParseError(str(exc), lineno) from exc
    return out


def write_sat_truth(path: str, truth_records) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch_s", "sat_id", "true_class", "true_delay_m"])
        for rec in truth_records:
            writer.writerow(
                [f"{rec.epoch_s:.3f}", rec.sat_id, rec.true_class, f"{rec.extra_path_m:.4f}"]
            )


def read_sat_truth(path: str) -> list[tuple[float, str, str, float]]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "true_class" not in reader.fieldnames:
            raise MissingColumn("per-satellite truth file lacks column 'true_class'")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append(
                    (
                        round(float(row["epoch_s"]), 6),
                        row["sat_id"].strip(),
                        row["true_class"].strip(),
                        float(row["true_delay_m"]),
                    )
                )
            except (TypeError, ValueError, KeyError) as exc:
                raise ParseError(str(exc), lineno) from exc
    return rows


def write_poses(path: str, rows) -> None:
    """rows: iterable of (timestamp, position(3,), heading_rad)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch_s", "x", "y", "z", "qw", "qx", "qy", "qz"])
        for t, pos, heading in rows:
            q = Rotation.from_matrix(heading_rotation(heading)).as_quat()  # x,y,z,w
            writer.writerow(
                [f"{t:.3f}"]
                + [f"{v:.6f}" for v in pos]
                + [f"{q[3]:.9f}", f"{q[0]:.9f}", f"{q[1]:.9f}", f"{q[2]:.9f}"]
            )


def read_poses(path: str):
    """Returns (timestamps (N,), positions (N,3), rotations (N,3,3))."""
    times, positions, quats = [], [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"epoch_s", "x", "y", "z", "qw", "qx", "qy", "qz"}
        if reader.fieldnames is None or not needed.issubset(set(reader.fieldnames)):
            raise MissingColumn("pose file needs epoch_s,x,y,z,qw,qx,qy,qz")
        for lineno, row in enumerate(reader, start=2):
            try:
                times.append(float(row["epoch_s"]))
                positions.append([float(row["x"]), float(row["y"]), float(row["z"])])
                quats.append(
                    [float(row["qx"]), float(row["qy"]), float(row["qz"]), float(row["qw"])]
                )
            except (TypeError, ValueError) as exc:
                raise ParseError(str(exc), lineno) from exc
    if not times:
        raise NoEpochs("pose file holds no rows")
    rotations = Rotation.from_quat(np.array(quats)).as_matrix()
    return np.array(times), np.array(positions), rotations


def write_frame(path: str, points: np.ndarray, timestamp: float) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# t={timestamp:.3f} n={len(points)}\n")
        for p in points:
            fh.write(f"{p[0]:.3f} {p[1]:.3f} {p[2]:.3f}\n")


def read_frame(path: str) -> np.ndarray:
    pts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"expected 'x y z', got {raw.strip()!r}", lineno)
            try:
                pts.append([float(v) for v in parts])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from exc
    return np.array(pts, dtype=float).reshape(-1, 3)


# ---------------------------------------------------------------------------
# per-epoch processing

@dataclass
class VerdictRow:
    """One satellite's processed state within an epoch."""

    sat_id: str
    visibility: str
    elevation_rad: float
    azimuth_rad: float
    snr_dbhz: float
    weight: float | None
    used: bool
    nlos_delay_m: float | None = None
    reflecting_point_enu: np.ndarray | None = None


@dataclass
class EpochResult:
    epoch_s: float
    solution: ReceiverSolution
    verdicts: list
    n_sats: int
    n_los: int
    n_cnlos: int
    n_fnlos: int
    error_2d_m: float | None = None
    dops: tuple | None = None


def horizontal_error_m(position: EcefPosition, truth: GeodeticPosition) -> float:
    """2-D ENU distance between a solved position and the true position."""
    truth_ecef = geodetic_to_ecef(truth)
    delta = position.as_array() - truth_ecef.as_array()
    enu = enu_rotation(truth.latitude_rad, truth.longitude_rad).T @ delta
    return float(math.hypot(enu[0], enu[1]))


def run_epoch(
    cfg: RunConfig,
    swm: SlidingWindowMap,
    observations: list[SatelliteObservation],
    truth: GeodeticPosition | None = None,
) -> EpochResult:
    """Classify, correct/weight and solve one epoch under the configured mode.

    ``wls`` skips detection, ``wls_ne`` drops blocked satellites,
    ``r_wls`` keeps them de-weighted, ``cr_wls`` additionally corrects the
    ones whose reflector is found.
    """
    if not observations:
        return EpochResult(
            float("nan"), ReceiverSolution(None), [], 0, 0, 0, 0, None, None
        )
    epoch_s = observations[0].epoch_s
    anchor_ecef = geodetic_to_ecef(swm.anchor if swm.anchor is not None else cfg.anchor)
    mask_rad = math.radians(cfg.elevation_mask_deg)

    rows: list[VerdictRow] = []
    solver_input = []
    for obs in observations:
        direction = satellite_direction(obs.sat_pos_ecef, anchor_ecef)
        if direction.elevation_rad < mask_rad:
            continue
        if cfg.mode == "wls":
            verdict = VisibilityVerdict(obs.sat_id, LOS)
        elif cfg.mode == "cr_wls":
            verdict = nlos_mod.classify_and_correct(
                swm, direction, cfg.detection, sat_id=obs.sat_id
            )
        else:  # wls_ne, r_wls: detection only, no reflector search
            visibility, _ = nlos_mod.classify_visibility(swm, direction, cfg.detection)
            verdict = VisibilityVerdict(
                obs.sat_id, LOS if visibility == LOS else FNLOS
            )
        used = not (cfg.mode == "wls_ne" and verdict.visibility != LOS)
        weight = observation_weight(
            verdict.visibility, direction.elevation_rad, obs.snr_dbhz, cfg.weights
        )
        iono = tropo = 0.0
        if cfg.atmosphere:
            ctx = AtmosphereContext(
                cfg.klobuchar_alpha,
                cfg.klobuchar_beta,
                swm.anchor if swm.anchor is not None else cfg.anchor,
                epoch_s,
            )
            iono = ionospheric_delay(ctx, direction.elevation_rad, direction.azimuth_rad)
            tropo = tropospheric_delay(ctx, direction.elevation_rad)
        corrected = apply_corrections(obs, verdict, tropo, iono)
        if used:
            solver_input.append((obs, corrected, weight))
        rows.append(
            VerdictRow(
                sat_id=obs.sat_id,
                visibility=verdict.visibility,
                elevation_rad=direction.elevation_rad,
                azimuth_rad=direction.azimuth_rad,
                snr_dbhz=obs.snr_dbhz,
                weight=weight if used else None,
                used=used,
                nlos_delay_m=verdict.nlos_delay_m,
                reflecting_point_enu=verdict.reflecting_point_enu,
            )
        )

    solution = wls_solve(solver_input, cfg.solver)
    error = None
    dops = None
    if solution.converged:
        if truth is not None:
            error = horizontal_error_m(solution.position_ecef, truth)
        try:
            dops = dilution_of_precision(
                solution.position_ecef, [o.sat_pos_ecef for o, _, _ in solver_input]
            )
        except np.linalg.LinAlgError:
            dops = None
    return EpochResult(
        epoch_s=epoch_s,
        solution=solution,
        verdicts=rows,
        n_sats=len(rows),
        n_los=sum(1 for r in rows if r.visibility == LOS),
        n_cnlos=sum(1 for r in rows if r.visibility == CNLOS),
        n_fnlos=sum(1 for r in rows if r.visibility == FNLOS),
        error_2d_m=error,
        dops=dops,
    )


# ---------------------------------------------------------------------------
# dataset-level runs

class FrameStore:
    """All LiDAR frames of a dataset held in memory, pose-aligned."""

    def __init__(self, times: np.ndarray, positions: np.ndarray, rotations: np.ndarray, clouds: list):
        if not (len(times) == len(positions) == len(rotations) == len(clouds)):
            raise ParseError("pose rows and frame files disagree in count")
        self.times = times
        self.positions = positions
        self.rotations = rotations
        self.clouds = clouds

    @classmethod
    def load(cls, frames_dir: str, poses_path: str) -> "FrameStore":
        times, positions, rotations = read_poses(poses_path)
        names = sorted(
            f for f in os.listdir(frames_dir) if f.startswith("frame_") and f.endswith(".txt")
        )
        clouds = [read_frame(os.path.join(frames_dir, name)) for name in names]
        return cls(times, positions, rotations, clouds)

    def window(self, epoch_s: float, n_sw: int):
        """Indices of the latest <= n_sw frames not newer than ``epoch_s``."""
        last = int(np.searchsorted(self.times, epoch_s + 1e-6))
        first = max(0, last - n_sw)
        return list(range(first, last))


def build_epoch_map(cfg: RunConfig, store: FrameStore, epoch_s: float) -> SlidingWindowMap:
    """Assemble the map for one epoch from the frame store."""
    idx = store.window(epoch_s, cfg.swm.n_sw)
    scene_to_ecef = enu_transform_at(cfg.anchor)
    if not idx:
        return SlidingWindowMap(np.empty((0, 3)), anchor=cfg.anchor)
    newest = idx[-1]
    r_n = store.rotations[newest]
    p_n = store.positions[newest]
    pairs = []
    for k in idx:
        rel_rot = r_n.T @ store.rotations[k]
        rel_tra = r_n.T @ (store.positions[k] - p_n)
        pairs.append(
            (
                PointCloudFrame(store.times[k], store.clouds[k]),
                RegistrationPose(store.times[k], FrameTransform(rel_rot, rel_tra)),
            )
        )
    anchor = ecef_to_geodetic(EcefPosition.from_array(scene_to_ecef.apply(p_n)))
    return build_swm(
        pairs,
        FrameTransform(r_n, np.zeros(3)),
        Calibration(),
        cfg.swm,
        anchor=anchor,
    )


def run_dataset(cfg: RunConfig) -> list[EpochResult]:
    """Process every epoch of a dataset under the configured mode."""
    epochs = parse_observations(cfg.observations)
    store = FrameStore.load(cfg.frames_dir, cfg.poses)
    truth = read_truth(cfg.truth) if cfg.truth else None
    results = []
    for epoch_s, obs_list in epochs:
        swm = build_epoch_map(cfg, store, epoch_s)
        truth_pos = truth.get(round(epoch_s, 6)) if truth else None
        results.append(run_epoch(cfg, swm, obs_list, truth_pos))
    return results


def sweep_detection(cfg: RunConfig, n_sw_values) -> dict[int, list[tuple]]:
    """Rerun visibility detection only, for each window size.

    Returns per window size a list of (epoch_s, sat_id, class, elev_deg,
    az_deg) rows suitable for a detection report.
    """
    epochs = parse_observations(cfg.observations)
    store = FrameStore.load(cfg.frames_dir, cfg.poses)
    mask_rad = math.radians(cfg.elevation_mask_deg)
    out: dict[int, list[tuple]] = {}
    for n_sw in n_sw_values:
        swept_cfg = replace(cfg, swm=replace(cfg.swm, n_sw=int(n_sw)))
        rows = []
        for epoch_s, obs_list in epochs:
            swm = build_epoch_map(swept_cfg, store, epoch_s)
            anchor_ecef = geodetic_to_ecef(
                swm.anchor if swm.anchor is not None else cfg.anchor
            )
            for obs in obs_list:
                direction = satellite_direction(obs.sat_pos_ecef, anchor_ecef)
                if direction.elevation_rad < mask_rad:
                    continue
                visibility, _ = nlos_mod.classify_visibility(swm, direction, cfg.detection)
                rows.append(
                    (
                        epoch_s,
                        obs.sat_id,
                        LOS if visibility == LOS else FNLOS,
                        math.degrees(direction.elevation_rad),
                        math.degrees(direction.azimuth_rad),
                    )
                )
        out[int(n_sw)] = rows
    return out


# ---------------------------------------------------------------------------
# result files

def write_solutions(path: str, results: list[EpochResult]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "epoch_s", "status", "iterations", "n_sats", "n_los", "n_cnlos",
                "n_fnlos", "x_m", "y_m", "z_m", "clock_m", "gdop", "hdop", "vdop",
            ]
        )
        for res in results:
            sol = res.solution
            if sol.converged:
                pos = sol.position_ecef
                clock = next(iter(sol.clock_bias_m.values()))
                xyz = [f"{pos.x:.6f}", f"{pos.y:.6f}", f"{pos.z:.6f}", f"{clock:.6f}"]
            else:
                xyz = ["", "", "", ""]
            dops = (
                [f"{v:.4f}" for v in res.dops] if res.dops is not None else ["", "", ""]
            )
            writer.writerow(
                [
                    f"{res.epoch_s:.3f}", sol.status, sol.iterations, res.n_sats,
                    res.n_los, res.n_cnlos, res.n_fnlos, *xyz, *dops,
                ]
            )


def read_solutions(path: str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "status" not in reader.fieldnames:
            raise MissingColumn("solutions file lacks column 'status'")
        for lineno, row in enumerate(reader, start=2):
            try:
                parsed = {
                    "epoch_s": round(float(row["epoch_s"]), 6),
                    "status": row["status"],
                    "position": None,
                }
                if row["x_m"]:
                    parsed["position"] = EcefPosition(
                        float(row["x_m"]), float(row["y_m"]), float(row["z_m"])
                    )
                    parsed["clock_m"] = float(row["clock_m"])
                rows.append(parsed)
            except (TypeError, ValueError, KeyError) as exc:
                raise ParseError(str(exc), lineno) from exc
    return rows


def write_verdicts(path: str, results: list[EpochResult]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "epoch_s", "sat_id", "class", "elev_deg", "az_deg", "snr_dbhz",
                "weight", "used", "nlos_delay_m", "refl_e_m", "refl_n_m", "refl_u_m",
            ]
        )
        for res in results:
            for v in res.verdicts:
                refl = (
                    [f"{c:.3f}" for c in v.reflecting_point_enu]
                    if v.reflecting_point_enu is not None
                    else ["", "", ""]
                )
                writer.writerow(
                    [
                        f"{res.epoch_s:.3f}", v.sat_id, v.visibility,
                        f"{math.degrees(v.elevation_rad):.4f}",
                        f"{math.degrees(v.azimuth_rad):.4f}",
                        f"{v.snr_dbhz:.3f}",
                        f"{v.weight:.6e}" if v.weight is not None else "",
                        int(v.used),
                        f"{v.nlos_delay_m:.4f}" if v.nlos_delay_m is not None else "",
                        *refl,
                    ]
                )


def read_verdicts(path: str) -> list[tuple[float, str, str, float, float]]:
    """(epoch_s, sat_id, class, elev_deg, az_deg) rows from a verdicts or skyplot CSV."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "class" not in reader.fieldnames:
            raise MissingColumn("verdicts file lacks column 'class'")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append(
                    (
                        round(float(row["epoch_s"]), 6),
                        row["sat_id"].strip(),
                        row["class"].strip(),
                        float(row["elev_deg"]),
                        float(row["az_deg"]),
                    )
                )
            except (TypeError, ValueError, KeyError) as exc:
                raise ParseError(str(exc), lineno) from exc
    return rows


def write_skyplot(path: str, results: list[EpochResult]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch_s", "sat_id", "elev_deg", "az_deg", "class"])
        for res in results:
            for v in res.verdicts:
                writer.writerow(
                    [
                        f"{res.epoch_s:.3f}", v.sat_id,
                        f"{math.degrees(v.elevation_rad):.4f}",
                        f"{math.degrees(v.azimuth_rad):.4f}", v.visibility,
                    ]
                )


def simulate_dataset(scene: SceneSpec, out_dir: str) -> dict[str, str]:
    """Generate and write a full synthetic dataset; returns the file map."""
    os.makedirs(out_dir, exist_ok=True)
    frames_dir = os.path.join(out_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    for name in os.listdir(frames_dir):
        if name.startswith("frame_") and name.endswith(".txt"):
            os.remove(os.path.join(frames_dir, name))

    rng = np.random.default_rng(scene.seed)
    epochs, truth_records, truth_positions = synthesize_observations(scene, rng)

    pose_rows = []
    for i, (t, pts, pos, heading) in enumerate(generate_lidar_frames(scene)):
        write_frame(os.path.join(frames_dir, f"frame_{i:06d}.txt"), pts, t)
        pose_rows.append((t, pos, heading))

    files = {
        "observations": os.path.join(out_dir, "observations.csv"),
        "poses": os.path.join(out_dir, "poses.csv"),
        "truth": os.path.join(out_dir, "truth.csv"),
        "sat_truth": os.path.join(out_dir, "sat_truth.csv"),
        "run_config": os.path.join(out_dir, "run.cfg"),
        "frames_dir": frames_dir,
    }
    write_observations(files["observations"], epochs)
    write_poses(files["poses"], pose_rows)
    write_truth(files["truth"], truth_positions)
    write_sat_truth(files["sat_truth"], truth_records)

    constellations = {s.constellation for s in scene.satellites}
    with open(files["run_config"], "w", encoding="utf-8") as fh:
        fh.write(f"# run configuration generated alongside dataset {scene.name!r}\n")
        fh.write("mode = cr_wls\n")
        fh.write(f"seed = {scene.seed}\n")
        if len(constellations) > 1:
            fh.write("clock_mode = per_constellation\n")
        fh.write(f"anchor_lat_deg = {math.degrees(scene.anchor.latitude_rad):.10f}\n")
        fh.write(f"anchor_lon_deg = {math.degrees(scene.anchor.longitude_rad):.10f}\n")
        fh.write(f"anchor_h_m = {scene.anchor.height_m:.4f}\n")
        fh.write(f"sensor_height_m = {scene.sensor_height_m}\n")
        fh.write(f"atmosphere = {'on' if scene.atmosphere else 'off'}\n")
        if scene.atmosphere:
            fh.write("klobuchar_alpha = " + " ".join(f"{v:.6e}" for v in scene.klobuchar_alpha) + "\n")
            fh.write("klobuchar_beta = " + " ".join(f"{v:.6e}" for v in scene.klobuchar_beta) + "\n")
        fh.write("observations = observations.csv\n")
        fh.write("poses = poses.csv\n")
        fh.write("frames_dir = frames\n")
        fh.write("truth = truth.csv\n")
        fh.write("sat_truth = sat_truth.csv\n")
        fh.write("out_dir = out\n")
    return files


# ---------------------------------------------------------------------------
# metrics

@dataclass
class PositionMetrics:
    mean_2d_m: float
    std_2d_m: float
    max_2d_m: float
    availability_pct: float
    n_epochs: int
    n_converged: int


def metrics_from_errors(errors, n_total: int, n_converged: int) -> PositionMetrics:
    """Aggregate 2-D errors (population std, paper-style tables)."""
    if n_total < 1:
        raise NoEpochs("no epochs to evaluate")
    errors = np.asarray(list(errors), dtype=float)
    if errors.size:
        mean, std, mx = float(errors.mean()), float(errors.std()), float(errors.max())
    else:
        mean = std = mx = float("nan")
    return PositionMetrics(
        mean, std, mx, 100.0 * n_converged / n_total, n_total, n_converged
    )


def compute_position_metrics(solutions, truth: dict[float, GeodeticPosition]) -> PositionMetrics:
    """Metrics over solution rows as returned by :func:`read_solutions`."""
    solutions = list(solutions)
    if not solutions:
        raise NoEpochs("no epochs to evaluate")
    errors = []
    n_conv = 0
    for row in solutions:
        if row["status"] != STATUS_CONVERGED or row["position"] is None:
            continue
        n_conv += 1
        t = row["epoch_s"]
        if t in truth:
            errors.append(horizontal_error_m(row["position"], truth[t]))
    if n_conv and not errors:
        raise NoTruth("no truth positions matched the solved epochs")
    return metrics_from_errors(errors, len(solutions), n_conv)


ELEVATION_BINS = ((0.0, 30.0), (30.0, 60.0), (60.0, 90.0))


@dataclass
class BinReport:
    lo_deg: float
    hi_deg: float
    n_true_nlos: int
    n_detected: int
    share_pct: float
    accuracy_pct: float | None


@dataclass
class DetectionReport:
    bins: list

    def row(self, i: int) -> BinReport:
        return self.bins[i]


def compute_detection_report(verdict_rows, truth_rows) -> DetectionReport:
    """Elevation-binned share of blocked satellites and detection accuracy.

    ``verdict_rows``: (epoch_s, sat_id, class, elev_deg); ``truth_rows``:
    (epoch_s, sat_id, true_class, delay). Detection accuracy in a bin is
    detected-blocked over truly-blocked; bins without truly blocked
    satellites report no accuracy instead of zero.
    """
    truth_rows = list(truth_rows)
    if not truth_rows:
        raise NoTruth("per-satellite truth is required for a detection report")
    truth_map = {(t, sat): cls for t, sat, cls, _ in truth_rows}
    per_bin_true = [0] * len(ELEVATION_BINS)
    per_bin_detected = [0] * len(ELEVATION_BINS)
    for row in verdict_rows:
        epoch_s, sat_id, cls, elev_deg = row[0], row[1], row[2], row[3]
        true_class = truth_map.get((round(epoch_s, 6), sat_id))
        if true_class != "NLOS":
            continue
        for i, (lo, hi) in enumerate(ELEVATION_BINS):
            last = i == len(ELEVATION_BINS) - 1
            if (lo <= elev_deg < hi) or (last and elev_deg == hi):
                per_bin_true[i] += 1
                if cls in (CNLOS, FNLOS):
                    per_bin_detected[i] += 1
                break
    total_true = sum(per_bin_true)
    bins = []
    for i, (lo, hi) in enumerate(ELEVATION_BINS):
        share = 100.0 * per_bin_true[i] / total_true if total_true else 0.0
        accuracy = (
            100.0 * per_bin_detected[i] / per_bin_true[i] if per_bin_true[i] else None
        )
        bins.append(BinReport(lo, hi, per_bin_true[i], per_bin_detected[i], share, accuracy))
    return DetectionReport(bins)
