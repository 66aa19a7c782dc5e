"""Synthetic urban-canyon scenes with an exact analytic oracle.

Scenes are built from vertical rectangular faces standing on a flat ground
plane, a receiver trajectory, and satellites at fixed elevation/azimuth.
The oracle answers visibility and single-bounce reflection questions by
exact ray-rectangle intersection and mirror-image construction; it shares
no machinery with the map-based detector, which is what makes the two
comparable in tests. The same scenes drive a field-of-view-limited LiDAR
sampler and a pseudorange synthesizer that injects the oracle's reflection
delays, producing datasets with per-satellite ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .frames import (
    EcefPosition,
    EnuPosition,
    GeodeticPosition,
    SatelliteDirection,
    ecef_to_geodetic,
    enu_rotation,
    enu_transform_at,
    geodetic_to_ecef,
)
from .measmodel import (
    AtmosphereContext,
    SatelliteObservation,
    ionospheric_delay,
    tropospheric_delay,
)

SATELLITE_RANGE_M = 2.2e7
_EPS = 1e-9


@dataclass(frozen=True)
class BuildingFace:
    """Vertical rectangle over a horizontal baseline segment.

    ``p1``/``p2`` are (east, north) endpoints [m], the face spans
    ``base_up_m`` to ``base_up_m + height_m`` vertically. ``active`` limits
    the face to a time interval, which is how short-lived blockers such as
    parked buses are modeled; None means always present.
    """

    p1: tuple
    p2: tuple
    height_m: float
    base_up_m: float = 0.0
    active: tuple | None = None

    def __post_init__(self):
        if self.height_m <= 0:
            raise ValueError("face height must be positive")
        d = np.subtract(self.p2, self.p1, dtype=float)
        length = float(np.hypot(d[0], d[1]))
        if length < 1e-9:
            raise ValueError("face baseline is degenerate")

    @property
    def length_m(self) -> float:
        return float(np.hypot(self.p2[0] - self.p1[0], self.p2[1] - self.p1[1]))

    @property
    def axis(self) -> np.ndarray:
        d = np.array([self.p2[0] - self.p1[0], self.p2[1] - self.p1[1]])
        return d / np.linalg.norm(d)

    @property
    def normal(self) -> np.ndarray:
        a = self.axis
        return np.array([a[1], -a[0]])

    def active_at(self, t: float) -> bool:
        return self.active is None or (self.active[0] <= t <= self.active[1])


@dataclass(frozen=True)
class SatelliteSpec:
    sat_id: str
    constellation: str
    direction: SatelliteDirection
    clock_bias_m: float = 0.0


@dataclass
class LidarModel:
    """Scanner geometry: vertical field of view, ring/azimuth grid, range."""

    vertical_fov_deg: tuple = (-30.0, 10.0)
    n_scan_rings: int = 16
    horizontal_resolution_deg: float = 1.5
    max_range_m: float = 150.0
    ground: bool = True

    def __post_init__(self):
        if self.vertical_fov_deg[0] >= self.vertical_fov_deg[1]:
            raise ValueError("vertical FOV must be an increasing interval")
        if self.max_range_m <= 0:
            raise ValueError("max_range_m must be positive")


@dataclass
class SceneSpec:
    """Scene geometry plus everything the synthesizer needs."""

    name: str = "scene"
    anchor: GeodeticPosition = field(
        default_factory=lambda: GeodeticPosition(math.radians(22.3), math.radians(114.18), 5.0)
    )
    faces: list = field(default_factory=list)
    satellites: list = field(default_factory=list)
    traj_times: np.ndarray = field(default_factory=lambda: np.array([0.0]))
    traj_positions: np.ndarray = field(default_factory=lambda: np.zeros((1, 3)))
    traj_headings: np.ndarray = field(default_factory=lambda: np.array([0.0]))
    sensor_height_m: float = 1.8
    noise_sigma_m: float = 0.0
    seed: int = 0
    atmosphere: bool = False
    klobuchar_alpha: tuple = (1.118e-8, 2.98e-8, -1.79e-7, 0.0)
    klobuchar_beta: tuple = (1.167e5, 1.638e5, -3.28e5, -4.59e5)
    truth_clock_bias_m: float = 120.0
    lidar: LidarModel = field(default_factory=LidarModel)
    lidar_rate_hz: float = 10.0
    lidar_leadin_s: float = 25.0

    def active_faces(self, t: float) -> list:
        return [f for f in self.faces if f.active_at(t)]

    def epochs(self) -> np.ndarray:
        return np.asarray(self.traj_times, dtype=float)

    def pose_at(self, t: float) -> tuple[np.ndarray, float]:
        """Sensor position (scene ENU, includes sensor height) and heading at ``t``.

        Linear interpolation inside the trajectory, linear extrapolation
        outside it (used for the LiDAR lead-in before the first epoch).
        """
        times = np.asarray(self.traj_times, dtype=float)
        pos = np.asarray(self.traj_positions, dtype=float)
        if len(times) == 1:
            return pos[0].copy(), float(self.traj_headings[0])
        i = int(np.clip(np.searchsorted(times, t) - 1, 0, len(times) - 2))
        span = times[i + 1] - times[i]
        frac = (t - times[i]) / span if span > 0 else 0.0
        p = pos[i] + frac * (pos[i + 1] - pos[i])
        h = self.traj_headings[i] + frac * (self.traj_headings[i + 1] - self.traj_headings[i])
        return p, float(h)


def heading_rotation(heading_rad: float) -> np.ndarray:
    """Body-to-ENU rotation for a level vehicle. Body x is forward, y left,
    z up; heading is compass-style, clockwise from north."""
    sh, ch = math.sin(heading_rad), math.cos(heading_rad)
    forward = np.array([sh, ch, 0.0])
    left = np.array([-ch, sh, 0.0])
    up = np.array([0.0, 0.0, 1.0])
    return np.column_stack([forward, left, up])


def _direction_unit(direction: SatelliteDirection) -> np.ndarray:
    ce = math.cos(direction.elevation_rad)
    return np.array(
        [
            math.sin(direction.azimuth_rad) * ce,
            math.cos(direction.azimuth_rad) * ce,
            math.sin(direction.elevation_rad),
        ]
    )


def _ray_face_hit(face: BuildingFace, origin: np.ndarray, u: np.ndarray):
    """Ray parameter and point where the ray meets the face rectangle, or None."""
    n = face.normal
    denom = u[0] * n[0] + u[1] * n[1]
    if abs(denom) < 1e-12:
        return None
    t = ((face.p1[0] - origin[0]) * n[0] + (face.p1[1] - origin[1]) * n[1]) / denom
    if t <= _EPS:
        return None
    q = origin + t * u
    a = face.axis
    s = (q[0] - face.p1[0]) * a[0] + (q[1] - face.p1[1]) * a[1]
    if s < 0.0 or s > face.length_m:
        return None
    if q[2] < face.base_up_m or q[2] > face.base_up_m + face.height_m:
        return None
    return t, q


def oracle_visibility(
    faces, rx, direction: SatelliteDirection, max_horizontal_m: float = 250.0
) -> tuple[str, np.ndarray | None]:
    """Exact visibility: ("LOS", None) or ("NLOS", nearest_hit_point).

    A satellite is blocked when the ray from ``rx`` along ``direction``
    meets any face within ``max_horizontal_m`` horizontal distance.
    """
    origin = rx.as_array() if isinstance(rx, EnuPosition) else np.asarray(rx, dtype=float)
    u = _direction_unit(direction)
    best = None
    for face in faces:
        hit = _ray_face_hit(face, origin, u)
        if hit is None:
            continue
        t, q = hit
        if math.hypot(q[0] - origin[0], q[1] - origin[1]) > max_horizontal_m:
            continue
        if best is None or t < best[0]:
            best = (t, q)
    if best is None:
        return "LOS", None
    return "NLOS", best[1]


def _segment_blocked(faces, a: np.ndarray, b: np.ndarray, skip_face=None) -> bool:
    """True if the open segment a->b crosses any face rectangle."""
    d = b - a
    length = float(np.linalg.norm(d))
    if length < _EPS:
        return False
    u = d / length
    for face in faces:
        if face is skip_face:
            continue
        hit = _ray_face_hit(face, a, u)
        if hit is not None and hit[0] < length - 1e-6:
            return True
    return False


def oracle_reflection(
    faces, rx, direction: SatelliteDirection
) -> tuple[np.ndarray, float] | None:
    """Shortest-extra-path single-bounce reflection, or None.

    For each face the receiver is mirrored across the face plane; a
    specular path exists when the ray from the mirror image along the
    satellite direction pierces the face rectangle, the reflected leg back
    to the receiver is unobstructed, and the reflection point itself sees
    the satellite. The extra path length follows exactly from the mirror
    construction.
    """
    origin = rx.as_array() if isinstance(rx, EnuPosition) else np.asarray(rx, dtype=float)
    u = _direction_unit(direction)
    best = None
    for face in faces:
        n = face.normal
        d_signed = (origin[0] - face.p1[0]) * n[0] + (origin[1] - face.p1[1]) * n[1]
        if abs(d_signed) < _EPS:
            continue
        mirrored = origin - 2.0 * d_signed * np.array([n[0], n[1], 0.0])
        hit = _ray_face_hit(face, mirrored, u)
        if hit is None:
            continue
        _, q = hit
        extra = 2.0 * d_signed * (u[0] * n[0] + u[1] * n[1])
        if extra <= 0.0:
            continue  # satellite is behind the face
        if _segment_blocked(faces, origin, q, skip_face=face):
            continue
        sky_from_q, _ = oracle_visibility(
            [f for f in faces if f is not face], q + 1e-6 * u, direction
        )
        if sky_from_q == "NLOS":
            continue
        if best is None or extra < best[1]:
            best = (q, extra)
    return best


def facade_pointcloud(faces, spacing_m: float) -> np.ndarray:
    """Grid every face at ``spacing_m`` in both in-plane directions."""
    chunks = []
    for face in faces:
        n_s = max(2, int(math.ceil(face.length_m / spacing_m)) + 1)
        n_z = max(2, int(math.ceil(face.height_m / spacing_m)) + 1)
        s = np.linspace(0.0, face.length_m, n_s)
        z = np.linspace(face.base_up_m, face.base_up_m + face.height_m, n_z)
        a = face.axis
        base = np.array([face.p1[0], face.p1[1]])
        ss, zz = np.meshgrid(s, z, indexing="ij")
        pts = np.empty((ss.size, 3))
        pts[:, 0] = base[0] + ss.ravel() * a[0]
        pts[:, 1] = base[1] + ss.ravel() * a[1]
        pts[:, 2] = zz.ravel()
        chunks.append(pts)
    return np.vstack(chunks) if chunks else np.empty((0, 3))


def ray_clearance(
    faces, origin, direction: SatelliteDirection, max_range_m: float = 250.0
) -> float:
    """How comfortably a ray avoids every face's edges.

    For a face the ray pierces, the clearance is the in-plane distance from
    the hit point to the rectangle boundary; for every other face it is the
    closest approach between the sampled ray and the rectangle. The minimum
    over faces tells how far the ray is from any geometrically ambiguous
    configuration; rays with large clearance are the ones on which a
    sampled-map detector and the exact oracle must agree.
    """
    o = np.asarray(origin, dtype=float)
    u = _direction_unit(direction)
    ts = np.arange(0.0, max_range_m, 0.25)
    samples = o[None, :] + ts[:, None] * u[None, :]
    clearance = math.inf
    for face in faces:
        hit = _ray_face_hit(face, o, u)
        if hit is not None:
            _, q = hit
            a = face.axis
            s = (q[0] - face.p1[0]) * a[0] + (q[1] - face.p1[1]) * a[1]
            z = q[2] - face.base_up_m
            margin = min(s, face.length_m - s, z, face.height_m - z)
            clearance = min(clearance, margin)
            continue
        n = face.normal
        a = face.axis
        rel_e = samples[:, 0] - face.p1[0]
        rel_n = samples[:, 1] - face.p1[1]
        d_plane = rel_e * n[0] + rel_n * n[1]
        s = rel_e * a[0] + rel_n * a[1]
        ds = np.maximum(np.maximum(-s, s - face.length_m), 0.0)
        z = samples[:, 2] - face.base_up_m
        dz = np.maximum(np.maximum(-z, z - face.height_m), 0.0)
        dist = np.sqrt(d_plane**2 + ds**2 + dz**2)
        clearance = min(clearance, float(dist.min()))
    return clearance


def sample_pointcloud(
    faces, sensor_position, heading_rad: float, lidar: LidarModel,
    azimuth_phase_rad: float = 0.0,
) -> np.ndarray:
    """One LiDAR sweep, returned in the sensor body frame.

    Rays are cast on the ring/azimuth grid from the sensor position; each
    returns its first intersection with a face or, below the horizon, the
    ground plane, within ``max_range_m``. The vertical field of view is
    what keeps single sweeps from seeing building tops.
    ``azimuth_phase_rad`` shifts the whole azimuth grid; the spindle phase
    of a spinning scanner is not locked to frame boundaries, and without
    the shift a straight constant-speed trajectory would paint walls in
    artificial discrete height bands.
    """
    origin = np.asarray(sensor_position, dtype=float)
    rings = np.radians(
        np.linspace(lidar.vertical_fov_deg[0], lidar.vertical_fov_deg[1], lidar.n_scan_rings)
    )
    azimuths = np.radians(
        np.arange(0.0, 360.0, lidar.horizontal_resolution_deg)
    ) + heading_rad + azimuth_phase_rad
    el, az = np.meshgrid(rings, azimuths, indexing="ij")
    el, az = el.ravel(), az.ravel()
    u = np.column_stack([np.sin(az) * np.cos(el), np.cos(az) * np.cos(el), np.sin(el)])

    t_hit = np.full(len(u), np.inf)
    if lidar.ground:
        down = u[:, 2] < -1e-12
        t_ground = np.where(down, -origin[2] / np.where(down, u[:, 2], -1.0), np.inf)
        t_hit = np.minimum(t_hit, np.where(t_ground > _EPS, t_ground, np.inf))
    for face in faces:
        n = face.normal
        denom = u[:, 0] * n[0] + u[:, 1] * n[1]
        safe = np.abs(denom) > 1e-12
        t = np.where(
            safe,
            ((face.p1[0] - origin[0]) * n[0] + (face.p1[1] - origin[1]) * n[1])
            / np.where(safe, denom, 1.0),
            -1.0,
        )
        q = origin[None, :] + np.where(t > _EPS, t, 0.0)[:, None] * u
        a = face.axis
        s = (q[:, 0] - face.p1[0]) * a[0] + (q[:, 1] - face.p1[1]) * a[1]
        ok = (
            (t > _EPS)
            & (s >= 0.0)
            & (s <= face.length_m)
            & (q[:, 2] >= face.base_up_m)
            & (q[:, 2] <= face.base_up_m + face.height_m)
        )
        t_hit = np.where(ok & (t < t_hit), t, t_hit)

    valid = np.isfinite(t_hit) & (t_hit <= lidar.max_range_m)
    points_scene = origin[None, :] + t_hit[valid, None] * u[valid]
    r = heading_rotation(heading_rad)
    return (points_scene - origin[None, :]) @ r


@dataclass(frozen=True)
class TruthRecord:
    """Ground-truth label for one satellite at one epoch."""

    epoch_s: float
    sat_id: str
    true_class: str                      # "LOS" or "NLOS"
    reflecting_point: np.ndarray | None  # scene frame, when a specular path exists
    extra_path_m: float                  # 0.0 when no specular path
    clean_range_m: float
    noise_m: float


def _synthetic_snr(true_class: str, elevation_rad: float) -> float:
    snr = 45.0 - 15.0 * (1.0 - math.sin(elevation_rad))
    if true_class == "NLOS":
        snr -= 15.0
    return min(max(snr, 10.0), 55.0)


def synthesize_observations(scene: SceneSpec, rng: np.random.Generator):
    """Per-epoch observations plus ground truth for a whole scene.

    Returns ``(epochs, truth_records, truth_positions)`` where ``epochs``
    maps epoch time to a list of SatelliteObservation, ``truth_records``
    is a flat list of TruthRecord, and ``truth_positions`` maps epoch time
    to the receiver's true geodetic position. Pseudoranges carry the
    receiver/satellite clock biases, optional atmospheric delays, the
    oracle's reflection delay for blocked satellites that have a specular
    path, and Gaussian noise.
    """
    to_ecef = enu_transform_at(scene.anchor)
    epochs: dict[float, list[SatelliteObservation]] = {}
    truth_records: list[TruthRecord] = []
    truth_positions: dict[float, GeodeticPosition] = {}

    for t in scene.epochs():
        t = float(t)
        rx_scene, _ = scene.pose_at(t)
        faces = scene.active_faces(t)
        rx_ecef = EcefPosition.from_array(to_ecef.apply(rx_scene))
        rx_geo = ecef_to_geodetic(rx_ecef)
        local_enu = enu_rotation(rx_geo.latitude_rad, rx_geo.longitude_rad)
        truth_positions[t] = rx_geo
        obs_list = []
        for sat in scene.satellites:
            direction = sat.direction
            true_class, _hit = oracle_visibility(faces, rx_scene, direction)
            reflection = None
            if true_class == "NLOS":
                reflection = oracle_reflection(faces, rx_scene, direction)
            extra = reflection[1] if reflection else 0.0
            refl_point = reflection[0] if reflection else None

            sat_ecef = EcefPosition.from_array(
                rx_ecef.as_array() + SATELLITE_RANGE_M * (local_enu @ direction.unit_enu())
            )
            clean_range = SATELLITE_RANGE_M
            iono = tropo = 0.0
            if scene.atmosphere:
                ctx = AtmosphereContext(
                    scene.klobuchar_alpha, scene.klobuchar_beta, rx_geo, t
                )
                iono = ionospheric_delay(ctx, direction.elevation_rad, direction.azimuth_rad)
                tropo = tropospheric_delay(ctx, direction.elevation_rad)
            noise = rng.normal(0.0, scene.noise_sigma_m) if scene.noise_sigma_m > 0 else 0.0
            pseudorange = (
                clean_range
                + scene.truth_clock_bias_m
                - sat.clock_bias_m
                + iono
                + tropo
                + extra
                + noise
            )
            obs_list.append(
                SatelliteObservation(
                    epoch_s=t,
                    sat_id=sat.sat_id,
                    constellation=sat.constellation,
                    pseudorange_m=pseudorange,
                    snr_dbhz=_synthetic_snr(true_class, direction.elevation_rad),
                    sat_pos_ecef=sat_ecef,
                    sat_clock_bias_m=sat.clock_bias_m,
                )
            )
            truth_records.append(
                TruthRecord(t, sat.sat_id, true_class, refl_point, extra, clean_range, noise)
            )
        epochs[t] = obs_list
    return epochs, truth_records, truth_positions


def generate_lidar_frames(scene: SceneSpec):
    """Yield (timestamp, body_points, position, heading) for the whole run.

    Frames start one lead-in before the first epoch so every epoch has a
    full window of history, and run at ``lidar_rate_hz`` until the last.
    """
    times = scene.epochs()
    t0 = float(times[0]) - scene.lidar_leadin_s
    t1 = float(times[-1])
    dt = 1.0 / scene.lidar_rate_hz
    n = int(round((t1 - t0) / dt)) + 1
    res = math.radians(scene.lidar.horizontal_resolution_deg)
    for i in range(n):
        t = t0 + i * dt
        pos, heading = scene.pose_at(t)
        phase = (i * 0.6180339887498949) % 1.0 * res
        pts = sample_pointcloud(scene.active_faces(t), pos, heading, scene.lidar, phase)
        yield t, pts, pos, heading
