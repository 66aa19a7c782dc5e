"""Satellite visibility classification and reflector search on the map.

Visibility is decided by marching a search point from the LiDAR center
along the receiver-to-satellite direction in fixed increments and counting
map neighbors at every step: enough neighbors means the line of sight is
blocked. The check needs no receiver position estimate; it is a pure
function of the map, the direction and the search parameters.

For a blocked satellite, the most probable reflecting point is found by
sweeping the full azimuth circle at the satellite's elevation (a single
specular bounce off a vertical surface preserves elevation), keeping every
first blocking map point that itself has an unobstructed view toward the
satellite, and choosing the one closest to the receiver. The extra path
travelled by the reflected signal is twice the horizontal receiver-to-
reflector distance times the cosine of the elevation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .frames import SatelliteDirection
from .swm import SlidingWindowMap

LOS = "LOS"
NLOS = "NLOS"
CNLOS = "CNLOS"   # blocked, reflector found, delay corrected
FNLOS = "FNLOS"   # blocked, reflector not found, de-weighted only


class DegenerateReflector(ValueError):
    """Reflecting point sits (nearly) directly above the receiver."""


@dataclass(frozen=True)
class DetectionParams:
    """Tuning of the ray-march visibility check and the reflector sweep."""

    step_m: float = 1.0
    max_range_m: float = 250.0
    neighbor_threshold: int = 5
    neighbor_radius_m: float = 1.0
    azimuth_resolution_rad: float = math.radians(1.0)
    self_occlusion_radius_m: float = 2.0

    def __post_init__(self):
        if self.step_m <= 0:
            raise ValueError("step_m must be positive")
        if self.max_range_m < self.step_m:
            raise ValueError("max_range_m must be at least one step")
        if self.neighbor_threshold < 1:
            raise ValueError("neighbor_threshold must be >= 1")
        if self.azimuth_resolution_rad <= 0:
            raise ValueError("azimuth_resolution_rad must be positive")


@dataclass(frozen=True)
class VisibilityVerdict:
    """Per-satellite visibility class with optional correction data."""

    sat_id: str
    visibility: str
    reflecting_point_enu: np.ndarray | None = None
    nlos_delay_m: float | None = None

    def __post_init__(self):
        if self.visibility not in (LOS, CNLOS, FNLOS):
            raise ValueError(f"bad visibility class {self.visibility!r}")
        has_point = self.reflecting_point_enu is not None
        has_delay = self.nlos_delay_m is not None
        if self.visibility == CNLOS:
            if not (has_point and has_delay):
                raise ValueError("corrected verdict requires reflecting point and delay")
            if self.nlos_delay_m < 0:
                raise ValueError("delay must be non-negative")
        elif has_point or has_delay:
            raise ValueError(f"{self.visibility} verdict must not carry correction data")
        if has_point:
            pt = np.asarray(self.reflecting_point_enu, dtype=float).reshape(3)
            object.__setattr__(self, "reflecting_point_enu", pt)


def ray_step(p, direction: SatelliteDirection, step_m: float) -> np.ndarray:
    """Advance a search point one increment along ``direction``."""
    return np.asarray(p, dtype=float) + step_m * direction.unit_enu()


def _march(
    swm: SlidingWindowMap,
    direction: SatelliteDirection,
    params: DetectionParams,
    origin: np.ndarray,
    exclude_center: np.ndarray | None = None,
) -> np.ndarray | None:
    """First search point with enough neighbors, or None if the ray is clear.

    ``exclude_center`` removes map points within the self-occlusion radius
    of that point from every neighbor count (used when checking sky
    visibility from a candidate reflector, which would otherwise always be
    blocked by its own wall neighborhood).
    """
    n_steps = int(math.floor(params.max_range_m / params.step_m + 1e-12))
    if n_steps < 1 or len(swm) == 0:
        return None
    ks = np.arange(1, n_steps + 1, dtype=float)
    pts = origin[None, :] + ks[:, None] * (params.step_m * direction.unit_enu())[None, :]
    counts = swm.count_within(pts, params.neighbor_radius_m)
    if exclude_center is not None:
        idx = swm.indices_within(exclude_center, params.self_occlusion_radius_m)
        if len(idx):
            excluded = swm.points_enu[idx]
            d2 = ((pts[:, None, :] - excluded[None, :, :]) ** 2).sum(axis=2)
            counts = counts - (d2 <= params.neighbor_radius_m**2).sum(axis=1)
    blocked = np.nonzero(counts >= params.neighbor_threshold)[0]
    if blocked.size == 0:
        return None
    return pts[blocked[0]]


def classify_visibility(
    swm: SlidingWindowMap,
    direction: SatelliteDirection,
    params: DetectionParams,
    origin=None,
) -> tuple[str, np.ndarray | None]:
    """Classify one line of sight as LOS or NLOS.

    Returns ``(LOS, None)`` if the march covers ``max_range_m`` without a
    blocked step, else ``(NLOS, first_blocked_step_point)``. ``origin``
    defaults to the map's recorded LiDAR center.
    """
    origin = swm.lidar_origin_enu if origin is None else np.asarray(origin, dtype=float)
    hit = _march(swm, direction, params, origin)
    return (LOS, None) if hit is None else (NLOS, hit)


def _nearest_map_point(swm: SlidingWindowMap, near, radius_m: float) -> np.ndarray | None:
    idx = swm.indices_within(near, radius_m)
    if len(idx) == 0:
        return None
    pts = swm.points_enu[idx]
    d2 = ((pts - np.asarray(near, dtype=float)) ** 2).sum(axis=1)
    return pts[int(np.argmin(d2))].copy()


def reflector_candidates(
    swm: SlidingWindowMap,
    direction: SatelliteDirection,
    params: DetectionParams,
    origin=None,
) -> list[tuple[float, np.ndarray, float]]:
    """All candidate reflecting points for a blocked satellite.

    Sweeps azimuths 0, a_res, 2*a_res, ... < 2*pi at the satellite's
    elevation. For each sweep direction the first blocking map point is a
    candidate if, ignoring its own immediate neighborhood, the view from it
    toward the true satellite direction is unobstructed.

    Returns a list of ``(sweep_azimuth_rad, point_enu, distance_m)`` in
    sweep order, distance measured 3-D from the search origin.
    """
    origin = swm.lidar_origin_enu if origin is None else np.asarray(origin, dtype=float)
    n_sweeps = int(math.ceil(2.0 * math.pi / params.azimuth_resolution_rad - 1e-12))
    candidates = []
    for i in range(n_sweeps):
        azimuth = i * params.azimuth_resolution_rad
        sweep_dir = SatelliteDirection(direction.elevation_rad, azimuth)
        step_hit = _march(swm, sweep_dir, params, origin)
        if step_hit is None:
            continue
        point = _nearest_map_point(swm, step_hit, params.neighbor_radius_m)
        if point is None:
            continue
        sky = _march(swm, direction, params, point, exclude_center=point)
        if sky is not None:
            continue
        candidates.append((azimuth, point, float(np.linalg.norm(point - origin))))
    return candidates


def find_reflector(
    swm: SlidingWindowMap,
    direction: SatelliteDirection,
    params: DetectionParams,
    origin=None,
) -> tuple[np.ndarray, float] | None:
    """Most probable reflecting point for a blocked satellite.

    Returns ``(point_enu, distance_m)`` for the candidate closest to the
    receiver (ties broken by smaller sweep azimuth), or None when no sweep
    direction yields a sky-visible blocking point.
    """
    candidates = reflector_candidates(swm, direction, params, origin)
    if not candidates:
        return None
    best = min(candidates, key=lambda c: (c[2], c[0]))
    return best[1], best[2]


def nlos_delay(reflecting_point_enu, origin, elevation_rad: float) -> float:
    """Extra path length picked up by a single specular reflection.

    Computed as twice the horizontal (east-north) receiver-to-reflector
    distance times cos(elevation); this closed form is exact for a vertical
    reflector facing the satellite and stays finite at high elevations.

    Raises
    ------
    DegenerateReflector
        If the reflector sits within 1e-6 m horizontally of the receiver.
    """
    p = np.asarray(reflecting_point_enu, dtype=float)
    o = np.asarray(origin, dtype=float)
    horizontal = math.hypot(p[0] - o[0], p[1] - o[1])
    if horizontal < 1e-6:
        raise DegenerateReflector("reflecting point is directly above the receiver")
    return 2.0 * horizontal * math.cos(elevation_rad)


def classify_and_correct(
    swm: SlidingWindowMap,
    direction: SatelliteDirection,
    params: DetectionParams,
    origin=None,
    sat_id: str = "",
) -> VisibilityVerdict:
    """Full per-satellite verdict: LOS, corrected NLOS, or de-weight-only NLOS."""
    origin = swm.lidar_origin_enu if origin is None else np.asarray(origin, dtype=float)
    visibility, _ = classify_visibility(swm, direction, params, origin)
    if visibility == LOS:
        return VisibilityVerdict(sat_id, LOS)
    found = find_reflector(swm, direction, params, origin)
    if found is None:
        return VisibilityVerdict(sat_id, FNLOS)
    point, _dist = found
    try:
        delay = nlos_delay(point, origin, direction.elevation_rad)
    except DegenerateReflector:
        return VisibilityVerdict(sat_id, FNLOS)
    return VisibilityVerdict(sat_id, CNLOS, reflecting_point_enu=point, nlos_delay_m=delay)
