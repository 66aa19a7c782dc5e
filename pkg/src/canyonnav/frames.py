"""Coordinate frames and receiver-to-satellite geometry.

Conversions between earth-centered earth-fixed (ECEF) coordinates, WGS-84
geodetic coordinates and local east-north-up (ENU) frames, plus the
elevation/azimuth geometry every other module builds on.

Conventions
-----------
* Angles are radians, distances meters, unless a name says otherwise.
* Azimuth is measured clockwise from north: azimuth 0 points north,
  pi/2 points east. Elevation is measured up from the local horizon.
* ``FrameTransform`` applies ``rotation @ p + translation``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

WGS84_A = 6378137.0                    # semi-major axis [m]
WGS84_F = 1.0 / 298.257223563          # flattening
WGS84_B = WGS84_A * (1.0 - WGS84_F)    # semi-minor axis [m]
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)   # first eccentricity squared

ROTATION_TOL = 1e-10


class DegeneratePosition(ValueError):
    """Position too close to the geocenter for a geodetic conversion."""


class DegenerateGeometry(ValueError):
    """Two positions (nearly) coincide where a direction is required."""


@dataclass(frozen=True)
class EcefPosition:
    """Cartesian position in the earth-centered earth-fixed frame [m]."""

    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, a) -> "EcefPosition":
        a = np.asarray(a, dtype=float).reshape(3)
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class GeodeticPosition:
    """Latitude/longitude [rad] and ellipsoidal height [m] on WGS-84."""

    latitude_rad: float
    longitude_rad: float
    height_m: float


@dataclass(frozen=True)
class EnuPosition:
    """East/north/up offset [m] from a declared anchor point."""

    east_m: float
    north_m: float
    up_m: float

    def as_array(self) -> np.ndarray:
        return np.array([self.east_m, self.north_m, self.up_m], dtype=float)


@dataclass(frozen=True)
class SatelliteDirection:
    """Line-of-sight direction given as elevation and azimuth.

    Azimuth is clockwise from north and normalised to [0, 2*pi). For
    directions used in sky searches the elevation is expected in
    [0, pi/2]; :func:`satellite_direction` can return negative elevations
    for satellites below the local horizon, which callers normally mask.
    """

    elevation_rad: float
    azimuth_rad: float

    def unit_enu(self) -> np.ndarray:
        """Unit vector (east, north, up) pointing along this direction."""
        ce = math.cos(self.elevation_rad)
        return np.array(
            [
                math.sin(self.azimuth_rad) * ce,
                math.cos(self.azimuth_rad) * ce,
                math.sin(self.elevation_rad),
            ]
        )


def rotation_is_orthonormal(rotation: np.ndarray, tol: float = ROTATION_TOL) -> bool:
    """True if ``rotation`` is a proper rotation matrix within ``tol``."""
    r = np.asarray(rotation, dtype=float)
    if r.shape != (3, 3):
        return False
    err = np.abs(r.T @ r - np.eye(3)).max()
    return bool(err < tol and abs(np.linalg.det(r) - 1.0) < tol)


@dataclass(frozen=True)
class FrameTransform:
    """Rigid transform ``p -> rotation @ p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float).reshape(3, 3)
        tra = np.array(self.translation, dtype=float).reshape(3)
        rot.setflags(write=False)
        tra.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @classmethod
    def identity(cls) -> "FrameTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        """Transform one point (3,) or a batch (N, 3)."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return self.rotation @ pts + self.translation
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "FrameTransform") -> "FrameTransform":
        """Transform equal to applying ``other`` first, then ``self``."""
        return FrameTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "FrameTransform":
        rt = self.rotation.T
        return FrameTransform(rt, -rt @ self.translation)

    def is_rigid(self, tol: float = ROTATION_TOL) -> bool:
        return rotation_is_orthonormal(self.rotation, tol)


def geodetic_to_ecef(g: GeodeticPosition) -> EcefPosition:
    """Convert a WGS-84 geodetic position to ECEF coordinates.

    Parameters
    ----------
    g : GeodeticPosition
        Latitude/longitude in radians, ellipsoidal height in meters.

    Returns
    -------
    EcefPosition
    """
    sin_lat = math.sin(g.latitude_rad)
    cos_lat = math.cos(g.latitude_rad)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    x = (n + g.height_m) * cos_lat * math.cos(g.longitude_rad)
    y = (n + g.height_m) * cos_lat * math.sin(g.longitude_rad)
    z = (n * (1.0 - WGS84_E2) + g.height_m) * sin_lat
    return EcefPosition(x, y, z)


def ecef_to_geodetic(p: EcefPosition) -> GeodeticPosition:
    """Convert ECEF coordinates to WGS-84 geodetic coordinates.

    Fixed-point iteration on the latitude, run to machine precision so the
    round trip with :func:`geodetic_to_ecef` closes well below 1e-6 m
    anywhere a vehicle can be.

    Raises
    ------
    DegeneratePosition
        If the point lies within 6000 km of the geocenter.
    """
    x, y, z = p.x, p.y, p.z
    if math.sqrt(x * x + y * y + z * z) <= 6e6:
        raise DegeneratePosition("position is inside the Earth: |p| <= 6e6 m")
    rho = math.hypot(x, y)
    lon = math.atan2(y, x)
    if rho < 1e-9:
        lat = math.copysign(math.pi / 2.0, z)
        return GeodeticPosition(lat, 0.0, abs(z) - WGS84_B)
    lat = math.atan2(z, rho * (1.0 - WGS84_E2))
    for _ in range(30):
        sin_lat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        h = rho / math.cos(lat) - n
        lat_next = math.atan2(z, rho * (1.0 - WGS84_E2 * n / (n + h)))
        if abs(lat_next - lat) < 1e-15:
            lat = lat_next
            break
        lat = lat_next
    sin_lat = math.sin(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    h = rho / math.cos(lat) - n
    return GeodeticPosition(lat, lon, h)


def enu_rotation(latitude_rad: float, longitude_rad: float) -> np.ndarray:
    """Rotation whose columns are the ENU axes expressed in ECEF."""
    sl, cl = math.sin(latitude_rad), math.cos(latitude_rad)
    so, co = math.sin(longitude_rad), math.cos(longitude_rad)
    east = np.array([-so, co, 0.0])
    north = np.array([-sl * co, -sl * so, cl])
    up = np.array([cl * co, cl * so, sl])
    return np.column_stack([east, north, up])


def enu_transform_at(anchor: GeodeticPosition) -> FrameTransform:
    """Transform mapping local ENU vectors at ``anchor`` into ECEF.

    The returned transform takes a point expressed in the ENU frame anchored
    at ``anchor`` and produces its ECEF coordinates; its rotation columns are
    the local east, north and up axes.
    """
    ecef = geodetic_to_ecef(anchor)
    return FrameTransform(
        enu_rotation(anchor.latitude_rad, anchor.longitude_rad), ecef.as_array()
    )


def satellite_direction(sat: EcefPosition, rx: EcefPosition) -> SatelliteDirection:
    """Elevation/azimuth of the receiver-to-satellite line of sight.

    Elevation is ``asin`` of the up component of the unit line of sight in
    the ENU frame at the receiver; azimuth is ``atan2(east, north)``
    normalised to [0, 2*pi). A satellite at the local zenith gets azimuth 0.

    Raises
    ------
    DegenerateGeometry
        If satellite and receiver are within 1 km of each other.
    """
    diff = sat.as_array() - rx.as_array()
    dist = float(np.linalg.norm(diff))
    if dist <= 1e3:
        raise DegenerateGeometry("satellite and receiver positions coincide")
    g = ecef_to_geodetic(rx)
    enu = enu_rotation(g.latitude_rad, g.longitude_rad).T @ diff
    unit = enu / dist
    elevation = math.asin(min(1.0, max(-1.0, float(unit[2]))))
    if math.hypot(float(unit[0]), float(unit[1])) < 1e-8:
        return SatelliteDirection(elevation, 0.0)  # zenith: azimuth by convention
    azimuth = math.atan2(float(unit[0]), float(unit[1])) % (2.0 * math.pi)
    return SatelliteDirection(elevation, azimuth)
