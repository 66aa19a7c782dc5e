"""Sliding-window point-cloud map in the local ENU frame.

A window of recent LiDAR frames is registered into the newest frame's body
frame (registration poses are inputs, supplied by whatever odometry is in
use), pushed through the sensor extrinsics into the receiver body frame and
then into local ENU using the current vehicle orientation. Ground returns
are dropped by a height gate, remaining points are optionally thinned on a
voxel grid, and the result is frozen behind a kd-tree for exact
radius-count queries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .frames import FrameTransform, GeodeticPosition


class EmptyWindow(ValueError):
    """No frames were supplied to the map builder."""


class BadPose(ValueError):
    """A registration or orientation rotation failed the orthonormality check."""


@dataclass(frozen=True)
class PointCloudFrame:
    """One LiDAR sweep: points (N, 3) [m] in the LiDAR body frame."""

    timestamp_s: float
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class RegistrationPose:
    """Transform taking this frame's body coordinates into the newest frame's body frame."""

    timestamp_s: float
    transform: FrameTransform


@dataclass(frozen=True)
class Calibration:
    """Fixed extrinsics between LiDAR and GNSS receiver.

    ``lidar_to_receiver`` maps LiDAR body points into the receiver body
    frame; ``receiver_lever_arm_enu`` is the receiver antenna offset applied
    after rotating into ENU.
    """

    lidar_to_receiver: FrameTransform = field(default_factory=FrameTransform.identity)
    receiver_lever_arm_enu: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        lever = np.asarray(self.receiver_lever_arm_enu, dtype=float).reshape(3)
        object.__setattr__(self, "receiver_lever_arm_enu", lever)


@dataclass
class SwmConfig:
    """Map assembly settings.

    ``ground_height_m`` is the keep-threshold above local ground; points
    whose ENU up coordinate falls below ``ground_height_m - sensor_height_m``
    (ground sits one sensor height below the LiDAR origin) are discarded.
    ``voxel_m`` <= 0 disables thinning.
    """

    n_sw: int = 200
    ground_height_m: float = 0.5
    voxel_m: float = 0.2
    sensor_height_m: float = 1.8


class SlidingWindowMap:
    """Immutable accumulated point cloud with an exact radius-count index."""

    def __init__(
        self,
        points_enu: np.ndarray,
        anchor: GeodeticPosition | None = None,
        window_size: int = 0,
        lidar_origin_enu=None,
    ):
        pts = np.asarray(points_enu, dtype=float).reshape(-1, 3).copy()
        pts.setflags(write=False)
        self.points_enu = pts
        self.anchor = anchor
        self.window_size = window_size
        origin = np.zeros(3) if lidar_origin_enu is None else np.asarray(
            lidar_origin_enu, dtype=float
        ).reshape(3).copy()
        origin.setflags(write=False)
        self.lidar_origin_enu = origin
        self._tree = cKDTree(pts) if len(pts) else None

    def __len__(self) -> int:
        return len(self.points_enu)

    def count_within(self, centers, radius_m: float) -> np.ndarray:
        """Exact number of map points within ``radius_m`` of each center."""
        centers = np.asarray(centers, dtype=float)
        squeeze = centers.ndim == 1
        centers = centers.reshape(-1, 3)
        if self._tree is None:
            counts = np.zeros(len(centers), dtype=np.intp)
        else:
            counts = self._tree.query_ball_point(centers, radius_m, return_length=True)
            counts = np.asarray(counts, dtype=np.intp)
        return counts[0] if squeeze else counts

    def indices_within(self, center, radius_m: float) -> np.ndarray:
        """Sorted indices of map points within ``radius_m`` of ``center``."""
        if self._tree is None:
            return np.empty(0, dtype=np.intp)
        idx = self._tree.query_ball_point(np.asarray(center, dtype=float), radius_m)
        return np.sort(np.asarray(idx, dtype=np.intp))


def transform_point_to_receiver_frame(p_bl, calib: Calibration) -> np.ndarray:
    """Map a LiDAR body point into the receiver body frame."""
    return calib.lidar_to_receiver.apply(np.asarray(p_bl, dtype=float))


def transform_point_to_enu(
    p_bl, ahrs_rotation: FrameTransform, calib: Calibration
) -> np.ndarray:
    """Map a LiDAR body point into local ENU.

    The chain is LiDAR body -> receiver body (extrinsics) -> ENU (vehicle
    orientation), with the receiver lever arm added last.
    """
    p_br = transform_point_to_receiver_frame(p_bl, calib)
    return ahrs_rotation.rotation @ p_br + calib.receiver_lever_arm_enu


def _transform_points_to_enu(
    points: np.ndarray, ahrs_rotation: FrameTransform, calib: Calibration
) -> np.ndarray:
    p_br = calib.lidar_to_receiver.apply(points)
    return p_br @ ahrs_rotation.rotation.T + calib.receiver_lever_arm_enu


def _voxel_thin(points: np.ndarray, voxel_m: float) -> np.ndarray:
    """Keep the first point in each occupied voxel, preserving input order."""
    keys = np.floor(points / voxel_m).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]

def build_swm(
    frames,
    ahrs_rotation: FrameTransform,
    calib: Calibration,
    cfg: SwmConfig,
    anchor: GeodeticPosition | None = None,
) -> SlidingWindowMap:
    """Assemble the sliding-window map from registered LiDAR frames.

    Parameters
    ----------
    frames : list of (PointCloudFrame, RegistrationPose)
        Window frames, oldest first, newest last. Each pose maps its frame
        into the newest frame's body frame (the newest pose is identity).
    ahrs_rotation : FrameTransform
        Body-to-ENU orientation of the newest frame.
    calib : Calibration
        LiDAR/receiver extrinsics and lever arm.
    cfg : SwmConfig
        Window size, ground gate and voxel settings.
    anchor : GeodeticPosition, optional
        Geodetic anchor of the local ENU frame, recorded on the map.

    Raises
    ------
    EmptyWindow
        If ``frames`` is empty.
    BadPose
        If any rotation involved is not orthonormal.
    """
    if not frames:
        raise EmptyWindow("no frames in window")
    if len(frames) > cfg.n_sw:
        raise ValueError(f"window holds {len(frames)} frames, limit is n_sw={cfg.n_sw}")
    if not ahrs_rotation.is_rigid():
        raise BadPose("AHRS orientation is not orthonormal")
    if not calib.lidar_to_receiver.is_rigid():
        raise BadPose("LiDAR-to-receiver extrinsic rotation is not orthonormal")

    chunks = []
    for frame, pose in frames:
        if not pose.transform.is_rigid():
            raise BadPose(f"registration pose at t={pose.timestamp_s} is not orthonormal")
        if len(frame.points) == 0:
            continue
        registered = pose.transform.apply(frame.points)
        chunks.append(_transform_points_to_enu(registered, ahrs_rotation, calib))

    if chunks:
        points = np.vstack(chunks)
    else:
        points = np.empty((0, 3))

    # ground gate: ground level sits one sensor height below the LiDAR origin
    up_min = cfg.ground_height_m - cfg.sensor_height_m
    points = points[points[:, 2] >= up_min]

    if cfg.voxel_m > 0 and len(points):
        points = _voxel_thin(points, cfg.voxel_m)

    lidar_origin = transform_point_to_enu(np.zeros(3), ahrs_rotation, calib)
    return SlidingWindowMap(
        points, anchor=anchor, window_size=len(frames), lidar_origin_enu=lidar_origin
    )


def query_neighbors(swm: SlidingWindowMap, center, radius_m: float) -> int:
    """Exact count of map points within ``radius_m`` of ``center``."""
    if radius_m <= 0:
        raise ValueError("radius_m must be positive")
    return int(swm.count_within(np.asarray(center, dtype=float), radius_m))
