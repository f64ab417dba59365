"""Coordinate frames, calibration, and camera projection.

Frame conventions used throughout:

Lidar / vehicle frame (right-handed):
  - x forward, y left, z up; origin at the sensor.
  - Azimuth of a point is atan2(y, x), in (-pi, pi], 0 = straight ahead.

Camera frame (standard computer vision):
  - z along the optical axis into the scene, x right, y down.

Image frame:
  - u right (column), v down (row), in pixels. Integer coordinates are
    pixel centers. Projected points may lie outside the image bounds;
    consumers clip where needed.

World frame:
  - Arbitrary fixed frame the vehicle poses are expressed in; only yaw is
    consumed from the orientation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml


def wrap_angle(a: float | np.ndarray) -> float | np.ndarray:
    """Normalize an angle (radians) to (-pi, pi]."""
    wrapped = -((-np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi)
    if np.isscalar(a) or np.ndim(a) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Pose:
    """Timestamped vehicle position and heading in the world frame."""

    timestamp: float
    position: np.ndarray  # (3,) meters
    heading: float        # yaw, radians, normalized to (-pi, pi]

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "heading", wrap_angle(self.heading))


@dataclass(frozen=True)
class RigidTransform:
    """Rigid transform p' = R p + t with orthonormal R."""

    rotation: np.ndarray     # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got {m.shape}")
        return RigidTransform(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return self o other (apply `other` first)."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) array of points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation


def transform(p: np.ndarray, t: RigidTransform) -> np.ndarray:
    """Apply a rigid transform to a point: R p + t."""
    return t.apply(p)


def rotz(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_from_quaternion(qw: float, qx: float, qy: float, qz: float) -> float:
    """Extract yaw from a unit quaternion (w, x, y, z)."""
    return math.atan2(2.0 * (qw * qz + qx * qy), 1.0 - 2.0 * (qy * qy + qz * qz))


def pose_to_world(pose: Pose, sensor_height: float = 0.0) -> RigidTransform:
    """Sensor-to-world transform for a pose.

    The sensor sits `sensor_height` meters above the pose origin (the
    vehicle's ground contact point), sharing its yaw.
    """
    t = pose.position + np.array([0.0, 0.0, sensor_height])
    return RigidTransform(rotz(pose.heading), t)


@dataclass(frozen=True)
class LidarPoint:
    """Single lidar return in the sensor frame."""

    xyz: np.ndarray  # (3,) meters
    ring: int
    azimuth: float   # radians in (-pi, pi]

    def __post_init__(self):
        object.__setattr__(self, "xyz", np.asarray(self.xyz, dtype=float))


@dataclass
class Ring:
    """Points of one scan ring, sorted by azimuth."""

    xyz: np.ndarray      # (N, 3)
    azimuth: np.ndarray  # (N,) non-decreasing

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        self.azimuth = np.asarray(self.azimuth, dtype=float).reshape(-1)
        if self.xyz.shape[0] != self.azimuth.shape[0]:
            raise ValueError("xyz and azimuth length mismatch")

    def __len__(self) -> int:
        return self.xyz.shape[0]

    def sort(self) -> "Ring":
        order = np.argsort(self.azimuth, kind="stable")
        return Ring(self.xyz[order], self.azimuth[order])


@dataclass
class RingScan:
    """One lidar sweep grouped by scan ring."""

    rings: list[Ring]
    timestamp: float = 0.0

    @property
    def num_rings(self) -> int:
        return len(self.rings)

    def all_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Concatenate all rings; returns (xyz (N,3), ring index (N,))."""
        if not self.rings:
            return np.zeros((0, 3)), np.zeros(0, dtype=int)
        xyz = np.concatenate([r.xyz for r in self.rings if len(r)] or [np.zeros((0, 3))])
        idx = np.concatenate(
            [np.full(len(r), i, dtype=int) for i, r in enumerate(self.rings) if len(r)]
            or [np.zeros(0, dtype=int)]
        )
        return xyz, idx


@dataclass
class Calibration:
    """Camera intrinsics, lidar-camera extrinsics, and vehicle geometry."""

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float
    k2: float
    lidar_to_camera: RigidTransform
    track_width: float
    image_width: int
    image_height: int
    sensor_height: float = 0.0  # lidar mount height above the pose origin

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.image_width, self.image_height)

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.image_width and 0 <= self.cy < self.image_height):
            raise ValueError("principal point outside image")
        if self.track_width <= 0:
            raise ValueError("track_width must be positive")

    def scaled(self, width: int, height: int) -> "Calibration":
        """Intrinsics rescaled to a new image size (distortion unchanged)."""
        sx = width / self.image_width
        sy = height / self.image_height
        return Calibration(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy,
                           self.k1, self.k2, self.lidar_to_camera, self.track_width,
                           width, height, self.sensor_height)


def load_calibration(path: str | Path) -> Calibration:
    """Read a calibration file (YAML key/value, 4x4 row-major extrinsics)."""
    with open(path) as f:
        raw = yaml.safe_load(f)
    try:
        mat = np.asarray(raw["lidar_to_camera"], dtype=float).reshape(4, 4)
        calib = Calibration(
            fx=float(raw["fx"]), fy=float(raw["fy"]),
            cx=float(raw["cx"]), cy=float(raw["cy"]),
            k1=float(raw["k1"]), k2=float(raw["k2"]),
            lidar_to_camera=RigidTransform.from_matrix(mat),
            track_width=float(raw["track_width"]),
            image_width=int(raw["image_width"]),
            image_height=int(raw["image_height"]),
            sensor_height=float(raw.get("sensor_height", 0.0)),
        )
    except KeyError as e:
        raise ValueError(f"calibration file {path} missing key {e}") from e
    calib.validate()
    return calib


def save_calibration(calib: Calibration, path: str | Path) -> None:
    data = {
        "fx": float(calib.fx), "fy": float(calib.fy),
        "cx": float(calib.cx), "cy": float(calib.cy),
        "k1": float(calib.k1), "k2": float(calib.k2),
        "lidar_to_camera": [float(v) for v in calib.lidar_to_camera.as_matrix().reshape(-1)],
        "track_width": float(calib.track_width),
        "image_width": int(calib.image_width),
        "image_height": int(calib.image_height),
        "sensor_height": float(calib.sensor_height),
    }
    with open(path, "w") as f:
        yaml.safe_dump(data, f, sort_keys=False)


MIN_PROJECT_DEPTH = 1e-6


def project_point(p: np.ndarray, calib: Calibration) -> tuple[float, float] | None:
    """Project a camera-frame point to pixel coordinates.

    Returns None when the point lies behind or on the image plane.
    Applies two-term radial distortion before the intrinsics.
    """
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    if z <= MIN_PROJECT_DEPTH:
        return None
    xn, yn = x / z, y / z
    r2 = xn * xn + yn * yn
    d = 1.0 + calib.k1 * r2 + calib.k2 * r2 * r2
    return (calib.cx + calib.fx * xn * d, calib.cy + calib.fy * yn * d)


def project_points(points: np.ndarray, calib: Calibration) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) camera-frame points.

    Returns (uv (N, 2), valid (N,)); uv rows for invalid points are NaN.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    z = pts[:, 2]
    valid = z > MIN_PROJECT_DEPTH
    uv = np.full((pts.shape[0], 2), np.nan)
    if np.any(valid):
        xn = pts[valid, 0] / z[valid]
        yn = pts[valid, 1] / z[valid]
        r2 = xn * xn + yn * yn
        d = 1.0 + calib.k1 * r2 + calib.k2 * r2 * r2
        uv[valid, 0] = calib.cx + calib.fx * xn * d
        uv[valid, 1] = calib.cy + calib.fy * yn * d
    return uv, valid


def unproject_pixel(u: float, v: float, depth: float, calib: Calibration,
                    iterations: int = 10) -> np.ndarray:
    """Back-project a pixel at a known depth to a camera-frame point.

    Distortion is inverted by fixed-point iteration; exact when k1 = k2 = 0.
    """
    xd = (u - calib.cx) / calib.fx
    yd = (v - calib.cy) / calib.fy
    xn, yn = xd, yd
    for _ in range(iterations if (calib.k1 or calib.k2) else 0):
        r2 = xn * xn + yn * yn
        d = 1.0 + calib.k1 * r2 + calib.k2 * r2 * r2
        xn, yn = xd / d, yd / d
    return np.array([xn * depth, yn * depth, depth])


def camera_rays(us: np.ndarray, vs: np.ndarray, calib: Calibration) -> np.ndarray:
    """Unit ray directions in the camera frame for pixel coordinates.

    Assumes negligible distortion (synthetic calibrations use k1 = k2 = 0).
    """
    xn = (np.asarray(us, dtype=float) - calib.cx) / calib.fx
    yn = (np.asarray(vs, dtype=float) - calib.cy) / calib.fy
    d = np.stack([xn, yn, np.ones_like(xn)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def limit_fov(scan: RingScan, fov_deg: float) -> RingScan:
    """Restrict a scan to +-fov/2 around the forward (+x) axis.

    Ring ordering is preserved; rings may become empty.
    """
    if not (0.0 < fov_deg <= 360.0):
        raise ValueError("fov_deg must be in (0, 360]")
    half = math.radians(fov_deg) / 2.0
    rings = []
    for ring in scan.rings:
        keep = np.abs(ring.azimuth) <= half
        rings.append(Ring(ring.xyz[keep], ring.azimuth[keep]))
    return RingScan(rings, scan.timestamp)
