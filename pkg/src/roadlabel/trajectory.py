"""Fit the driven trajectory to scan rings and derive the trajectory pixel mask.

Per scan ring the vehicle center point is the lidar point nearest to any
future pose; wheel points are the points nearest to lateral offsets of
half the track width from the center, perpendicular to the matched pose's
heading. Rings then pass a filter chain; surviving rings define both the
lidar label references and the image-space trajectory polygon.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import TrajectoryParams
from .geometry import (Calibration, Pose, RingScan, pose_to_world,
                       project_points, wrap_angle)

logger = logging.getLogger(__name__)

# Filter rules in application order; names appear in debug dumps.
RULE_POSE_DISTANCE = "pose_distance"
RULE_CENTER_SPACING = "center_spacing"
RULE_CENTER_ELEVATION = "center_elevation"
RULE_WHEEL_DISTANCE = "wheel_distance"
RULE_OCCLUSION = "occlusion"
RULE_PROJECTION = "projection"          # technical guard, not a paper rule
RULE_DEGENERATE = "degenerate_wheels"   # wheel index collides with center


@dataclass
class RingCandidate:
    """Raw per-ring trajectory point selection, before filtering."""

    ring: int
    center_idx: int
    center_xyz: np.ndarray
    pose_idx: int
    pose_xyz: np.ndarray
    heading: float            # matched pose heading in the sensor frame
    left_idx: int
    left_xyz: np.ndarray
    left_estimate: np.ndarray
    right_idx: int
    right_xyz: np.ndarray
    right_estimate: np.ndarray

    @property
    def center_range(self) -> float:
        return float(np.hypot(self.center_xyz[0], self.center_xyz[1]))


@dataclass
class RingTrajectory:
    """Filtered per-ring trajectory points; invalid rings carry no indices."""

    ring: int
    center_idx: int | None
    left_idx: int | None
    right_idx: int | None
    valid: bool


@dataclass
class RingDiagnostic:
    """Why a ring passed or failed, with the geometry that was checked."""

    ring: int
    candidate: RingCandidate
    failed_rule: str | None           # None when the ring is valid
    prev_center_xyz: np.ndarray | None  # reference for the pairwise rules


def poses_to_sensor_frame(poses: list[Pose], scan_pose: Pose,
                          sensor_height: float) -> list[Pose]:
    """Express world-frame poses in the sensor frame of a scan.

    `scan_pose` is the vehicle pose at the scan timestamp; the sensor sits
    `sensor_height` above it.
    """
    world_to_sensor = pose_to_world(scan_pose, sensor_height).inverse()
    out = []
    for p in poses:
        pos = world_to_sensor.apply(p.position)
        out.append(Pose(p.timestamp, pos, wrap_angle(p.heading - scan_pose.heading)))
    return out


def fit_centers(scan: RingScan, poses: list[Pose]) -> list[tuple[int, int, float] | None]:
    """Per ring, the scan point nearest to any pose.

    Poses must already be in the sensor frame. Returns, per ring, a tuple
    (point index, pose index, distance) or None for empty rings. Ties go
    to the lowest point index (lowest azimuth), then the lowest pose index.
    """
    if not poses:
        return [None] * scan.num_rings
    pose_xyz = np.stack([p.position for p in poses])
    results: list[tuple[int, int, float] | None] = []
    for ring in scan.rings:
        if len(ring) == 0:
            results.append(None)
            continue
        d2 = ((ring.xyz[:, None, :] - pose_xyz[None, :, :]) ** 2).sum(axis=2)
        flat = int(np.argmin(d2))
        pi, qi = divmod(flat, d2.shape[1])
        results.append((pi, qi, float(np.sqrt(d2[pi, qi]))))
    return results


def wheel_estimates(center: np.ndarray, heading: float,
                    track_width: float) -> tuple[np.ndarray, np.ndarray]:
    """Estimated wheel positions, half a track width to each side.

    The offset is horizontal, perpendicular to the heading; left is the
    +90 degree rotation of the heading direction.
    """
    half = 0.5 * track_width
    perp = np.array([-np.sin(heading), np.cos(heading), 0.0])
    return center + half * perp, center - half * perp


def extend_wheels(center: np.ndarray, heading: float, track_width: float,
                  ring_xyz: np.ndarray) -> tuple[int, np.ndarray, int, np.ndarray]:
    """Ring points nearest to the estimated left and right wheel positions.

    Returns (left index, left estimate, right index, right estimate); ties
    go to the lowest index.
    """
    left_est, right_est = wheel_estimates(center, heading, track_width)
    dl = ((ring_xyz - left_est) ** 2).sum(axis=1)
    dr = ((ring_xyz - right_est) ** 2).sum(axis=1)
    return int(np.argmin(dl)), left_est, int(np.argmin(dr)), right_est


def fit_candidates(scan: RingScan, poses: list[Pose],
                   track_width: float) -> list[RingCandidate]:
    """Center + wheel candidates for every ring with points, sorted by range."""
    centers = fit_centers(scan, poses)
    candidates = []
    for ring_idx, hit in enumerate(centers):
        if hit is None:
            continue
        pi, qi, dist = hit
        ring = scan.rings[ring_idx]
        center = ring.xyz[pi]
        pose = poses[qi]
        li, lest, ri, rest = extend_wheels(center, pose.heading, track_width, ring.xyz)
        candidates.append(RingCandidate(
            ring=ring_idx, center_idx=pi, center_xyz=center,
            pose_idx=qi, pose_xyz=pose.position, heading=pose.heading,
            left_idx=li, left_xyz=ring.xyz[li], left_estimate=lest,
            right_idx=ri, right_xyz=ring.xyz[ri], right_estimate=rest))
    candidates.sort(key=lambda c: c.center_range)
    return candidates


def occluded(wheel_px: tuple[float, float], scan_pixels: np.ndarray,
             u_threshold: float = 10.0) -> bool:
    """Image-space line-of-sight test for a wheel point.

    A scan pixel blocks the wheel when its horizontal distance is below
    the threshold and it lies above the wheel in the image (smaller v).
    """
    px = np.asarray(scan_pixels, dtype=float).reshape(-1, 2)
    if px.shape[0] == 0:
        return False
    du = np.abs(px[:, 0] - wheel_px[0])
    return bool(np.any((du < u_threshold) & (px[:, 1] < wheel_px[1])))


def _pose_point_distance(c: RingCandidate, use_3d: bool) -> float:
    delta = c.center_xyz - c.pose_xyz
    if use_3d:
        return float(np.linalg.norm(delta))
    return float(np.hypot(delta[0], delta[1]))


def filter_rings(candidates: list[RingCandidate], scan: RingScan,
                 calib: Calibration, params: TrajectoryParams,
                 ) -> tuple[list[RingTrajectory], list[RingDiagnostic]]:
    """Apply the filter chain to range-ordered ring candidates.

    Rules, in order: pose-to-center distance below the limit; spacing to
    the previous valid center above the minimum (horizontal); elevation
    step to the previous valid center below the limit; wheel-to-center
    distance below the limit for both wheels; both wheels unoccluded.
    The first valid ring is exempt from the two pairwise rules. A ring
    failing any rule is invalid; later rings are still evaluated against
    the last valid center.
    """
    xyz_all, _ = scan.all_points()
    ranges_all = np.hypot(xyz_all[:, 0], xyz_all[:, 1])
    cam_xyz = calib.lidar_to_camera.apply(xyz_all) if xyz_all.shape[0] else xyz_all
    uv_all, proj_ok = project_points(cam_xyz, calib)

    trajectories: list[RingTrajectory] = []
    diagnostics: list[RingDiagnostic] = []
    prev_center: np.ndarray | None = None

    def finish(c: RingCandidate, rule: str | None) -> None:
        valid = rule is None
        trajectories.append(RingTrajectory(
            ring=c.ring,
            center_idx=c.center_idx if valid else None,
            left_idx=c.left_idx if valid else None,
            right_idx=c.right_idx if valid else None,
            valid=valid))
        diagnostics.append(RingDiagnostic(c.ring, c, rule, prev_center))

    for c in candidates:
        if _pose_point_distance(c, params.pose_distance_3d) >= params.pose_distance_max_m:
            finish(c, RULE_POSE_DISTANCE)
            continue
        if prev_center is not None:
            spacing = float(np.hypot(*(c.center_xyz[:2] - prev_center[:2])))
            if spacing <= params.center_spacing_min_m:
                finish(c, RULE_CENTER_SPACING)
                continue
            if abs(float(c.center_xyz[2] - prev_center[2])) >= params.center_elevation_max_m:
                finish(c, RULE_CENTER_ELEVATION)
                continue
        if (np.linalg.norm(c.left_xyz - c.center_xyz) >= params.wheel_distance_max_m or
                np.linalg.norm(c.right_xyz - c.center_xyz) >= params.wheel_distance_max_m):
            finish(c, RULE_WHEEL_DISTANCE)
            continue
        if c.left_idx == c.center_idx or c.right_idx == c.center_idx \
                or c.left_idx == c.right_idx:
            finish(c, RULE_DEGENERATE)
            continue
        rule = None
        for wheel_xyz in (c.left_xyz, c.right_xyz):
            wheel_cam = calib.lidar_to_camera.apply(wheel_xyz)
            uv, ok = project_points(wheel_cam[None, :], calib)
            if not ok[0]:
                rule = RULE_PROJECTION
                break
            wheel_range = float(np.hypot(wheel_xyz[0], wheel_xyz[1]))
            # Only points nearer than the wheel can physically block the
            # line of sight; the margin keeps same-ring neighbors out.
            nearer = proj_ok & (ranges_all < wheel_range - params.occlusion_range_margin_m)
            if occluded((uv[0, 0], uv[0, 1]), uv_all[nearer], params.occlusion_u_px):
                rule = RULE_OCCLUSION
                break
        if rule is not None:
            finish(c, rule)
            continue
        finish(c, None)
        prev_center = c.center_xyz
    return trajectories, diagnostics


def fill_polygon(vertices: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Even-odd rasterization of a closed polygon at pixel centers.

    `vertices` is (M, 2) in (u, v) order; `shape` is (H, W). A pixel center
    is inside when an odd number of edge crossings lie at or left of it on
    its scanline (half-open edges, so shared vertices count once).
    """
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    verts = np.asarray(vertices, dtype=float).reshape(-1, 2)
    if verts.shape[0] < 3:
        return mask
    x0, y0 = verts[:, 0], verts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    keep = y0 != y1
    x0, y0, x1, y1 = x0[keep], y0[keep], x1[keep], y1[keep]
    if x0.size == 0:
        return mask
    ylo, yhi = np.minimum(y0, y1), np.maximum(y0, y1)
    for row in range(max(0, int(np.ceil(ylo.min()))),
                     min(h, int(np.floor(yhi.max())) + 1)):
        active = (ylo <= row) & (row < yhi)
        if not np.any(active):
            continue
        t = (row - y0[active]) / (y1[active] - y0[active])
        xs = np.sort(x0[active] + t * (x1[active] - x0[active]))
        for a, b in zip(xs[0::2], xs[1::2]):
            lo = max(0, int(np.ceil(a)))
            hi = min(w - 1, int(np.ceil(b)) - 1)
            if lo <= hi:
                mask[row, lo:hi + 1] = True
    return mask


def trajectory_mask(trajectories: list[RingTrajectory], scan: RingScan,
                    calib: Calibration, image_size: tuple[int, int]) -> np.ndarray:
    """Fill the pixel polygon bounded by the projected wheel chains.

    Trajectories must be in near-to-far order. With fewer than two valid
    rings the mask is empty and the frame falls back to a carried camera
    prototype.
    """
    w, h = image_size
    valid = [t for t in trajectories if t.valid]
    if len(valid) < 2:
        return np.zeros((h, w), dtype=bool)
    left_px, right_px = [], []
    for t in valid:
        ring = scan.rings[t.ring]
        pts = np.stack([ring.xyz[t.left_idx], ring.xyz[t.right_idx]])
        uv, ok = project_points(calib.lidar_to_camera.apply(pts), calib)
        if not ok.all():
            continue
        left_px.append(uv[0])
        right_px.append(uv[1])
    if len(left_px) < 2:
        return np.zeros((h, w), dtype=bool)
    polygon = np.concatenate([np.stack(left_px), np.stack(right_px)[::-1]])
    return fill_polygon(polygon, (h, w))
