"""Parametric synthetic winter-road scenes for end-to-end verification.

A scene is a flat road of known width flanked by linear banks that rise to
a plateau, swept along a straight or constant-curvature centerline. Ring
points come from exact ray/surface intersections per elevation angle and
azimuth (plus seeded height jitter), so analytic ground truth is available
by construction: road masks from per-pixel ray casting and road-boundary
curves in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import SequenceConfig
from .geometry import (Calibration, Pose, RigidTransform, Ring, RingScan,
                       camera_rays, rotz)
from .ingest import FrameSample, PatchFeatureMap

_RAY_EPS = 1e-9
ROAD_COLOR = np.array([92.0, 92.0, 98.0])
BACKGROUND_COLOR = np.array([233.0, 233.0, 240.0])
IMAGE_NOISE_STD = 5.0


def default_ring_elevations(count: int = 32, low_deg: float = -25.0,
                            high_deg: float = 15.0) -> np.ndarray:
    return np.radians(np.linspace(low_deg, high_deg, count))


@dataclass
class SceneParams:
    """Geometry, sensor, and noise parameters of one synthetic frame."""

    road_width: float = 6.0
    bank_height: float = 0.5
    bank_slope: float = 1.0           # rise per meter past the road edge
    road_roughness_std: float = 0.02
    lane_offset: float = 0.0          # vehicle offset left of the road centerline
    curvature: float = 0.0            # 1/m; 0 = straight
    sensor_height: float = 1.7
    ring_elevation_angles: np.ndarray = field(default_factory=default_ring_elevations)
    azimuth_step_deg: float = 0.5
    max_range_m: float = 70.0
    camera_pitch_deg: float = 10.0
    image_width: int = 512
    image_height: int = 288
    focal_px: float = 256.0
    track_width: float = 1.8
    patch_size: int = 4
    feature_dim: int = 8
    feature_noise_std: float = 0.1
    pose_spacing_m: float = 0.5
    pose_horizon_m: float = 65.0
    path_offset_m: float = 0.0        # station of this frame along the path
    noise_seed: int = 0

    def validate(self) -> None:
        if self.road_width <= self.track_width:
            raise ValueError("road_width must exceed track_width")
        if self.bank_height < 0:
            raise ValueError("bank_height must be non-negative")


@dataclass
class SyntheticFrame:
    """A FrameSample plus its analytic ground truth."""

    sample: FrameSample
    gt_mask: np.ndarray                 # (H, W) bool
    left_boundary: np.ndarray           # (M, 3) sensor frame
    right_boundary: np.ndarray
    params: SceneParams


def synthetic_calibration(params: SceneParams) -> Calibration:
    pitch = math.radians(params.camera_pitch_deg)
    base = np.array([[0.0, -1.0, 0.0],
                     [0.0, 0.0, -1.0],
                     [1.0, 0.0, 0.0]])
    tilt = np.array([[1.0, 0.0, 0.0],
                     [0.0, math.cos(pitch), -math.sin(pitch)],
                     [0.0, math.sin(pitch), math.cos(pitch)]])
    return Calibration(
        fx=params.focal_px, fy=params.focal_px,
        cx=params.image_width / 2.0, cy=params.image_height / 2.0,
        k1=0.0, k2=0.0,
        lidar_to_camera=RigidTransform(tilt @ base, np.zeros(3)),
        track_width=params.track_width,
        image_width=params.image_width, image_height=params.image_height,
        sensor_height=params.sensor_height)


# ---------------------------------------------------------------------------
# Surface geometry (sensor frame: x forward, y left, z up, origin at sensor)

def _lateral_from_road_center(xy: np.ndarray, params: SceneParams) -> np.ndarray:
    """Signed lateral offset (left positive) from the road centerline."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    if params.curvature == 0.0:
        lat_vehicle = xy[:, 1]
    else:
        radius = 1.0 / params.curvature
        center = np.array([0.0, radius])
        dist = np.linalg.norm(xy - center, axis=1)
        lat_vehicle = math.copysign(1.0, params.curvature) * (abs(radius) - dist)
    return lat_vehicle + params.lane_offset


def surface_height(xy: np.ndarray, params: SceneParams) -> np.ndarray:
    """Analytic surface height above the road plane (world z)."""
    lat = np.abs(_lateral_from_road_center(xy, params))
    past_edge = np.maximum(lat - params.road_width / 2.0, 0.0)
    if params.bank_slope <= 0.0:
        return np.where(past_edge > 0.0, params.bank_height, 0.0)
    return np.minimum(past_edge * params.bank_slope, params.bank_height)


def _cast_rays(dirs: np.ndarray, params: SceneParams) -> np.ndarray:
    """Exact ray/surface intersection distances from the sensor origin.

    Returns t per ray (NaN = miss). Rays start at the origin; the surface
    is evaluated in the sensor frame (road plane at z = -sensor_height).
    """
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    n = dirs.shape[0]
    h = params.sensor_height
    half = params.road_width / 2.0
    slope_width = (params.bank_height / params.bank_slope
                   if params.bank_slope > 0.0 and params.bank_height > 0.0 else 0.0)
    best = np.full(n, np.inf)

    def consider(t: np.ndarray, band_ok: np.ndarray) -> None:
        good = np.isfinite(t) & (t > _RAY_EPS) & band_ok
        best[good] = np.minimum(best[good], t[good])

    with np.errstate(divide="ignore", invalid="ignore"):
        # Road plane z = -h, |lat| <= half.
        t_road = -h / dirs[:, 2]
        lat = _lateral_from_road_center((dirs[:, :2].T * t_road).T, params)
        consider(t_road, np.abs(lat) <= half)

        # Plateau plane z = -h + bank_height, |lat| > half + slope_width.
        if params.bank_height > 0.0:
            t_plat = (params.bank_height - h) / dirs[:, 2]
            lat = _lateral_from_road_center((dirs[:, :2].T * t_plat).T, params)
            consider(t_plat, np.abs(lat) > half + slope_width)
        else:
            t_plat = -h / dirs[:, 2]
            lat = _lateral_from_road_center((dirs[:, :2].T * t_plat).T, params)
            consider(t_plat, np.abs(lat) > half)

        # Slope bands: z = -h + (|lat| - half) * slope with |lat| in (half, half+sw].
        if slope_width > 0.0:
            s = params.bank_slope
            for side in (1.0, -1.0):
                # side * lat(q(t)) = (z(t) + h) / s + half  =: L0 + L1 t
                l0 = h / s + half
                l1 = dirs[:, 2] / s
                if params.curvature == 0.0:
                    # lat(t) = dy t + lane_offset
                    denom = side * dirs[:, 1] - l1
                    t_sl = (l0 - side * params.lane_offset) / denom
                else:
                    radius = 1.0 / params.curvature
                    sgn = math.copysign(1.0, params.curvature)
                    center = np.array([0.0, radius])
                    # dist(t) = |R| - sgn*(side*L(t) - lane_offset) = d0 + d1 t
                    d0 = abs(radius) - sgn * (side * l0 - params.lane_offset)
                    d1 = -sgn * side * l1
                    oc = -center
                    a = dirs[:, 0] ** 2 + dirs[:, 1] ** 2 - d1 ** 2
                    b = 2.0 * (dirs[:, 0] * oc[0] + dirs[:, 1] * oc[1] - d0 * d1)
                    c = float(oc @ oc) - d0 ** 2
                    disc = b ** 2 - 4.0 * a * c
                    t_sl = np.full((2, n), np.nan)
                    ok = disc >= 0
                    sq = np.sqrt(np.where(ok, disc, np.nan))
                    t_sl[0] = (-b - sq) / (2.0 * a)
                    t_sl[1] = (-b + sq) / (2.0 * a)
                for t_cand in np.atleast_2d(t_sl):
                    lat = _lateral_from_road_center((dirs[:, :2].T * t_cand).T, params)
                    band = (side * lat > half) & (side * lat <= half + slope_width)
                    if params.curvature != 0.0:
                        # reject the cone sheet with negative radial distance
                        band &= (d0 + d1 * t_cand) >= 0.0
                    consider(t_cand, band)

    best[~np.isfinite(best)] = np.nan
    return best


# ---------------------------------------------------------------------------
# Frame generation

def _path_pose(station: float, params: SceneParams, t: float) -> Pose:
    """World-frame pose of the vehicle at a path station (world = frame 0)."""
    k = params.curvature
    if k == 0.0:
        pos = np.array([station, 0.0, 0.0])
        heading = 0.0
    else:
        pos = np.array([math.sin(k * station) / k,
                        (1.0 - math.cos(k * station)) / k, 0.0])
        heading = k * station
    return Pose(t, pos, heading)


def _relative_station_pose(s_rel: float, params: SceneParams, t: float) -> Pose:
    """Pose `s_rel` meters ahead along the path, in the frame's sensor-ground frame."""
    k = params.curvature
    if k == 0.0:
        return Pose(t, np.array([s_rel, 0.0, -params.sensor_height]), 0.0)
    return Pose(t, np.array([math.sin(k * s_rel) / k,
                             (1.0 - math.cos(k * s_rel)) / k,
                             -params.sensor_height]), k * s_rel)


def generate(params: SceneParams, timestamp: float = 0.0,
             frame_id: str | None = None) -> SyntheticFrame:
    """Build one synthetic frame: scan, image, poses, features, ground truth.

    Deterministic for a fixed seed. The frame's world frame is the path
    start; the returned FrameSample carries world-frame poses exactly as a
    recorded sequence would.
    """
    params.validate()
    rng = np.random.default_rng(params.noise_seed)
    calib = synthetic_calibration(params)

    # Ring scan from exact ray casting plus height jitter.
    azimuths = np.arange(-180.0 + params.azimuth_step_deg, 180.0 + 1e-9,
                         params.azimuth_step_deg)
    azimuths = np.radians(azimuths)
    rings = []
    for elev in np.asarray(params.ring_elevation_angles, dtype=float):
        ce, se = math.cos(elev), math.sin(elev)
        dirs = np.column_stack([ce * np.cos(azimuths), ce * np.sin(azimuths),
                                np.full_like(azimuths, se)])
        t = _cast_rays(dirs, params)
        hit = np.isfinite(t) & (t <= params.max_range_m)
        xyz = dirs[hit] * t[hit, None]
        if params.road_roughness_std > 0.0 and xyz.shape[0]:
            xyz = xyz.copy()
            xyz[:, 2] += rng.normal(0.0, params.road_roughness_std, xyz.shape[0])
        rings.append(Ring(xyz, azimuths[hit]))
    scan = RingScan(rings, timestamp)

    # Ground truth by per-pixel ray casting against the analytic surface.
    w, h = params.image_width, params.image_height
    us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    cam_dirs = camera_rays(us.ravel(), vs.ravel(), calib)
    lidar_dirs = cam_dirs @ calib.lidar_to_camera.rotation  # R^T applied row-wise
    t_px = _cast_rays(lidar_dirs, params)
    lat_px = _lateral_from_road_center(lidar_dirs[:, :2] * t_px[:, None], params)
    gt = (np.isfinite(t_px) & (np.abs(lat_px) <= params.road_width / 2.0)).reshape(h, w)

    # Rendered image: flat road and background colors plus pixel noise.
    image = np.where(gt[..., None], ROAD_COLOR, BACKGROUND_COLOR)
    image = image + rng.normal(0.0, IMAGE_NOISE_STD, image.shape)
    image = np.clip(image, 0, 255).astype(np.uint8)

    # Toy patch features: separable road/background base vectors plus noise.
    p = params.patch_size
    hp, wp = h // p, w // p
    road_fraction = gt[:hp * p, :wp * p].reshape(hp, p, wp, p).mean(axis=(1, 3))
    base = np.zeros((hp, wp, params.feature_dim), dtype=np.float32)
    base[..., 0] = road_fraction > 0.5
    base[..., 1] = ~(road_fraction > 0.5)
    grid = base + rng.normal(0.0, params.feature_noise_std,
                             base.shape).astype(np.float32)

    # Poses along the path, world frame anchored at the path start.
    speed = 10.0  # m/s, only sets timestamps
    stations = np.arange(0.0, params.pose_horizon_m + params.pose_spacing_m / 2,
                         params.pose_spacing_m)
    future = [_path_pose(params.path_offset_m + s, params,
                         timestamp + s / speed) for s in stations]
    pose = _path_pose(params.path_offset_m, params, timestamp)

    fid = frame_id if frame_id is not None else f"{timestamp:.6f}"
    sample = FrameSample(
        frame_id=fid, timestamp=timestamp, image=image, scan=scan,
        pose=pose, future_poses=future, calib=calib,
        features=PatchFeatureMap(grid, patch_size=p, frame_id=fid))

    left, right = boundary_curves(params)
    return SyntheticFrame(sample, gt, left, right, params)


def boundary_curves(params: SceneParams, length: float = 80.0,
                    step: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Road-edge polylines in the frame's sensor frame."""
    stations = np.arange(0.0, length, step)
    half = params.road_width / 2.0
    curves = []
    for side in (1.0, -1.0):
        pts = []
        for s in stations:
            p = _relative_station_pose(s, params, 0.0)
            normal = np.array([-math.sin(p.heading), math.cos(p.heading), 0.0])
            offset = side * half - params.lane_offset
            pts.append(p.position + offset * normal)
        curves.append(np.asarray(pts))
    return curves[0], curves[1]


# ---------------------------------------------------------------------------
# Independent label oracle (plain loops, used only by tests)

def oracle_labels(scan: RingScan, trajectories, cfg: SequenceConfig) -> list[dict]:
    """Straightforward re-evaluation of the lidar label math per valid ring.

    Given the scan the trajectory indices refer to (after any field-of-view
    restriction), recomputes height and gradient labels with explicit
    Python loops, independent of the pipeline's vectorized implementation.
    """
    out = []
    for traj in trajectories:
        if not traj.valid:
            continue
        ring = scan.rings[traj.ring]
        xyz = ring.xyz
        n = xyz.shape[0]
        ci, li, ri = traj.center_idx, traj.left_idx, traj.right_idx
        z0 = xyz[ci, 2]

        def radial(i: int) -> float:
            if cfg.lidar.radial_horizontal:
                return math.hypot(xyz[i, 0], xyz[i, 1])
            return float(np.linalg.norm(xyz[i]))

        height = []
        for i in range(n):
            if abs(radial(i) - radial(ci)) > cfg.lidar.radial_reject_m:
                height.append(float("nan"))
                continue
            rise = xyz[i, 2] - z0
            if rise <= 0:
                rise = 0.0
            height.append(math.exp(-(rise / cfg.sigma_h) ** 2))

        lo, hi = min(li, ri), max(li, ri)
        eps = 0.0
        if cfg.gradient_no_threshold:
            eps = 0.0
        elif hi - lo >= 1:
            eps = max(xyz[k + 1, 2] - xyz[k, 2] for k in range(lo, hi))

        total = [0.0] * n
        running = 0.0
        for i in range(ci + 1, n):
            step = xyz[i, 2] - xyz[i - 1, 2]
            keep = step > eps if cfg.lidar.gradient_strict_inequality else step >= eps
            if keep:
                running += step
            total[i] = running
        running = 0.0
        for i in range(ci - 1, -1, -1):
            step = xyz[i, 2] - xyz[i + 1, 2]
            keep = step > eps if cfg.lidar.gradient_strict_inequality else step >= eps
            if keep:
                running += step
            total[i] = running
        gradient = [math.exp(-(g / cfg.sigma_g) ** 2) for g in total]

        combined = []
        for hv, gv in zip(height, gradient):
            if not math.isnan(hv):
                combined.append(0.5 * (hv + gv))
            elif cfg.lidar.strict_exclusion:
                combined.append(float("nan"))
            else:
                combined.append(gv)
        out.append({"ring": traj.ring, "epsilon": eps,
                    "height": np.array(height), "gradient": np.array(gradient),
                    "combined": np.array(combined)})
    return out


# ---------------------------------------------------------------------------
# Sequence emission in the ingest on-disk layout

def sequence_params(base: SceneParams, index: int, seed: int,
                    frame_spacing: float) -> SceneParams:
    return replace(base, path_offset_m=index * frame_spacing,
                   noise_seed=seed + index)


def write_sequence(out_dir: str | Path, base: SceneParams, frames: int,
                   seed: int, frame_spacing: float = 2.0,
                   frame_period: float = 0.5) -> list[str]:
    """Emit a synthetic sequence in the directory layout ingest consumes."""
    from . import ingest
    from .geometry import save_calibration
    from .config import save_config

    out = Path(out_dir)
    for sub in ("images", "scans", "features", "gt"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    calib = synthetic_calibration(base)
    save_calibration(calib, out / "calib.yaml")

    cfg = SequenceConfig()
    cfg.camera.patch_size = base.patch_size
    cfg.camera.analysis_width = base.image_width
    cfg.camera.analysis_height = base.image_height
    cfg.sample_spacing_m = frame_spacing
    save_config(cfg, out / "config.yaml")

    speed = frame_spacing / frame_period
    pose_step = base.pose_spacing_m
    total_len = (frames - 1) * frame_spacing + base.pose_horizon_m
    stations = np.arange(0.0, total_len + pose_step / 2, pose_step)
    poses = [_path_pose(s, base, s / speed) for s in stations]
    ingest.save_poses_csv(poses, out / "poses.csv")

    frame_ids = []
    for k in range(frames):
        t_scan = k * frame_period
        t_img = t_scan + 0.004
        params = sequence_params(base, k, seed, frame_spacing)
        frame = generate(params, timestamp=t_scan, frame_id=f"{t_img:.6f}")
        ingest.save_image(frame.sample.image, out / "images" / f"{t_img:.6f}.png")
        ingest.save_scan_bin(frame.sample.scan, out / "scans" / f"{t_scan:.6f}.bin")
        ingest.save_feature_map(frame.sample.features,
                                out / "features" / f"{t_img:.6f}.pfmap")
        ingest.save_mask_png(frame.gt_mask, out / "gt" / f"{t_img:.6f}.png")
        frame_ids.append(f"{t_img:.6f}")
    return frame_ids
