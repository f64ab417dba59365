"""Dataset loading: poses, scans, images, feature maps, and frame bundles.

On-disk layout of a sequence directory:

    calib.yaml          camera intrinsics + extrinsics (see geometry)
    poses.csv           timestamp,x,y,z,yaw  (or qw,qx,qy,qz)
    images/<t>.png      8-bit color frames named by timestamp (seconds)
    scans/<t>.bin       binary ring scans named by timestamp
    features/<t>.pfmap  optional precomputed patch features (PFMAP1)
    gt/<id>.png         optional ground-truth road masks keyed by frame id

Scan binary format (little-endian): point count as u32, then per point
x, y, z as f32, ring as u16, azimuth as f32.

Feature map format (little-endian): magic "PFMAP1", then Hp, Wp, D as
u32, then Hp*Wp*D f32 values row-major.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .config import SequenceConfig
from .geometry import (Calibration, Pose, Ring, RingScan, load_calibration,
                       wrap_angle, yaw_from_quaternion)

logger = logging.getLogger(__name__)

SCAN_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                       ("ring", "<u2"), ("azimuth", "<f4")])
FEATURE_MAGIC = b"PFMAP1"


@dataclass
class PatchFeatureMap:
    """Grid of D-dimensional feature vectors, one per image patch."""

    grid: np.ndarray      # (Hp, Wp, D) float32
    patch_size: int = 14
    frame_id: str = ""

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float32)
        if self.grid.ndim != 3:
            raise ValueError("feature grid must be Hp x Wp x D")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.grid.shape


@dataclass
class FrameSample:
    """Everything needed to autolabel one frame."""

    frame_id: str
    timestamp: float
    image: np.ndarray            # (H, W, 3) uint8
    scan: RingScan
    pose: Pose                   # vehicle pose at the scan timestamp, world frame
    future_poses: list[Pose]     # world frame, timestamps >= frame timestamp
    calib: Calibration
    features: PatchFeatureMap | None = None


# ---------------------------------------------------------------------------
# Poses

def load_poses_csv(path: str | Path) -> list[Pose]:
    """Read poses from CSV with a header row.

    Accepts either a ``yaw`` column or quaternion columns ``qw,qx,qy,qz``.
    """
    poses = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise ValueError(f"pose file {path} is empty")
        names = {n.strip() for n in reader.fieldnames}
        has_yaw = "yaw" in names
        has_quat = {"qw", "qx", "qy", "qz"} <= names
        if not ({"timestamp", "x", "y", "z"} <= names and (has_yaw or has_quat)):
            raise ValueError(
                f"pose file {path} needs columns timestamp,x,y,z and yaw or qw,qx,qy,qz")
        for row in reader:
            if has_yaw:
                yaw = float(row["yaw"])
            else:
                yaw = yaw_from_quaternion(float(row["qw"]), float(row["qx"]),
                                          float(row["qy"]), float(row["qz"]))
            poses.append(Pose(float(row["timestamp"]),
                              np.array([float(row["x"]), float(row["y"]), float(row["z"])]),
                              yaw))
    ts = [p.timestamp for p in poses]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError(f"pose timestamps in {path} must be strictly increasing")
    return poses


def save_poses_csv(poses: list[Pose], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["timestamp", "x", "y", "z", "yaw"])
        for p in poses:
            writer.writerow([f"{p.timestamp:.6f}", repr(float(p.position[0])),
                             repr(float(p.position[1])), repr(float(p.position[2])),
                             repr(float(p.heading))])


def interpolate_pose(poses: list[Pose], t: float) -> Pose:
    """Pose at time t, linear in position, shortest-arc in heading.

    Clamps to the first/last pose outside the covered interval.
    """
    if not poses:
        raise ValueError("no poses to interpolate")
    ts = np.array([p.timestamp for p in poses])
    if t <= ts[0]:
        return Pose(t, poses[0].position, poses[0].heading)
    if t >= ts[-1]:
        return Pose(t, poses[-1].position, poses[-1].heading)
    hi = int(np.searchsorted(ts, t, side="right"))
    lo = hi - 1
    a, b = poses[lo], poses[hi]
    w = (t - a.timestamp) / (b.timestamp - a.timestamp)
    pos = (1.0 - w) * a.position + w * b.position
    heading = a.heading + w * wrap_angle(b.heading - a.heading)
    return Pose(t, pos, heading)


def future_poses_within(poses: list[Pose], t: float, horizon_m: float) -> list[Pose]:
    """Poses at or after t, truncated once travel distance exceeds horizon_m."""
    out = []
    travel = 0.0
    prev = None
    for p in poses:
        if p.timestamp < t:
            continue
        if prev is not None:
            travel += float(np.linalg.norm(p.position - prev.position))
            if travel > horizon_m:
                break
        out.append(p)
        prev = p
    return out


# ---------------------------------------------------------------------------
# Scans

def save_scan_bin(scan: RingScan, path: str | Path) -> None:
    xyz, ring_idx = scan.all_points()
    azimuth = (np.concatenate([r.azimuth for r in scan.rings if len(r)])
               if xyz.shape[0] else np.zeros(0))
    rec = np.empty(xyz.shape[0], dtype=SCAN_DTYPE)
    rec["x"], rec["y"], rec["z"] = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    rec["ring"] = ring_idx.astype(np.uint16)
    rec["azimuth"] = azimuth
    with open(path, "wb") as f:
        f.write(struct.pack("<I", rec.shape[0]))
        f.write(rec.tobytes())


def load_scan_bin(path: str | Path, timestamp: float = 0.0) -> RingScan:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ValueError(f"scan file {path} truncated (no header)")
    (count,) = struct.unpack_from("<I", raw, 0)
    expected = 4 + count * SCAN_DTYPE.itemsize
    if len(raw) < expected:
        raise ValueError(f"scan file {path} truncated: "
                         f"{len(raw)} bytes, expected {expected}")
    rec = np.frombuffer(raw, dtype=SCAN_DTYPE, count=count, offset=4)
    num_rings = int(rec["ring"].max()) + 1 if count else 0
    rings = []
    for r in range(num_rings):
        sel = rec["ring"] == r
        xyz = np.stack([rec["x"][sel], rec["y"][sel], rec["z"][sel]], axis=1).astype(float)
        ring = Ring(xyz, rec["azimuth"][sel].astype(float)).sort()
        rings.append(ring)
    return RingScan(rings, timestamp)


# ---------------------------------------------------------------------------
# Feature maps

def save_feature_map(fmap: PatchFeatureMap, path: str | Path) -> None:
    hp, wp, d = fmap.grid.shape
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", hp, wp, d))
        f.write(np.ascontiguousarray(fmap.grid, dtype="<f4").tobytes())


def load_feature_map(path: str | Path, patch_size: int = 14) -> PatchFeatureMap:
    raw = Path(path).read_bytes()
    header = len(FEATURE_MAGIC) + 12
    if len(raw) < header or raw[:len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise ValueError(f"feature file {path} has a malformed header")
    hp, wp, d = struct.unpack_from("<III", raw, len(FEATURE_MAGIC))
    expected = header + hp * wp * d * 4
    if len(raw) != expected:
        raise ValueError(f"feature file {path} truncated or oversized: "
                         f"{len(raw)} bytes, expected {expected}")
    grid = np.frombuffer(raw, dtype="<f4", offset=header).reshape(hp, wp, d)
    return PatchFeatureMap(grid.copy(), patch_size=patch_size, frame_id=Path(path).stem)


# ---------------------------------------------------------------------------
# Images, labels, masks

def load_image(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def save_image(image: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)


def resize_image(image: np.ndarray, width: int, height: int) -> np.ndarray:
    if image.shape[1] == width and image.shape[0] == height:
        return image
    return np.asarray(Image.fromarray(image).resize((width, height), Image.BILINEAR))


def save_label_png(values: np.ndarray, path: str | Path) -> None:
    """Write a [0,1] label image as 8-bit grayscale (255 = road certainty)."""
    v = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    Image.fromarray(np.round(v * 255.0).astype(np.uint8), mode="L").save(path)


def load_label_png(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=float) / 255.0


def save_mask_png(mask: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8),
                    mode="L").save(path)


def load_mask_png(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) >= 128


# ---------------------------------------------------------------------------
# Synchronization and sampling

def synchronize(images: list[tuple[float, str]], scans: list[tuple[float, str]],
                poses: list[Pose], tol: float) -> list[tuple[str, float, str, str]]:
    """Pair images with their nearest scans within a timestamp tolerance.

    Inputs are (timestamp, payload) lists sorted by timestamp; payloads are
    opaque (paths here). Each scan is paired with at most one image; when
    two images compete for a scan the closer one wins. Returns a list of
    (frame_id, timestamp, image_payload, scan_payload) with the image
    timestamp as the frame timestamp, restricted to frames whose timestamp
    is covered by the pose stream.
    """
    if not images or not scans:
        return []
    scan_ts = np.array([t for t, _ in scans])
    best: dict[int, tuple[float, int]] = {}  # scan index -> (|dt|, image index)
    for i, (t_img, _) in enumerate(images):
        j = int(np.searchsorted(scan_ts, t_img))
        cand = [k for k in (j - 1, j) if 0 <= k < len(scans)]
        if not cand:
            continue
        k = min(cand, key=lambda k: abs(scan_ts[k] - t_img))
        dt = abs(float(scan_ts[k] - t_img))
        if dt > tol:
            continue
        if k not in best or dt < best[k][0]:
            best[k] = (dt, i)
    pose_lo = poses[0].timestamp if poses else -math.inf
    pose_hi = poses[-1].timestamp if poses else math.inf
    out = []
    for k in sorted(best):
        _, i = best[k]
        t_img, img_payload = images[i]
        if not (pose_lo <= t_img <= pose_hi):
            logger.warning("frame at t=%.6f outside pose coverage; dropped", t_img)
            continue
        frame_id = Path(str(img_payload)).stem if isinstance(img_payload, str) else f"{t_img:.6f}"
        out.append((frame_id, float(t_img), img_payload, scans[k][1]))
    if not out:
        logger.warning("synchronize produced no frames (tolerance %.3fs)", tol)
    return out


def sample_by_distance(frames: list[FrameSample], spacing_m: float) -> list[FrameSample]:
    """Greedy distance-based subsampling; the first frame is always kept.

    A frame is kept when its pose has moved at least spacing_m from the
    previously kept frame's pose.
    """
    if spacing_m <= 0:
        raise ValueError("spacing_m must be positive")
    kept: list[FrameSample] = []
    for frame in frames:
        if not kept:
            kept.append(frame)
            continue
        d = float(np.linalg.norm(frame.pose.position - kept[-1].pose.position))
        if d >= spacing_m:
            kept.append(frame)
    return kept


# ---------------------------------------------------------------------------
# Sequence loading

def _timestamped_files(directory: Path, suffix: str) -> list[tuple[float, str]]:
    entries = []
    for p in sorted(directory.glob(f"*{suffix}")):
        try:
            entries.append((float(p.stem), str(p)))
        except ValueError:
            logger.warning("skipping %s: filename is not a timestamp", p)
    entries.sort(key=lambda e: e[0])
    return entries


def load_sequence(seq_dir: str | Path, cfg: SequenceConfig) -> list[FrameSample]:
    """Load, synchronize, and bundle all frames of a sequence directory."""
    seq_dir = Path(seq_dir)
    calib = load_calibration(seq_dir / "calib.yaml")
    poses = load_poses_csv(seq_dir / "poses.csv")
    images = _timestamped_files(seq_dir / "images", ".png")
    scans = _timestamped_files(seq_dir / "scans", ".bin")
    matched = synchronize(images, scans, poses, cfg.sync_tolerance_s)
    feature_dir = seq_dir / cfg.camera.feature_dir

    frames = []
    excluded = set(cfg.excluded_frames)
    for frame_id, t, img_path, scan_path in matched:
        if frame_id in excluded:
            continue
        image = load_image(img_path)
        scan = load_scan_bin(scan_path, timestamp=t)
        pose = interpolate_pose(poses, t)
        future = future_poses_within(poses, t, cfg.future_horizon_m)
        features = None
        fpath = feature_dir / f"{frame_id}.pfmap"
        if cfg.camera.feature_provider == "files" and fpath.exists():
            features = load_feature_map(fpath, patch_size=cfg.camera.patch_size)
        frames.append(FrameSample(frame_id, t, image, scan, pose, future, calib, features))
    return frames
