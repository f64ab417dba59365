"""Per-point lidar road labels from height and gradient cues.

Both cues score each ring point against the ring's trajectory points: the
height cue penalizes elevation above the center point, the gradient cue
penalizes accumulated upward height steps (above an adaptive threshold)
encountered while moving from the center toward the ring edges. Point
labels are rasterized to a pixel label image by triangulating the
projected points and interpolating barycentrically.

Excluded points carry NaN instead of a label value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .config import LidarParams
from .geometry import Calibration, RingScan, project_points
from .trajectory import RingTrajectory

logger = logging.getLogger(__name__)


@dataclass
class LabelImage:
    """Continuous [0,1] label with a coverage mask.

    Values outside the coverage are undefined and must not be read.
    """

    values: np.ndarray    # (H, W) float
    coverage: np.ndarray  # (H, W) bool

    def __post_init__(self):
        if self.values.shape != self.coverage.shape:
            raise ValueError("values and coverage must share a shape")

    @staticmethod
    def empty(height: int, width: int) -> "LabelImage":
        return LabelImage(np.zeros((height, width)), np.zeros((height, width), dtype=bool))


@dataclass
class RingLabels:
    """Point labels for one ring with a valid trajectory."""

    ring: int
    height: np.ndarray     # (N,) in [0,1], NaN where rejected by the radial rule
    gradient: np.ndarray   # (N,) in [0,1]
    combined: np.ndarray   # (N,) in [0,1], NaN where no cue applies
    epsilon: float         # adaptive gradient threshold used


def _radial(xyz: np.ndarray, horizontal: bool) -> np.ndarray:
    if horizontal:
        return np.hypot(xyz[:, 0], xyz[:, 1])
    return np.linalg.norm(xyz, axis=1)


def height_label(ring_xyz: np.ndarray, center_idx: int, sigma_h: float,
                 radial_reject_m: float = 5.0, radial_horizontal: bool = True,
                 ) -> np.ndarray:
    """Exponential height score relative to the ring's center point.

    Points below the center score 1; points whose radial distance differs
    from the center's by more than the reject limit get NaN.
    """
    xyz = np.asarray(ring_xyz, dtype=float)
    rise = np.maximum(xyz[:, 2] - xyz[center_idx, 2], 0.0)
    labels = np.exp(-(rise / sigma_h) ** 2)
    radial = _radial(xyz, radial_horizontal)
    labels[np.abs(radial - radial[center_idx]) > radial_reject_m] = np.nan
    return labels


def adaptive_threshold(z: np.ndarray, left_idx: int, right_idx: int) -> float:
    """Largest consecutive-point height step between the two wheel points.

    The maximum is over signed steps, so a perfectly flat span gives 0 and
    a purely downhill span gives a negative threshold (flagged upstream).
    An empty span (coincident wheels) gives 0.
    """
    lo, hi = sorted((int(left_idx), int(right_idx)))
    if hi - lo < 1:
        return 0.0
    steps = np.diff(np.asarray(z, dtype=float)[lo:hi + 1])
    return float(steps.max())


def outward_steps(z: np.ndarray, center_idx: int) -> np.ndarray:
    """Height change per point when walking from the center to each edge.

    Entry i holds the step taken to arrive at point i; the center entry
    is 0.
    """
    z = np.asarray(z, dtype=float)
    steps = np.zeros_like(z)
    steps[center_idx + 1:] = z[center_idx + 1:] - z[center_idx:-1]
    steps[:center_idx] = z[:center_idx] - z[1:center_idx + 1]
    return steps


def gradient_label(z: np.ndarray, center_idx: int, epsilon: float, sigma_g: float,
                   strict: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Exponential score of accumulated thresholded upward gradients.

    Walks outward from the center along both ring branches, summing steps
    at or above epsilon (strictly above with ``strict``). Returns
    (labels, accumulated sums).
    """
    steps = outward_steps(z, center_idx)
    passed = np.where(steps > epsilon if strict else steps >= epsilon, steps, 0.0)
    total = np.zeros_like(passed)
    total[center_idx:] = np.cumsum(passed[center_idx:])
    total[center_idx::-1] = np.cumsum(passed[center_idx::-1])
    total[center_idx] = 0.0
    labels = np.exp(-(total / sigma_g) ** 2)
    return labels, total


def combine_labels(height: np.ndarray, gradient: np.ndarray,
                   strict_exclusion: bool = False) -> np.ndarray:
    """Mean of the two cues; a point excluded by one cue keeps the other.

    With ``strict_exclusion`` a point excluded by either cue gets NaN.
    """
    h, g = np.asarray(height, dtype=float), np.asarray(gradient, dtype=float)
    both = ~np.isnan(h) & ~np.isnan(g)
    out = np.full_like(h, np.nan)
    out[both] = 0.5 * (h[both] + g[both])
    if not strict_exclusion:
        only_h = ~np.isnan(h) & np.isnan(g)
        only_g = np.isnan(h) & ~np.isnan(g)
        out[only_h] = h[only_h]
        out[only_g] = g[only_g]
    return out


def label_scan(scan: RingScan, trajectories: list[RingTrajectory],
               sigma_h: float, sigma_g: float, params: LidarParams,
               force_zero_epsilon: bool = False) -> list[RingLabels]:
    """Height, gradient, and combined labels for every valid ring.

    Rings without a valid trajectory are skipped entirely; their points
    stay unlabeled.
    """
    out = []
    for t in trajectories:
        if not t.valid:
            continue
        ring = scan.rings[t.ring]
        h = height_label(ring.xyz, t.center_idx, sigma_h,
                         params.radial_reject_m, params.radial_horizontal)
        eps = 0.0 if force_zero_epsilon else adaptive_threshold(
            ring.xyz[:, 2], t.left_idx, t.right_idx)
        if eps < 0:
            logger.info("ring %d: negative adaptive threshold %.4f (downhill span)",
                        t.ring, eps)
        g, _ = gradient_label(ring.xyz[:, 2], t.center_idx, eps, sigma_g,
                              params.gradient_strict_inequality)
        out.append(RingLabels(t.ring, h, g, combine_labels(h, g, params.strict_exclusion), eps))
    return out


def gather_labeled_points(scan: RingScan, ring_labels: list[RingLabels],
                          which: str = "combined") -> tuple[np.ndarray, np.ndarray]:
    """Flatten one cue ("height", "gradient", "combined") over all labeled rings.

    Returns (xyz (N,3), values (N,)) with NaN-labeled points removed.
    """
    xyz_parts, val_parts = [], []
    for rl in ring_labels:
        values = getattr(rl, which)
        keep = ~np.isnan(values)
        if np.any(keep):
            xyz_parts.append(scan.rings[rl.ring].xyz[keep])
            val_parts.append(values[keep])
    if not xyz_parts:
        return np.zeros((0, 3)), np.zeros(0)
    return np.concatenate(xyz_parts), np.concatenate(val_parts)


def barycentric_interpolate(points_uv: np.ndarray, values: np.ndarray,
                            queries_uv: np.ndarray, max_edge_px: float,
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Triangulate scattered points and interpolate at query locations.

    Triangles with any edge longer than ``max_edge_px`` are treated as
    gaps. Returns (values, inside) per query; values outside are 0.
    """
    pts = np.asarray(points_uv, dtype=float).reshape(-1, 2)
    queries = np.asarray(queries_uv, dtype=float).reshape(-1, 2)
    vals_out = np.zeros(queries.shape[0])
    inside = np.zeros(queries.shape[0], dtype=bool)
    if pts.shape[0] < 3:
        return vals_out, inside
    try:
        tri = Delaunay(pts)
    except QhullError:
        return vals_out, inside
    corners = pts[tri.simplices]  # (T, 3, 2)
    edges = np.stack([
        np.linalg.norm(corners[:, 0] - corners[:, 1], axis=1),
        np.linalg.norm(corners[:, 1] - corners[:, 2], axis=1),
        np.linalg.norm(corners[:, 2] - corners[:, 0], axis=1),
    ])
    tri_ok = edges.max(axis=0) <= max_edge_px
    simplex = tri.find_simplex(queries)
    hit = (simplex >= 0) & tri_ok[np.clip(simplex, 0, None)]
    if not np.any(hit):
        return vals_out, inside
    s = simplex[hit]
    transform = tri.transform[s]
    delta = queries[hit] - transform[:, 2]
    b = np.einsum("mij,mj->mi", transform[:, :2], delta)
    lam = np.column_stack([b, 1.0 - b.sum(axis=1)])
    vals_out[hit] = (np.asarray(values, dtype=float)[tri.simplices[s]] * lam).sum(axis=1)
    inside[hit] = True
    return vals_out, inside


def rasterize(points_xyz: np.ndarray, values: np.ndarray, calib: Calibration,
              gap_limit_px: float = 200.0) -> LabelImage:
    """Project labeled points and interpolate them into a LabelImage.

    Points behind the camera are dropped; points projecting outside the
    image still participate in the triangulation so near-border pixels
    interpolate instead of extrapolating. Fewer than 3 points projecting
    inside the image yields empty coverage.
    """
    w, h = calib.image_size
    xyz = np.asarray(points_xyz, dtype=float).reshape(-1, 3)
    vals = np.asarray(values, dtype=float).reshape(-1)
    uv, ok = project_points(calib.lidar_to_camera.apply(xyz), calib)
    uv, vals = uv[ok], vals[ok]
    in_image = ((uv[:, 0] >= 0) & (uv[:, 0] <= w - 1) &
                (uv[:, 1] >= 0) & (uv[:, 1] <= h - 1))
    if int(in_image.sum()) < 3:
        return LabelImage.empty(h, w)
    us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    queries = np.column_stack([us.ravel(), vs.ravel()])
    pixel_vals, inside = barycentric_interpolate(uv, vals, queries, gap_limit_px)
    return LabelImage(np.clip(pixel_vals.reshape(h, w), 0.0, 1.0),
                      inside.reshape(h, w))
