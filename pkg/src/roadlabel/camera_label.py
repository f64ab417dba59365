"""Camera road labels from patch-feature similarity to a trajectory prototype.

Each image patch carries a feature vector (from a precomputed file or the
built-in toy extractor). The prototype is the mean feature of trajectory
patches; cosine similarity to it, normalized by the frame maximum, turns
into a [0,1] label via an exponential transform and is upsampled to pixel
resolution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .ingest import FrameSample, PatchFeatureMap, load_feature_map
from .lidar_label import LabelImage

logger = logging.getLogger(__name__)


class CameraLabelSkipped(Exception):
    """Camera labeling is not possible for this frame (reason in args)."""


@dataclass
class Prototype:
    """Mean feature vector of trajectory patches."""

    vector: np.ndarray
    source_frame: str
    patch_count: int


def trajectory_patches(mask: np.ndarray, patch_size: int,
                       membership_threshold: float = 0.5) -> np.ndarray:
    """Patch-level trajectory membership from a pixel trajectory mask.

    A patch belongs to the trajectory when strictly more than the
    threshold fraction of its pixels are trajectory pixels. Right/bottom
    remainder pixels that do not fill a whole patch are ignored.
    """
    h, w = mask.shape
    hp, wp = h // patch_size, w // patch_size
    cropped = mask[:hp * patch_size, :wp * patch_size].astype(float)
    fractions = cropped.reshape(hp, patch_size, wp, patch_size).mean(axis=(1, 3))
    return fractions > membership_threshold


def compute_prototype(features: PatchFeatureMap, traj_patches: np.ndarray,
                      carry: Prototype | None, min_patches: int = 200) -> Prototype:
    """Mean trajectory-patch feature, or the carried prototype when sparse.

    When fewer than ``min_patches`` trajectory patches are available the
    prototype from the last sufficiently covered frame is reused; without
    one the frame cannot be camera-labeled.
    """
    count = int(traj_patches.sum())
    if count >= min_patches:
        vectors = features.grid[traj_patches]
        return Prototype(vectors.mean(axis=0).astype(np.float64),
                         features.frame_id, count)
    if carry is not None:
        return carry
    raise CameraLabelSkipped(
        f"frame {features.frame_id}: {count} trajectory patches "
        f"(< {min_patches}) and no carried prototype")


def similarity_map(features: PatchFeatureMap, proto: Prototype) -> np.ndarray:
    """Cosine similarity of every patch feature to the prototype."""
    proto_norm = float(np.linalg.norm(proto.vector))
    if proto_norm <= 0.0:
        raise ValueError("prototype has zero norm")
    grid = features.grid.astype(np.float64)
    norms = np.linalg.norm(grid, axis=2)
    zero = norms <= 0.0
    if np.any(zero):
        logger.warning("%d zero-norm patch features; similarity set to 0",
                       int(zero.sum()))
    sim = np.zeros(norms.shape)
    np.divide(grid @ proto.vector, norms * proto_norm, out=sim, where=~zero)
    return sim


def camera_label(sim: np.ndarray, sigma_c: float) -> np.ndarray:
    """Patch labels from similarities normalized by the frame maximum.

    Negative normalized similarities clamp to 0 before the exponential
    transform. A non-positive frame maximum makes the frame unlabelable.
    """
    peak = float(np.max(sim))
    if peak <= 0.0:
        raise CameraLabelSkipped(f"frame max similarity {peak:.4f} is not positive")
    normalized = np.clip(sim / peak, 0.0, 1.0)
    return np.exp(-((1.0 - normalized) / sigma_c) ** 2)


def upsample(patch_labels: np.ndarray, image_size: tuple[int, int],
             patch_size: int) -> LabelImage:
    """Bilinear interpolation from patch centers to full pixel resolution.

    Pixels beyond the outermost patch centers take the nearest patch's
    value; coverage is all-true.
    """
    w, h = image_size
    hp, wp = patch_labels.shape
    gx = np.clip((np.arange(w) - (patch_size - 1) / 2.0) / patch_size, 0, wp - 1)
    gy = np.clip((np.arange(h) - (patch_size - 1) / 2.0) / patch_size, 0, hp - 1)
    x0 = np.floor(gx).astype(int)
    y0 = np.floor(gy).astype(int)
    x1 = np.minimum(x0 + 1, wp - 1)
    y1 = np.minimum(y0 + 1, hp - 1)
    fx, fy = gx - x0, gy - y0
    v = np.asarray(patch_labels, dtype=float)
    top = v[np.ix_(y0, x0)] * (1 - fx) + v[np.ix_(y0, x1)] * fx
    bottom = v[np.ix_(y1, x0)] * (1 - fx) + v[np.ix_(y1, x1)] * fx
    values = top * (1 - fy)[:, None] + bottom * fy[:, None]
    return LabelImage(values, np.ones((h, w), dtype=bool))


# ---------------------------------------------------------------------------
# Feature providers

class FeatureProvider(Protocol):
    def features(self, frame: FrameSample) -> PatchFeatureMap: ...


class ToyFeatureProvider:
    """Handcrafted per-patch features: mean color and local contrast (D=6).

    Intended for tests and synthetic data; keeps the labeling path
    exercisable without a pretrained extractor.
    """

    def __init__(self, patch_size: int):
        self.patch_size = patch_size

    def features(self, frame: FrameSample) -> PatchFeatureMap:
        img = frame.image.astype(np.float32) / 255.0
        h, w = img.shape[:2]
        p = self.patch_size
        hp, wp = h // p, w // p
        patches = img[:hp * p, :wp * p].reshape(hp, p, wp, p, 3)
        mean = patches.mean(axis=(1, 3))
        std = patches.std(axis=(1, 3))
        grid = np.concatenate([mean, std], axis=2)
        return PatchFeatureMap(grid, patch_size=p, frame_id=frame.frame_id)


class FileFeatureProvider:
    """Loads precomputed PFMAP1 feature files named by frame id."""

    def __init__(self, feature_dir: str | Path, patch_size: int,
                 expected_grid: tuple[int, int] | None = None):
        self.feature_dir = Path(feature_dir)
        self.patch_size = patch_size
        self.expected_grid = expected_grid

    def features(self, frame: FrameSample) -> PatchFeatureMap:
        if frame.features is not None:
            fmap = frame.features
        else:
            path = self.feature_dir / f"{frame.frame_id}.pfmap"
            if not path.exists():
                raise FileNotFoundError(f"feature file {path} not found")
            fmap = load_feature_map(path, patch_size=self.patch_size)
        if self.expected_grid is not None and fmap.grid.shape[:2] != self.expected_grid:
            raise ValueError(
                f"feature grid {fmap.grid.shape[:2]} of frame {frame.frame_id} "
                f"does not match the configured {self.expected_grid}")
        return fmap
