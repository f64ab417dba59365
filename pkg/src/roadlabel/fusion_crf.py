"""Camera-lidar label fusion and dense-CRF refinement to a binary mask.

Fusion averages the two continuous labels wherever the lidar label is
defined and falls back to the camera label elsewhere. Refinement runs
two-class mean-field inference in a fully connected CRF with a Gaussian
spatial kernel and a bilateral (position + color) kernel under Potts
compatibility.

The mean-field update is computed as Q ∝ p * exp(-pairwise) rather than
through -log unaries, so with zero pairwise weights the result reduces
exactly to thresholding the fused label at 0.5. Pairwise messages exclude
the self term and are normalized per pixel by the kernel's total mass
there, keeping each kernel's energy contribution within its configured
weight. The spatial kernel is evaluated by separable Gaussian filtering
and the bilateral kernel by a splat-blur-slice bilateral grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .config import CrfParams
from .lidar_label import LabelImage

logger = logging.getLogger(__name__)

PROVENANCE_CAMERA_ONLY = 0
PROVENANCE_FUSED = 1

# Kernel truncation radius in sigmas, shared by both pairwise kernels.
_TRUNCATE = 4.0
_MAX_GRID_CELLS = 50_000_000


@dataclass
class FusedLabel:
    """Fused continuous label with per-pixel provenance."""

    values: np.ndarray      # (H, W) in [0, 1]
    provenance: np.ndarray  # (H, W) uint8, PROVENANCE_* constants

    def fused_fraction(self) -> float:
        return float((self.provenance == PROVENANCE_FUSED).mean()) if self.values.size else 0.0


def fuse(cam: LabelImage, lid: LabelImage) -> FusedLabel:
    """Mean of both labels inside lidar coverage, camera label beyond it."""
    if cam.values.shape != lid.values.shape:
        raise ValueError(f"label shape mismatch: {cam.values.shape} vs {lid.values.shape}")
    values = np.where(lid.coverage, 0.5 * (cam.values + lid.values), cam.values)
    return FusedLabel(values, lid.coverage.astype(np.uint8))


def binarize(label: FusedLabel | LabelImage | np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a continuous label; values at the threshold count as road.

    For a LabelImage, pixels outside the coverage are background.
    """
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must be in (0, 1)")
    if isinstance(label, FusedLabel):
        return label.values >= threshold
    if isinstance(label, LabelImage):
        return (label.values >= threshold) & label.coverage
    return np.asarray(label) >= threshold


def _unnormalized_gaussian_1d_sum(sigma: float) -> float:
    radius = int(_TRUNCATE * sigma + 0.5)
    x = np.arange(-radius, radius + 1, dtype=float)
    return float(np.exp(-0.5 * (x / sigma) ** 2).sum())


def _spatial_filter(q: np.ndarray, sigma: float) -> np.ndarray:
    """Sum over pixels j of exp(-d(i,j)^2 / 2 sigma^2) * q_j, truncated."""
    scale = _unnormalized_gaussian_1d_sum(sigma) ** 2
    return gaussian_filter(q, sigma, mode="constant", truncate=_TRUNCATE) * scale


class BilateralGrid:
    """Splat-blur-slice approximation of an unnormalized bilateral kernel.

    Pixels are embedded in a 5D (x, y, r, g, b) space scaled so the target
    Gaussian has unit sigma; filtering is then a unit-sigma blur over a
    coarse grid with multilinear splatting and slicing.
    """

    def __init__(self, image: np.ndarray, sigma_xy: float, sigma_rgb: float):
        h, w = image.shape[:2]
        ys, xs = np.mgrid[0:h, 0:w]
        feat = np.column_stack([
            xs.ravel() / sigma_xy,
            ys.ravel() / sigma_xy,
            image[..., 0].ravel() / sigma_rgb,
            image[..., 1].ravel() / sigma_rgb,
            image[..., 2].ravel() / sigma_rgb,
        ])
        feat -= feat.min(axis=0)
        base = np.floor(feat).astype(np.int64)
        frac = feat - base
        self.dims = tuple(int(d) for d in base.max(axis=0) + 2)
        self.size = int(np.prod(self.dims))
        if self.size > _MAX_GRID_CELLS:
            raise ValueError(
                f"bilateral grid of {self.size} cells exceeds the safety cap; "
                f"increase sigma_xy/sigma_rgb or reduce the image size")
        strides = np.array([int(np.prod(self.dims[d + 1:])) for d in range(5)],
                           dtype=np.int64)
        self.corner_idx = []
        self.corner_w = []
        for corner in range(32):
            offs = np.array([(corner >> d) & 1 for d in range(5)], dtype=np.int64)
            idx = ((base + offs) * strides).sum(axis=1)
            wgt = np.prod(np.where(offs == 1, frac, 1.0 - frac), axis=1)
            self.corner_idx.append(idx.astype(np.int64))
            self.corner_w.append(wgt)
        self._scale = _unnormalized_gaussian_1d_sum(1.0) ** 5

    def filter(self, values: np.ndarray) -> np.ndarray:
        """Approximate sum_j exp(-|g_i - g_j|^2 / 2) * values_j."""
        flat = np.asarray(values, dtype=float).ravel()
        grid = np.zeros(self.size)
        for idx, wgt in zip(self.corner_idx, self.corner_w):
            grid += np.bincount(idx, weights=flat * wgt, minlength=self.size)
        blurred = gaussian_filter(grid.reshape(self.dims), sigma=1.0,
                                  mode="constant", truncate=_TRUNCATE).ravel()
        out = np.zeros_like(flat)
        for idx, wgt in zip(self.corner_idx, self.corner_w):
            out += blurred[idx] * wgt
        return (out * self._scale).reshape(np.asarray(values).shape)


def mean_field_refine(image: np.ndarray, road_prob: np.ndarray,
                      params: CrfParams) -> tuple[np.ndarray, np.ndarray]:
    """Run mean-field iterations; returns (road mask, road marginal Q).

    ``road_prob`` is the continuous label prior to unary clipping.
    """
    params.validate()
    pr = np.clip(np.asarray(road_prob, dtype=float),
                 params.unary_clip, 1.0 - params.unary_clip)
    prior = np.stack([1.0 - pr, pr])  # class 0 background, class 1 road
    score = prior.copy()
    q = prior / prior.sum(axis=0, keepdims=True)

    use_spatial = params.spatial_weight > 0.0
    use_bilateral = params.bilateral_weight > 0.0
    grid = None
    ones = np.ones_like(pr)
    if use_spatial:
        spatial_deg = np.maximum(
            _spatial_filter(ones, params.spatial_sigma) - 1.0, 1e-12)
    if use_bilateral and params.iterations > 0:
        grid = BilateralGrid(image.astype(float), params.bilateral_sigma_xy,
                             params.bilateral_sigma_rgb)
        bilateral_deg = np.maximum(grid.filter(ones) - 1.0, 1e-12)

    for _ in range(params.iterations):
        pairwise = np.zeros_like(q)
        if use_spatial:
            msg = np.stack([
                (_spatial_filter(q[c], params.spatial_sigma) - q[c]) / spatial_deg
                for c in range(2)])
            pairwise += params.spatial_weight * msg[::-1]  # Potts: other class
        if use_bilateral:
            msg = np.stack([(grid.filter(q[c]) - q[c]) / bilateral_deg
                            for c in range(2)])
            pairwise += params.bilateral_weight * msg[::-1]
        score = prior * np.exp(-pairwise)
        q = score / score.sum(axis=0, keepdims=True)
    return score[1] >= score[0], q[1]


def crf_refine(image: np.ndarray, fused: FusedLabel, params: CrfParams) -> np.ndarray:
    """Refine a fused label to a binary road mask."""
    if image.shape[:2] != fused.values.shape:
        raise ValueError("image and label dimensions differ")
    mask, _ = mean_field_refine(image, fused.values, params)
    return mask
