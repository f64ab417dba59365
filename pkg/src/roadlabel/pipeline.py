"""Per-frame orchestration: fit, label, fuse, refine, and the ablation matrix.

A frame is processed in two stages. The geometry stage (trajectory fit and
lidar point labels) is independent per frame and may run in a worker pool.
The camera stage is sequential within a sequence because the road
prototype carries over to frames with too few trajectory patches.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .camera_label import (CameraLabelSkipped, FeatureProvider, FileFeatureProvider,
                           Prototype, ToyFeatureProvider, camera_label,
                           compute_prototype, similarity_map, trajectory_patches,
                           upsample)
from .config import SequenceConfig
from .fusion_crf import FusedLabel, binarize, crf_refine, fuse
from .geometry import Calibration, limit_fov
from .ingest import FrameSample, resize_image
from .lidar_label import (LabelImage, RingLabels, gather_labeled_points,
                          label_scan, rasterize)
from .metrics import MetricsReport
from .trajectory import (RingCandidate, RingDiagnostic, RingTrajectory,
                         fit_candidates, filter_rings, poses_to_sensor_frame,
                         trajectory_mask)

logger = logging.getLogger(__name__)

# Ablation rows mirroring the label-quality study: each entry toggles the
# camera cue, height cue, gradient cue, zero-threshold gradients, and CRF.
ABLATION_ROWS: list[tuple[str, dict[str, bool]]] = [
    ("Camera-based (C)", dict(camera=True, height=False, gradient=False)),
    ("Height-based (H)", dict(camera=False, height=True, gradient=False)),
    ("Gradient-based no thresholding",
     dict(camera=False, height=False, gradient=True, no_threshold=True)),
    ("Gradient-based (G)", dict(camera=False, height=False, gradient=True)),
    ("H + G", dict(camera=False, height=True, gradient=True)),
    ("C + H", dict(camera=True, height=True, gradient=False)),
    ("C + G", dict(camera=True, height=False, gradient=True)),
    ("C + H + G", dict(camera=True, height=True, gradient=True)),
    ("C + H + G + CRF", dict(camera=True, height=True, gradient=True, crf=True)),
]


@dataclass
class RowSpec:
    """Which label components one configuration uses."""

    camera: bool = True
    height: bool = True
    gradient: bool = True
    no_threshold: bool = False
    crf: bool = True

    @staticmethod
    def from_config(cfg: SequenceConfig) -> "RowSpec":
        return RowSpec(cfg.use_camera, cfg.use_height, cfg.use_gradient,
                       cfg.gradient_no_threshold, cfg.use_crf)

    @property
    def uses_lidar(self) -> bool:
        return self.height or self.gradient


@dataclass
class FrameContext:
    """Shared per-frame computations reused by all ablation rows."""

    frame: FrameSample
    image: np.ndarray                     # analysis-size image
    calib: Calibration                    # scaled to the analysis size
    candidates: list[RingCandidate]
    trajectories: list[RingTrajectory]
    diagnostics: list[RingDiagnostic]
    traj_mask: np.ndarray
    ring_labels: list[RingLabels]
    ring_labels_no_threshold: list[RingLabels]
    scan_fov: object
    cam_label: LabelImage | None = None
    cam_skip_reason: str | None = None
    prototype: Prototype | None = None


@dataclass
class FrameStatus:
    frame_id: str
    status: str                  # "ok", "camera_skipped", "skipped"
    reason: str | None = None
    valid_rings: int = 0
    fused_fraction: float = 0.0


@dataclass
class RunManifest:
    version: str
    config_hash: str
    config: dict
    input_dir: str
    output_dir: str
    frames: list[FrameStatus] = field(default_factory=list)

    def to_json(self) -> str:
        payload = dataclasses.asdict(self)
        return json.dumps(payload, indent=2)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


def make_feature_provider(cfg: SequenceConfig, seq_dir: str | Path | None) -> FeatureProvider:
    cam = cfg.camera
    if cam.feature_provider == "toy":
        return ToyFeatureProvider(cam.patch_size)
    expected = (cam.analysis_height // cam.patch_size,
                cam.analysis_width // cam.patch_size)
    base = Path(seq_dir) / cam.feature_dir if seq_dir is not None else Path(cam.feature_dir)
    return FileFeatureProvider(base, cam.patch_size, expected)


def build_geometry_context(frame: FrameSample, cfg: SequenceConfig) -> FrameContext:
    """Trajectory fit and lidar point labels for one frame."""
    w, h = cfg.camera.analysis_width, cfg.camera.analysis_height
    image = resize_image(frame.image, w, h)
    calib = frame.calib if frame.calib.image_size == (w, h) else frame.calib.scaled(w, h)

    scan_fov = limit_fov(frame.scan, cfg.fov_deg)
    poses_lidar = poses_to_sensor_frame(frame.future_poses, frame.pose,
                                        calib.sensor_height)
    candidates = fit_candidates(scan_fov, poses_lidar, calib.track_width)
    trajectories, diagnostics = filter_rings(candidates, scan_fov, calib,
                                             cfg.trajectory)
    mask = trajectory_mask(trajectories, scan_fov, calib, (w, h))
    labels = label_scan(scan_fov, trajectories, cfg.sigma_h, cfg.sigma_g, cfg.lidar)
    labels_eps0 = label_scan(scan_fov, trajectories, cfg.sigma_h, cfg.sigma_g,
                             cfg.lidar, force_zero_epsilon=True)
    return FrameContext(frame, image, calib, candidates, trajectories, diagnostics,
                        mask, labels, labels_eps0, scan_fov)


def camera_stage(ctx: FrameContext, cfg: SequenceConfig, provider: FeatureProvider,
                 carry: Prototype | None) -> Prototype | None:
    """Compute the camera label; returns the carry for the next frame."""
    fmap = provider.features(ctx.frame)  # missing/mismatched files are fatal
    try:
        patches = trajectory_patches(ctx.traj_mask, fmap.patch_size,
                                     cfg.camera.membership_threshold)
        proto = compute_prototype(fmap, patches, carry,
                                  cfg.camera.min_prototype_patches)
        sim = similarity_map(fmap, proto)
        patch_labels = camera_label(sim, cfg.sigma_c)
        ctx.cam_label = upsample(patch_labels, ctx.calib.image_size, fmap.patch_size)
        ctx.prototype = proto
        if proto.source_frame == ctx.frame.frame_id:
            return proto
        return carry
    except CameraLabelSkipped as e:
        ctx.cam_skip_reason = str(e)
        logger.warning("frame %s: camera label skipped: %s", ctx.frame.frame_id, e)
        return carry


def lidar_label_image(ctx: FrameContext, spec: RowSpec,
                      cfg: SequenceConfig) -> LabelImage:
    """Rasterized lidar label for the cue subset a row requests."""
    labels = ctx.ring_labels_no_threshold if spec.no_threshold else ctx.ring_labels
    if spec.height and spec.gradient:
        which = "combined"
    elif spec.height:
        which = "height"
    else:
        which = "gradient"
    xyz, values = gather_labeled_points(ctx.scan_fov, labels, which)
    if xyz.shape[0] == 0:
        w, h = ctx.calib.image_size
        return LabelImage.empty(h, w)
    return rasterize(xyz, values, ctx.calib, cfg.lidar.gap_limit_px)


@dataclass
class RowResult:
    mask: np.ndarray | None
    fused: FusedLabel | None = None
    lidar: LabelImage | None = None
    skipped_reason: str | None = None


def assemble_row(ctx: FrameContext, spec: RowSpec, cfg: SequenceConfig) -> RowResult:
    """Binary mask for one configuration row from the shared context."""
    lid = lidar_label_image(ctx, spec, cfg) if spec.uses_lidar else None
    if spec.camera:
        if ctx.cam_label is None:
            return RowResult(None, skipped_reason=ctx.cam_skip_reason or "no camera label")
        if lid is not None:
            fused = fuse(ctx.cam_label, lid)
        else:
            fused = FusedLabel(ctx.cam_label.values.copy(),
                               np.zeros_like(ctx.cam_label.values, dtype=np.uint8))
    else:
        if lid is None:
            return RowResult(None, skipped_reason="configuration selects no cues")
        fused = FusedLabel(np.where(lid.coverage, lid.values, 0.0),
                           lid.coverage.astype(np.uint8))
    if spec.crf:
        mask = crf_refine(ctx.image, fused, cfg.crf)
    else:
        mask = binarize(fused, cfg.binarize_threshold)
    return RowResult(mask, fused, lid)


def build_contexts(frames: list[FrameSample], cfg: SequenceConfig,
                   provider: FeatureProvider, workers: int = 1,
                   ) -> list[FrameContext]:
    """Geometry stage (possibly pooled), then the sequential camera stage."""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            contexts = list(pool.map(lambda f: build_geometry_context(f, cfg), frames))
    else:
        contexts = [build_geometry_context(f, cfg) for f in frames]
    carry: Prototype | None = None
    for ctx in contexts:
        carry = camera_stage(ctx, cfg, provider, carry)
    return contexts


def process_sequence(frames: list[FrameSample], cfg: SequenceConfig,
                     output_dir: str | Path, input_dir: str = "",
                     workers: int = 1, dump_debug: bool = False,
                     ) -> RunManifest:
    """Full run: labels and masks for every frame, plus a run manifest."""
    from . import ingest

    out = Path(output_dir)
    for sub in ("lidar", "lidar_coverage", "camera", "fused", "mask"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    provider = make_feature_provider(cfg, input_dir or None)
    spec = RowSpec.from_config(cfg)
    manifest = RunManifest(__version__, cfg.config_hash(), cfg.to_dict(),
                           str(input_dir), str(out))

    contexts = build_contexts(frames, cfg, provider, workers)
    for ctx in contexts:
        fid = ctx.frame.frame_id
        result = assemble_row(ctx, spec, cfg)
        if dump_debug:
            _dump_debug(ctx, out, fid)
        if result.mask is None:
            manifest.frames.append(FrameStatus(fid, "skipped", result.skipped_reason))
            continue
        if result.lidar is not None:
            ingest.save_label_png(np.where(result.lidar.coverage,
                                           result.lidar.values, 0.0),
                                  out / "lidar" / f"{fid}.png")
            ingest.save_mask_png(result.lidar.coverage,
                                 out / "lidar_coverage" / f"{fid}.png")
        if ctx.cam_label is not None:
            ingest.save_label_png(ctx.cam_label.values, out / "camera" / f"{fid}.png")
        if result.fused is not None:
            ingest.save_label_png(result.fused.values, out / "fused" / f"{fid}.png")
        ingest.save_mask_png(result.mask, out / "mask" / f"{fid}.png")
        status = "ok" if ctx.cam_skip_reason is None else "camera_skipped"
        manifest.frames.append(FrameStatus(
            fid, status, ctx.cam_skip_reason,
            valid_rings=sum(t.valid for t in ctx.trajectories),
            fused_fraction=result.fused.fused_fraction() if result.fused else 0.0))
    manifest.save(out / "manifest.json")
    return manifest


def _dump_debug(ctx: FrameContext, out: Path, fid: str) -> None:
    """Per-frame CSVs: trajectory candidates and lidar point labels."""
    import csv

    debug_dir = out / "debug"
    debug_dir.mkdir(exist_ok=True)
    with open(debug_dir / f"{fid}_trajectory.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["ring", "cx", "cy", "cz", "lx", "ly", "lz",
                         "rx", "ry", "rz", "valid", "failed_rule"])
        for traj, diag in zip(ctx.trajectories, ctx.diagnostics):
            c = diag.candidate
            writer.writerow([c.ring, *c.center_xyz, *c.left_xyz, *c.right_xyz,
                             traj.valid, diag.failed_rule or ""])
    with open(debug_dir / f"{fid}_point_labels.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["ring", "index", "l_h", "l_grad", "l_lid"])
        for rl in ctx.ring_labels:
            for i, (hv, gv, cv) in enumerate(zip(rl.height, rl.gradient, rl.combined)):
                writer.writerow([rl.ring, i, hv, gv, cv])


def run_ablation(frames: list[FrameSample], cfg: SequenceConfig,
                 gt_masks: dict[str, np.ndarray], workers: int = 1,
                 rows: list[tuple[str, dict]] | None = None,
                 input_dir: str | Path | None = None,
                 ) -> list[MetricsReport]:
    """One MetricsReport per configuration row over frames with ground truth."""
    provider = make_feature_provider(cfg, input_dir)
    contexts = build_contexts(frames, cfg, provider, workers)
    reports = []
    for tag, flags in (rows if rows is not None else ABLATION_ROWS):
        spec = RowSpec(**{**dict(camera=True, height=True, gradient=True,
                                 no_threshold=False, crf=False), **flags})
        report = MetricsReport(tag)
        for ctx in contexts:
            gt = gt_masks.get(ctx.frame.frame_id)
            if gt is None:
                continue
            result = assemble_row(ctx, spec, cfg)
            if result.mask is None:
                logger.warning("row %s: frame %s skipped (%s)", tag,
                               ctx.frame.frame_id, result.skipped_reason)
                continue
            report.add(ctx.frame.frame_id, result.mask, gt)
        reports.append(report)
    return reports
