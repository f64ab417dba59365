"""Run configuration: one YAML file, every parameter addressable by key.

Dotted-path overrides (e.g. ``crf.iterations=10``) come from the CLI.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml


@dataclass
class TrajectoryParams:
    """Thresholds for per-ring trajectory point filtering."""

    pose_distance_max_m: float = 1.0
    pose_distance_3d: bool = True        # False: horizontal (xy) distance
    center_spacing_min_m: float = 1.0
    center_elevation_max_m: float = 1.0
    wheel_distance_max_m: float = 2.0
    occlusion_u_px: float = 10.0
    occlusion_range_margin_m: float = 0.5


@dataclass
class LidarParams:
    radial_reject_m: float = 5.0
    radial_horizontal: bool = True       # False: 3D range for the reject rule
    strict_exclusion: bool = False       # True: a point excluded by one cue gets no label
    gradient_strict_inequality: bool = False  # True: gradients must exceed epsilon strictly
    gap_limit_px: float = 200.0          # max triangle edge for interpolation


@dataclass
class CameraParams:
    patch_size: int = 14
    analysis_width: int = 1224
    analysis_height: int = 400
    membership_threshold: float = 0.5    # patch is trajectory iff coverage > this
    min_prototype_patches: int = 200
    feature_provider: str = "files"      # "files" or "toy"
    feature_dir: str = "features"


@dataclass
class CrfParams:
    iterations: int = 5
    spatial_sigma: float = 3.0
    spatial_weight: float = 3.0
    bilateral_sigma_xy: float = 60.0
    bilateral_sigma_rgb: float = 10.0
    bilateral_weight: float = 5.0
    unary_clip: float = 0.05

    def validate(self) -> None:
        if not (0.0 < self.unary_clip < 0.5):
            raise ValueError("unary_clip must lie in (0, 0.5)")
        for name in ("spatial_sigma", "spatial_weight", "bilateral_sigma_xy",
                     "bilateral_sigma_rgb", "bilateral_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")


@dataclass
class SequenceConfig:
    """All parameters of one autolabeling run."""

    sample_spacing_m: float = 5.0
    sync_tolerance_s: float = 0.05
    future_horizon_m: float = 60.0
    excluded_frames: list[str] = field(default_factory=list)
    fov_deg: float = 90.0
    sigma_c: float = 0.6
    sigma_h: float = 0.1
    sigma_g: float = 0.02
    binarize_threshold: float = 0.5
    use_camera: bool = True
    use_height: bool = True
    use_gradient: bool = True
    gradient_no_threshold: bool = False  # force epsilon = 0 (ablation row)
    use_crf: bool = True
    trajectory: TrajectoryParams = field(default_factory=TrajectoryParams)
    lidar: LidarParams = field(default_factory=LidarParams)
    camera: CameraParams = field(default_factory=CameraParams)
    crf: CrfParams = field(default_factory=CrfParams)

    def validate(self) -> None:
        if self.sample_spacing_m <= 0:
            raise ValueError("sample_spacing_m must be positive")
        for name in ("sigma_c", "sigma_h", "sigma_g"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 < self.fov_deg <= 360.0):
            raise ValueError("fov_deg must be in (0, 360]")
        if not (0.0 < self.binarize_threshold < 1.0):
            raise ValueError("binarize_threshold must be in (0, 1)")
        self.crf.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Stable hash of the full parameter set, for run manifests."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def copy(self) -> "SequenceConfig":
        return _from_dict(SequenceConfig, self.to_dict())

    def apply_override(self, dotted_key: str, value: str) -> None:
        """Set one parameter from a ``a.b.c=value`` style CLI override."""
        obj = self
        parts = dotted_key.split(".")
        for part in parts[:-1]:
            if not hasattr(obj, part):
                raise KeyError(f"unknown config section '{part}' in '{dotted_key}'")
            obj = getattr(obj, part)
        leaf = parts[-1]
        if not hasattr(obj, leaf):
            raise KeyError(f"unknown config key '{dotted_key}'")
        current = getattr(obj, leaf)
        setattr(obj, leaf, _coerce(value, current))


def _coerce(value: str, current) -> object:
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean from '{value}'")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, list):
        return [v for v in value.split(",") if v]
    return value


def _from_dict(cls, data: dict):
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if dataclasses.is_dataclass(f.type) or f.name in ("trajectory", "lidar", "camera", "crf"):
            sub_cls = {"trajectory": TrajectoryParams, "lidar": LidarParams,
                       "camera": CameraParams, "crf": CrfParams}[f.name]
            kwargs[f.name] = _from_dict(sub_cls, value)
        else:
            kwargs[f.name] = value
    return cls(**kwargs)


def load_config(path: str | Path) -> SequenceConfig:
    """Load a SequenceConfig from YAML; unknown keys are an error."""
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> SequenceConfig:
    """Rebuild a config from a dict, e.g. a run manifest's config snapshot."""
    _check_keys(SequenceConfig, raw, prefix="")
    cfg = _from_dict(SequenceConfig, raw)
    cfg.validate()
    return cfg


def save_config(cfg: SequenceConfig, path: str | Path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)


def _check_keys(cls, data: dict, prefix: str) -> None:
    known = {f.name for f in fields(cls)}
    sub = {"trajectory": TrajectoryParams, "lidar": LidarParams,
           "camera": CameraParams, "crf": CrfParams}
    for key, value in data.items():
        if key not in known:
            raise KeyError(f"unknown config key '{prefix}{key}'")
        if key in sub and isinstance(value, dict):
            _check_keys(sub[key], value, prefix=f"{prefix}{key}.")
