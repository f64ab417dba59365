import numpy as np
import pytest

from roadlabel.config import SequenceConfig
from roadlabel.geometry import Calibration, RigidTransform
from roadlabel.synth import SceneParams


@pytest.fixture
def simple_calib() -> Calibration:
    """Camera aligned with the lidar axes convention, no distortion."""
    base = np.array([[0.0, -1.0, 0.0],
                     [0.0, 0.0, -1.0],
                     [1.0, 0.0, 0.0]])
    return Calibration(fx=300.0, fy=300.0, cx=320.0, cy=180.0, k1=0.0, k2=0.0,
                       lidar_to_camera=RigidTransform(base, np.zeros(3)),
                       track_width=1.8, image_width=640, image_height=360,
                       sensor_height=1.7)


@pytest.fixture
def pinhole_calib() -> Calibration:
    """Identity extrinsics: points are given directly in the camera frame."""
    return Calibration(fx=1000.0, fy=1000.0, cx=612.0, cy=200.0, k1=0.0, k2=0.0,
                       lidar_to_camera=RigidTransform.identity(),
                       track_width=1.8, image_width=1224, image_height=400)


def synth_config(params: SceneParams) -> SequenceConfig:
    """SequenceConfig matching a synthetic scene's image and patch geometry."""
    cfg = SequenceConfig()
    cfg.camera.patch_size = params.patch_size
    cfg.camera.analysis_width = params.image_width
    cfg.camera.analysis_height = params.image_height
    return cfg


@pytest.fixture
def scene_params() -> SceneParams:
    return SceneParams(noise_seed=7)
