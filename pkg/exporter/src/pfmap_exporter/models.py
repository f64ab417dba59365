"""Feature extraction backends.

``dinov2-*`` identifiers load the pretrained vision transformer through
torch hub (weights must be downloadable or cached); ``patchstats`` is a
deterministic handcrafted extractor that needs no downloads and exists so
the export contract can run offline.
"""

from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class PatchStatsModel:
    """Per-patch color statistics and gradient energy (D=8), deterministic."""

    name = "patchstats"

    def __init__(self, patch_size: int):
        self.patch_size = patch_size

    def extract(self, image: np.ndarray) -> np.ndarray:
        p = self.patch_size
        img = image.astype(np.float32) / 255.0
        h, w = img.shape[:2]
        hp, wp = h // p, w // p
        img = img[:hp * p, :wp * p]
        patches = img.reshape(hp, p, wp, p, 3)
        mean = patches.mean(axis=(1, 3))
        std = patches.std(axis=(1, 3))
        gray = img.mean(axis=2)
        gx = np.abs(np.diff(gray, axis=1, prepend=gray[:, :1]))
        gy = np.abs(np.diff(gray, axis=0, prepend=gray[:1]))
        gxm = gx.reshape(hp, p, wp, p).mean(axis=(1, 3))[..., None]
        gym = gy.reshape(hp, p, wp, p).mean(axis=(1, 3))[..., None]
        return np.concatenate([mean, std, gxm, gym], axis=2).astype(np.float32)


class DinoV2Model:
    """Pretrained DINOv2 backbone via torch hub; aborts if weights fail to load."""

    def __init__(self, model_id: str, patch_size: int, device: str = "cpu"):
        self.name = model_id
        self.patch_size = patch_size
        self.device = device
        try:
            import torch
            hub_name = model_id.replace("-", "_").replace("dinov2_", "dinov2_")
            if not hub_name.startswith("dinov2_"):
                hub_name = "dinov2_" + hub_name
            self._torch = torch
            self._model = torch.hub.load("facebookresearch/dinov2", hub_name)
            self._model.eval().to(device)
        except Exception as e:
            raise RuntimeError(f"failed to load model '{model_id}': {e}") from e

    def extract(self, image: np.ndarray) -> np.ndarray:
        torch = self._torch
        p = self.patch_size
        h, w = image.shape[:2]
        hp, wp = h // p, w // p
        img = image[:hp * p, :wp * p].astype(np.float32) / 255.0
        img = (img - IMAGENET_MEAN) / IMAGENET_STD
        x = torch.from_numpy(img.transpose(2, 0, 1)[None]).to(self.device)
        with torch.no_grad():
            tokens = self._model.forward_features(x)["x_norm_patchtokens"]
        grid = tokens[0].reshape(hp, wp, -1).cpu().numpy()
        return grid.astype(np.float32)


def load_model(model_id: str, patch_size: int, device: str = "cpu"):
    if model_id == "patchstats":
        return PatchStatsModel(patch_size)
    if model_id.startswith("dinov2"):
        return DinoV2Model(model_id, patch_size, device)
    raise RuntimeError(f"unknown model '{model_id}' "
                       f"(expected 'patchstats' or a 'dinov2*' identifier)")
