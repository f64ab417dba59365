"""Directory-level export: images in, PFMAP1 feature files out."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .models import load_model
from .pfmap import write_pfmap

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


@dataclass
class ExportJob:
    input_dir: str
    output_dir: str
    width: int = 1224
    height: int = 400
    patch_size: int = 14
    model_id: str = "dinov2-vitg14"
    device: str = "cpu"

    @property
    def grid_shape(self) -> tuple[int, int]:
        return (self.height // self.patch_size, self.width // self.patch_size)


def _load_image(path: Path, width: int, height: int) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    if img.size != (width, height):
        img = img.resize((width, height), Image.BILINEAR)
    return np.asarray(img)


def export(job: ExportJob) -> int:
    """Run the extractor over every image; returns the file count written.

    Unreadable images are skipped with a warning; a model that cannot be
    loaded aborts the job before any file is touched.
    """
    model = load_model(job.model_id, job.patch_size, job.device)
    in_dir = Path(job.input_dir)
    out_dir = Path(job.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    images = sorted(p for p in in_dir.iterdir()
                    if p.suffix.lower() in IMAGE_SUFFIXES)
    if not images:
        logger.warning("no images found in %s", in_dir)
    count = 0
    hp, wp = job.grid_shape
    for path in images:
        try:
            image = _load_image(path, job.width, job.height)
        except (OSError, UnidentifiedImageError) as e:
            logger.warning("skipping unreadable image %s: %s", path, e)
            continue
        grid = model.extract(image)
        if grid.shape[:2] != (hp, wp):
            raise RuntimeError(f"model returned grid {grid.shape[:2]}, "
                               f"expected {(hp, wp)}")
        write_pfmap(grid, out_dir / f"{path.stem}.pfmap")
        count += 1
    return count
