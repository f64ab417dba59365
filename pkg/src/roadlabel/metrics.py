"""Segmentation metrics (IoU, precision, recall, F1) against ground truth.

Aggregates are micro-averages over summed confusion counts; per-frame
values and their macro-average are reported alongside.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def confusion(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int, int]:
    """Pixel confusion counts (TP, FP, FN, TN); road is the positive class."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(np.count_nonzero(~pred & ~gt))
    return tp, fp, fn, tn


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def metrics_from_counts(tp: int, fp: int, fn: int) -> dict[str, float]:
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    return {
        "iou": _safe_div(tp, tp + fp + fn),
        "precision": precision,
        "recall": recall,
        "f1": _safe_div(2 * precision * recall, precision + recall),
    }


@dataclass
class FrameMetrics:
    frame_id: str
    tp: int
    fp: int
    fn: int
    tn: int

    def scores(self) -> dict[str, float]:
        return metrics_from_counts(self.tp, self.fp, self.fn)


@dataclass
class MetricsReport:
    """Per-configuration metrics: micro aggregate plus per-frame values."""

    tag: str
    frames: list[FrameMetrics] = field(default_factory=list)

    def add(self, frame_id: str, pred: np.ndarray, gt: np.ndarray) -> FrameMetrics:
        fm = FrameMetrics(frame_id, *confusion(pred, gt))
        self.frames.append(fm)
        return fm

    def totals(self) -> tuple[int, int, int, int]:
        tp = sum(f.tp for f in self.frames)
        fp = sum(f.fp for f in self.frames)
        fn = sum(f.fn for f in self.frames)
        tn = sum(f.tn for f in self.frames)
        return tp, fp, fn, tn

    def aggregate(self) -> dict[str, float]:
        tp, fp, fn, _ = self.totals()
        return metrics_from_counts(tp, fp, fn)

    def macro(self) -> dict[str, float]:
        if not self.frames:
            return {k: 0.0 for k in ("iou", "precision", "recall", "f1")}
        per = [f.scores() for f in self.frames]
        return {k: float(np.mean([p[k] for p in per])) for k in per[0]}

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "aggregate": self.aggregate(),
            "macro": self.macro(),
            "frames": [{"frame_id": f.frame_id, "tp": f.tp, "fp": f.fp,
                        "fn": f.fn, "tn": f.tn, **f.scores()} for f in self.frames],
        }


def reports_to_json(reports: list[MetricsReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2)


def format_table(reports: list[MetricsReport], percent: bool = True) -> str:
    """Aligned plain-text table, one configuration per row."""
    scale = 100.0 if percent else 1.0
    width = max([len("Configuration")] + [len(r.tag) for r in reports]) + 2
    header = f"{'Configuration':<{width}}" + "".join(
        f"{name:>8}" for name in ("IoU", "PRE", "REC", "F1"))
    lines = [header, "-" * len(header)]
    for r in reports:
        agg = r.aggregate()
        lines.append(f"{r.tag:<{width}}" + "".join(
            f"{agg[k] * scale:>8.1f}" for k in ("iou", "precision", "recall", "f1")))
    return "\n".join(lines)
