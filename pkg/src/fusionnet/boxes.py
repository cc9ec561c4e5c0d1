"""Box records and coordinate helpers shared by the data, model and metric code.

Pixel boxes are ``(x1, y1, x2, y2)``; normalized labels are ``(cx, cy, w, h)``
relative to the image size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Detection",
    "GroundTruth",
    "box_iou",
    "xyxy_to_cxcywh_norm",
    "cxcywh_norm_to_xyxy",
    "xyxy_to_xywh",
    "xywh_to_xyxy",
]


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: tuple[float, float, float, float]
    confidence: float

    @property
    def width(self) -> float:
        return self.box[2] - self.box[0]

    @property
    def height(self) -> float:
        return self.box[3] - self.box[1]


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    box: tuple[float, float, float, float]
    cls: int = 0

    @property
    def width(self) -> float:
        return self.box[2] - self.box[0]

    @property
    def height(self) -> float:
        return self.box[3] - self.box[1]


def _area(b) -> float:
    return (b[2] - b[0]) * (b[3] - b[1])


def box_iou(a, b) -> float:
    """Intersection over union of two pixel boxes; raises on non-positive area."""
    if not (a[2] > a[0] and a[3] > a[1]) or not (b[2] > b[0] and b[3] > b[1]):
        raise ValueError(f"IoU needs positive-area boxes, got {a} and {b}")
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (_area(a) + _area(b) - inter)


def xyxy_to_cxcywh_norm(boxes: np.ndarray, width: int, height: int) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    out = np.empty_like(boxes)
    out[:, 0] = (boxes[:, 0] + boxes[:, 2]) / 2 / width
    out[:, 1] = (boxes[:, 1] + boxes[:, 3]) / 2 / height
    out[:, 2] = (boxes[:, 2] - boxes[:, 0]) / width
    out[:, 3] = (boxes[:, 3] - boxes[:, 1]) / height
    return out


def cxcywh_norm_to_xyxy(labels: np.ndarray, width: int, height: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64).reshape(-1, 4)
    out = np.empty_like(labels)
    out[:, 0] = (labels[:, 0] - labels[:, 2] / 2) * width
    out[:, 1] = (labels[:, 1] - labels[:, 3] / 2) * height
    out[:, 2] = (labels[:, 0] + labels[:, 2] / 2) * width
    out[:, 3] = (labels[:, 1] + labels[:, 3] / 2) * height
    return out


def xyxy_to_xywh(box):
    return (box[0], box[1], box[2] - box[0], box[3] - box[1])


def xywh_to_xyxy(box):
    return (box[0], box[1], box[0] + box[2], box[1] + box[3])
