"""Bounding-box geometry: IoU, generalized IoU and the combined box loss.

Boxes are (cx, cy, w, h) 4-vectors, normalized to [0,1] in real scenes but
the geometry itself works on any finite coordinates. Float helpers operate
on numpy arrays; the differentiable variants take autodiff tensors and are
used inside the set losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

AREA_EPS = 1e-9

LAMBDA_L1 = 5.0
LAMBDA_GIOU = 2.0
LAMBDA_LABEL = 1.0


@dataclass(frozen=True)
class Box:
    """A (cx, cy, w, h) box; degenerate means zero width or height."""

    cx: float
    cy: float
    w: float
    h: float

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h])

    @staticmethod
    def from_array(arr) -> "Box":
        cx, cy, w, h = (float(x) for x in np.asarray(arr).reshape(4))
        return Box(cx, cy, w, h)

    @property
    def degenerate(self) -> bool:
        return self.w <= 0.0 or self.h <= 0.0

    def validate_normalized(self) -> None:
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center ({self.cx}, {self.cy}) outside [0,1]")
        if not (0.0 <= self.w <= 1.0 and 0.0 <= self.h <= 1.0):
            raise ValueError(f"box size ({self.w}, {self.h}) outside [0,1]")


def to_xyxy(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    half = boxes[..., 2:] / 2.0
    return np.concatenate([boxes[..., :2] - half, boxes[..., :2] + half], axis=-1)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of cxcywh boxes a:[m,4], b:[n,4] -> [m,n]."""
    xa = to_xyxy(np.atleast_2d(a))[:, None, :]  # [m,1,4]
    xb = to_xyxy(np.atleast_2d(b))[None, :, :]  # [1,n,4]
    iw = np.clip(np.minimum(xa[..., 2], xb[..., 2]) - np.maximum(xa[..., 0], xb[..., 0]), 0.0, None)
    ih = np.clip(np.minimum(xa[..., 3], xb[..., 3]) - np.maximum(xa[..., 1], xb[..., 1]), 0.0, None)
    inter = iw * ih
    area_a = np.clip(xa[..., 2] - xa[..., 0], 0.0, None) * np.clip(xa[..., 3] - xa[..., 1], 0.0, None)
    area_b = np.clip(xb[..., 2] - xb[..., 0], 0.0, None) * np.clip(xb[..., 3] - xb[..., 1], 0.0, None)
    union = area_a + area_b - inter
    return inter / np.maximum(union, AREA_EPS)


def giou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise generalized IoU: IoU - (enclosing - union) / enclosing."""
    xa = to_xyxy(np.atleast_2d(a))[:, None, :]
    xb = to_xyxy(np.atleast_2d(b))[None, :, :]
    iw = np.clip(np.minimum(xa[..., 2], xb[..., 2]) - np.maximum(xa[..., 0], xb[..., 0]), 0.0, None)
    ih = np.clip(np.minimum(xa[..., 3], xb[..., 3]) - np.maximum(xa[..., 1], xb[..., 1]), 0.0, None)
    inter = iw * ih
    area_a = np.clip(xa[..., 2] - xa[..., 0], 0.0, None) * np.clip(xa[..., 3] - xa[..., 1], 0.0, None)
    area_b = np.clip(xb[..., 2] - xb[..., 0], 0.0, None) * np.clip(xb[..., 3] - xb[..., 1], 0.0, None)
    union = area_a + area_b - inter
    ew = np.maximum(xa[..., 2], xb[..., 2]) - np.minimum(xa[..., 0], xb[..., 0])
    eh = np.maximum(xa[..., 3], xb[..., 3]) - np.minimum(xa[..., 1], xb[..., 1])
    enclosing = ew * eh
    return inter / np.maximum(union, AREA_EPS) - (enclosing - union) / np.maximum(enclosing, AREA_EPS)


def iou(a, b) -> float:
    return float(iou_matrix(np.asarray(a).reshape(1, 4), np.asarray(b).reshape(1, 4))[0, 0])


def giou(a, b) -> float:
    """Generalized IoU of two boxes; two degenerate boxes are defined as -1."""
    a = np.asarray(a, dtype=np.float64).reshape(4)
    b = np.asarray(b, dtype=np.float64).reshape(4)
    if min(a[2], a[3]) <= 0.0 and min(b[2], b[3]) <= 0.0:
        return -1.0
    return float(giou_matrix(a.reshape(1, 4), b.reshape(1, 4))[0, 0])


def l_box_matrix(pred: np.ndarray, gt: np.ndarray,
                 lambda_giou: float = LAMBDA_GIOU, lambda_l1: float = LAMBDA_L1) -> np.ndarray:
    """Pairwise box loss lambda_giou*(1-GIoU) + lambda_l1*|diff|_1 -> [m,n]."""
    pred = np.atleast_2d(pred)
    gt = np.atleast_2d(gt)
    l1 = np.abs(pred[:, None, :] - gt[None, :, :]).sum(axis=-1)
    return lambda_giou * (1.0 - giou_matrix(pred, gt)) + lambda_l1 * l1


def l_box_value(pred, gt, lambda_giou: float = LAMBDA_GIOU, lambda_l1: float = LAMBDA_L1) -> float:
    return float(l_box_matrix(np.asarray(pred).reshape(1, 4), np.asarray(gt).reshape(1, 4),
                              lambda_giou, lambda_l1)[0, 0])


# -- differentiable variants -------------------------------------------------
def _xyxy_t(boxes: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    cx = boxes[:, 0:1]
    cy = boxes[:, 1:2]
    hw = boxes[:, 2:3] * 0.5
    hh = boxes[:, 3:4] * 0.5
    return cx - hw, cy - hh, cx + hw, cy + hh


def giou_pairs(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Row-wise GIoU of pred:[n,4] tensor against gt:[n,4] constants -> [n,1]."""
    gt = np.atleast_2d(np.asarray(gt, dtype=np.float64))
    px0, py0, px1, py1 = _xyxy_t(pred)
    gx = to_xyxy(gt)
    gx0, gy0, gx1, gy1 = (Tensor(gx[:, i:i + 1]) for i in range(4))
    iw = ad.clamp_min(ad.minimum(px1, gx1) - ad.maximum(px0, gx0), 0.0)
    ih = ad.clamp_min(ad.minimum(py1, gy1) - ad.maximum(py0, gy0), 0.0)
    inter = iw * ih
    area_p = ad.clamp_min(px1 - px0, 0.0) * ad.clamp_min(py1 - py0, 0.0)
    area_g = ad.clamp_min(gx1 - gx0, 0.0) * ad.clamp_min(gy1 - gy0, 0.0)
    union = area_p + area_g - inter
    ew = ad.maximum(px1, gx1) - ad.minimum(px0, gx0)
    eh = ad.maximum(py1, gy1) - ad.minimum(py0, gy0)
    enclosing = ew * eh
    return inter / ad.clamp_min(union, AREA_EPS) - (enclosing - union) / ad.clamp_min(enclosing, AREA_EPS)


def l_box_parts(pred: Tensor, gt: np.ndarray) -> tuple[Tensor, Tensor]:
    """Summed L1 and (1 - GIoU) terms over matched rows, kept separate."""
    gt = np.atleast_2d(np.asarray(gt, dtype=np.float64))
    l1 = ad.tensor_sum(ad.absolute(pred - Tensor(gt)))
    giou_term = ad.tensor_sum(1.0 - giou_pairs(pred, gt))
    return l1, giou_term


def l_box(pred: Tensor, gt: np.ndarray,
          lambda_giou: float = LAMBDA_GIOU, lambda_l1: float = LAMBDA_L1) -> Tensor:
    """Differentiable lambda_giou*(1-GIoU) + lambda_l1*L1, summed over rows."""
    l1, giou_term = l_box_parts(pred, gt)
    return lambda_giou * giou_term + lambda_l1 * l1
