"""Box geometry: IoU, generalized IoU, and coordinate conversions.

Two APIs: scalar functions over ``Box`` (exact float arithmetic for tests and
merge logic) and batched torch ops (differentiable, used by losses and
matching costs). Boxes are (cx, cy, w, h), normalized to [0, 1] inside the
model; the absolute-pixel (x, y, w, h) file convention is converted at the
module boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ValueError(f"negative box dimensions: w={self.w}, h={self.h}")

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    @property
    def area(self) -> float:
        return self.w * self.h


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when the union has zero area."""
    ax0, ay0, ax1, ay1 = a.corners
    bx0, by0, bx1, by1 = b.corners
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def giou(a: Box, b: Box) -> float:
    """IoU minus the enclosing-box slack fraction; in [-1, 1]."""
    ax0, ay0, ax1, ay1 = a.corners
    bx0, by0, bx1, by1 = b.corners
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    enclose = (max(ax1, bx1) - min(ax0, bx0)) * (max(ay1, by1) - min(ay0, by0))
    iou_val = inter / union if union > 0 else 0.0
    if enclose <= 0:
        return iou_val
    return iou_val - (enclose - union) / enclose


def box_cxcywh_to_xyxy(boxes: Tensor) -> Tensor:
    cx, cy, w, h = boxes.unbind(-1)
    return torch.stack((cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2), dim=-1)


def box_xyxy_to_cxcywh(boxes: Tensor) -> Tensor:
    x0, y0, x1, y1 = boxes.unbind(-1)
    return torch.stack(((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0), dim=-1)


def abs_xywh_to_norm_cxcywh(
    bbox: tuple[float, float, float, float], width: int, height: int
) -> Box:
    x, y, w, h = bbox
    return Box((x + w / 2) / width, (y + h / 2) / height, w / width, h / height)


def norm_cxcywh_to_abs_xywh(box: Box, width: int, height: int) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = box.corners
    return (x0 * width, y0 * height, (x1 - x0) * width, (y1 - y0) * height)


def pairwise_iou(a: Tensor, b: Tensor) -> Tensor:
    """IoU matrix between (N, 4) and (M, 4) cxcywh boxes, shape (N, M)."""
    a_xy = box_cxcywh_to_xyxy(a)
    b_xy = box_cxcywh_to_xyxy(b)
    lt = torch.max(a_xy[:, None, :2], b_xy[None, :, :2])
    rb = torch.min(a_xy[:, None, 2:], b_xy[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] * a[:, 3])[:, None]
    area_b = (b[:, 2] * b[:, 3])[None, :]
    union = area_a + area_b - inter
    return torch.where(union > 0, inter / union.clamp(min=torch.finfo(a.dtype).tiny), torch.zeros_like(inter))


def pairwise_giou(a: Tensor, b: Tensor) -> Tensor:
    """Generalized IoU matrix between (N, 4) and (M, 4) cxcywh boxes."""
    a_xy = box_cxcywh_to_xyxy(a)
    b_xy = box_cxcywh_to_xyxy(b)
    lt = torch.max(a_xy[:, None, :2], b_xy[None, :, :2])
    rb = torch.min(a_xy[:, None, 2:], b_xy[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] * a[:, 3])[:, None]
    area_b = (b[:, 2] * b[:, 3])[None, :]
    union = area_a + area_b - inter
    tiny = torch.finfo(a.dtype).tiny
    iou_mat = torch.where(union > 0, inter / union.clamp(min=tiny), torch.zeros_like(inter))
    lt_enc = torch.min(a_xy[:, None, :2], b_xy[None, :, :2])
    rb_enc = torch.max(a_xy[:, None, 2:], b_xy[None, :, 2:])
    wh_enc = (rb_enc - lt_enc).clamp(min=0)
    enclose = wh_enc[..., 0] * wh_enc[..., 1]
    slack = torch.where(
        enclose > 0, (enclose - union) / enclose.clamp(min=tiny), torch.zeros_like(enclose)
    )
    return iou_mat - slack


def elementwise_giou(a: Tensor, b: Tensor) -> Tensor:
    """GIoU between matched (K, 4) cxcywh box pairs, shape (K,)."""
    a_xy = box_cxcywh_to_xyxy(a)
    b_xy = box_cxcywh_to_xyxy(b)
    lt = torch.max(a_xy[:, :2], b_xy[:, :2])
    rb = torch.min(a_xy[:, 2:], b_xy[:, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[:, 0] * wh[:, 1]
    union = a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter
    tiny = torch.finfo(a.dtype).tiny
    iou_val = torch.where(union > 0, inter / union.clamp(min=tiny), torch.zeros_like(inter))
    lt_enc = torch.min(a_xy[:, :2], b_xy[:, :2])
    rb_enc = torch.max(a_xy[:, 2:], b_xy[:, 2:])
    wh_enc = (rb_enc - lt_enc).clamp(min=0)
    enclose = wh_enc[:, 0] * wh_enc[:, 1]
    slack = torch.where(
        enclose > 0, (enclose - union) / enclose.clamp(min=tiny), torch.zeros_like(enclose)
    )
    return iou_val - slack
