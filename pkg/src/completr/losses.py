"""Training losses: binary focal classification, L1 + GIoU box regression,
matching cost, and soft-sampling reweighting of unmatched detections.

The composite loss is

    L = lambda_cls * sum_i w_i * FL(p_i, c_i) + lambda_box * L_box,
    L_box = sum_{matched} lambda_l1 * |b_i - b_gt|_1 + lambda_giou * (1 - giou),

where c_i = 1 for detections matched to a ground truth and 0 otherwise,
w_i = 1 for matched detections, and unmatched detections are down-weighted
by a Gompertz curve of their best overlap o_i with the available boxes:

    w(o) = a + (1 - a) * exp(-b * exp(-c * o)).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .errors import EmptyDetectionsError
from .geometry import elementwise_giou, pairwise_giou, pairwise_iou
from .matching import hungarian_match

PROB_EPS = 1e-7


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha {self.alpha} outside [0, 1]")
        if self.gamma < 0:
            raise ValueError(f"gamma {self.gamma} negative")


@dataclass(frozen=True)
class SoftSamplingParams:
    a: float = 0.25
    b: float = 50.0
    c: float = 20.0

    def __post_init__(self):
        if not 0.0 <= self.a <= 1.0:
            raise ValueError(f"a {self.a} outside [0, 1]")
        if self.b < 0 or self.c < 0:
            raise ValueError("b and c must be nonnegative")


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 2.0
    lambda_box: float = 1.0
    lambda_l1: float = 5.0
    lambda_giou: float = 2.0

    def __post_init__(self):
        for name in ("lambda_cls", "lambda_box", "lambda_l1", "lambda_giou"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class MatchResult:
    """Hungarian assignment plus per-detection overlaps and soft weights."""

    assignment: dict[int, int]  # detection index -> ground-truth index
    overlaps: Tensor  # (N,) best IoU against the available boxes
    weights: Tensor  # (N,) soft-sampling weights, 1 for matched detections


def focal_binary_loss(prob: Tensor | float, target: Tensor | float, fp: FocalParams) -> Tensor:
    """Elementwise binary focal loss on probabilities (not logits).

    -alpha * (1-p)^gamma * log(p)        for target 1
    -(1-alpha) * p^gamma * log(1-p)      for target 0

    Probabilities are clamped to [eps, 1-eps] with eps = 1e-7.
    """
    p = prob if isinstance(prob, torch.Tensor) else torch.tensor(prob, dtype=torch.float64)
    p = p.clamp(PROB_EPS, 1.0 - PROB_EPS)
    t = torch.as_tensor(target, dtype=p.dtype, device=p.device)
    pos = -fp.alpha * (1.0 - p) ** fp.gamma * torch.log(p)
    neg = -(1.0 - fp.alpha) * p**fp.gamma * torch.log(1.0 - p)
    return t * pos + (1.0 - t) * neg


def soft_sampling_weight(o: Tensor | float, sp: SoftSamplingParams) -> Tensor:
    """Gompertz reweighting w = a + (1-a) * exp(-b * exp(-c*o)); in [a, 1]."""
    o_t = o if isinstance(o, torch.Tensor) else torch.tensor(o, dtype=torch.float64)
    if not o_t.dtype.is_floating_point:
        o_t = o_t.double()
    return sp.a + (1.0 - sp.a) * torch.exp(-sp.b * torch.exp(-sp.c * o_t))


def match_cost(
    probs: Tensor,
    det_boxes: Tensor,
    gt_boxes: Tensor,
    lw: LossWeights,
    fp: FocalParams,
) -> Tensor:
    """Pairwise assignment cost between N detections and M ground truths.

    cost[i][j] = lambda_cls * (focal cost of predicting the target class)
               + lambda_l1 * |b_i - b_j|_1
               + lambda_giou * (1 - giou(b_i, b_j))

    The class term follows the set-prediction convention: positive focal
    term minus negative focal term, so confident detections are cheap to
    match and expensive to leave unmatched.
    """
    if probs.numel() == 0:
        raise EmptyDetectionsError("match_cost requires at least one detection")
    p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    pos = fp.alpha * (1.0 - p) ** fp.gamma * (-torch.log(p))
    neg = (1.0 - fp.alpha) * p**fp.gamma * (-torch.log(1.0 - p))
    cls_cost = (pos - neg)[:, None].expand(-1, gt_boxes.shape[0])
    l1_cost = torch.cdist(det_boxes, gt_boxes, p=1)
    giou_cost = 1.0 - pairwise_giou(det_boxes, gt_boxes)
    return lw.lambda_cls * cls_cost + lw.lambda_l1 * l1_cost + lw.lambda_giou * giou_cost


def completr_loss(
    probs: Tensor,
    det_boxes: Tensor,
    gt_boxes: Tensor,
    lw: LossWeights,
    fp: FocalParams,
    sp: SoftSamplingParams | None = None,
    overlap_boxes: Tensor | None = None,
) -> tuple[Tensor, MatchResult]:
    """Composite matching loss for one stream of one image.

    ``gt_boxes`` are the target-class boxes ((M, 4) cxcywh, possibly empty:
    the negative stream passes none and every detection is background).
    ``overlap_boxes`` are the boxes used for soft-sampling overlaps; they
    default to ``gt_boxes`` but normally include all annotated classes so
    detections of annotated non-target objects are not penalized.
    ``sp=None`` disables reweighting (all weights 1).
    """
    n = probs.shape[0]
    if n == 0:
        raise EmptyDetectionsError("loss requires at least one detection")
    m = gt_boxes.shape[0]

    if m > 0:
        with torch.no_grad():
            cost = match_cost(probs, det_boxes, gt_boxes, lw, fp)
        assignment = hungarian_match(cost)
    else:
        assignment = {}

    targets = torch.zeros(n, dtype=probs.dtype, device=probs.device)
    matched_idx = sorted(assignment)
    if matched_idx:
        targets[matched_idx] = 1.0

    if overlap_boxes is None:
        overlap_boxes = gt_boxes
    if sp is not None and overlap_boxes.shape[0] > 0:
        with torch.no_grad():
            overlaps = pairwise_iou(det_boxes, overlap_boxes).max(dim=1).values
        weights = soft_sampling_weight(overlaps, sp).to(probs.dtype)
    else:
        overlaps = torch.zeros(n, dtype=probs.dtype, device=probs.device)
        weights = torch.ones(n, dtype=probs.dtype, device=probs.device)
    if matched_idx:
        weights = weights.clone()
        weights[matched_idx] = 1.0

    cls_loss = (weights * focal_binary_loss(probs, targets, fp)).sum()

    if matched_idx:
        det_sel = det_boxes[matched_idx]
        gt_sel = gt_boxes[[assignment[i] for i in matched_idx]]
        l1 = torch.abs(det_sel - gt_sel).sum()
        giou_loss = (1.0 - elementwise_giou(det_sel, gt_sel)).sum()
        box_loss = lw.lambda_l1 * l1 + lw.lambda_giou * giou_loss
    else:
        box_loss = torch.zeros((), dtype=probs.dtype, device=probs.device)

    total = lw.lambda_cls * cls_loss + lw.lambda_box * box_loss
    return total, MatchResult(assignment=assignment, overlaps=overlaps, weights=weights)
