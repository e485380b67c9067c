"""AP50 evaluation, completion-quality measurement, and score CDFs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import Annotation, Dataset
from .errors import ImageSetMismatchError

IOU_THRESHOLD = 0.5
CDF_THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(1, 20))


@dataclass(frozen=True)
class PRCurve:
    recalls: tuple[float, ...]
    precisions: tuple[float, ...]
    ap: float  # in [0, 100]


@dataclass(frozen=True)
class ApReport:
    ap50: float
    per_class: dict[int, float]
    n_images: int
    n_gt: int

    def to_dict(self) -> dict:
        return {
            "ap50": self.ap50,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
            "n_images": self.n_images,
            "n_gt": self.n_gt,
        }


def _xywh_iou(a: Sequence[float], b: Sequence[float]) -> float:
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1 = min(a[0] + a[2], b[0] + b[2])
    iy1 = min(a[1] + a[3], b[1] + b[3])
    inter = max(ix1 - ix0, 0.0) * max(iy1 - iy0, 0.0)
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def pr_curve(
    predictions: Sequence[Annotation],
    gt: Dataset,
    category_id: int,
    iou_threshold: float = IOU_THRESHOLD,
) -> PRCurve:
    """Precision-recall sweep for one class, all-point interpolation.

    Predictions are ranked by descending score (ties broken by image then
    annotation id, so input order never matters); each ground truth can be
    matched at most once, greedily to the highest-IoU candidate.
    """
    gt_boxes: dict[int, list] = {}
    n_gt = 0
    for img in gt.images:
        boxes = [a.bbox for a in img.annotations if a.category_id == category_id]
        if boxes:
            gt_boxes[img.image_id] = boxes
            n_gt += len(boxes)

    preds = sorted(
        (p for p in predictions if p.category_id == category_id),
        key=lambda p: (-p.score, p.image_id, p.annotation_id),
    )
    matched: dict[int, set[int]] = {i: set() for i in gt_boxes}
    tp = np.zeros(len(preds))
    for k, pred in enumerate(preds):
        candidates = gt_boxes.get(pred.image_id, [])
        best_iou, best_j = 0.0, -1
        for j, box in enumerate(candidates):
            if j in matched[pred.image_id]:
                continue
            val = _xywh_iou(pred.bbox, box)
            if val > best_iou:
                best_iou, best_j = val, j
        if best_j >= 0 and best_iou >= iou_threshold:
            matched[pred.image_id].add(best_j)
            tp[k] = 1.0

    if n_gt == 0:
        return PRCurve((), (), 0.0)
    if len(preds) == 0:
        return PRCurve((), (), 0.0)

    tp_cum = np.cumsum(tp)
    recalls = tp_cum / n_gt
    precisions = tp_cum / np.arange(1, len(preds) + 1)
    # precision envelope: best precision at any recall >= r
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recalls, envelope):
        ap += (r - prev_r) * p
        prev_r = r
    return PRCurve(tuple(recalls.tolist()), tuple(precisions.tolist()), ap * 100.0)


def ap50(
    predictions: Sequence[Annotation],
    gt: Dataset,
    iou_threshold: float = IOU_THRESHOLD,
) -> ApReport:
    """Mean AP at the given IoU threshold over the classes present in gt."""
    gt_classes = sorted({a.category_id for a in gt.iter_annotations()})
    per_class = {
        c: pr_curve(predictions, gt, c, iou_threshold).ap for c in gt_classes
    }
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return ApReport(
        ap50=mean,
        per_class=per_class,
        n_images=gt.n_images,
        n_gt=gt.n_annotations,
    )


def completion_quality(completed: Dataset, full_gt: Dataset) -> float:
    """AP50 of a (partially) completed dataset's annotations against full gt.

    Original annotations carry score 1.0 so they rank above completions.
    """
    left = {img.image_id for img in completed.images}
    right = {img.image_id for img in full_gt.images}
    if left != right:
        raise ImageSetMismatchError(
            f"image sets differ: {len(left - right)} extra, {len(right - left)} missing"
        )
    return ap50(list(completed.iter_annotations()), full_gt).ap50


def score_cdf(scores: Iterable[float]) -> list[tuple[float, float]]:
    """Empirical CDF of detection scores at thresholds 0.05, 0.10, ..., 0.95."""
    values = np.asarray(list(scores), dtype=np.float64)
    if values.size == 0:
        raise ValueError("score_cdf requires at least one detection")
    return [(t, float(np.mean(values <= t))) for t in CDF_THRESHOLDS]
