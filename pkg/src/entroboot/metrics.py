"""Evaluation: Dice/ROC for entropy maps, detection rate and AP for instances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .raster import BBox, component_bboxes

AP_RECALL_GRID = np.linspace(0.0, 1.0, 101)
MAP_ALPHAS = tuple(round(float(a), 2) for a in np.arange(0.50, 0.951, 0.05))
DETECTION_ALPHAS = tuple(round(float(a), 2) for a in np.arange(0.25, 0.751, 0.05))


@dataclass(frozen=True)
class MetricCurve:
    thresholds: np.ndarray
    values: np.ndarray

    def rows(self) -> List[Tuple[float, float]]:
        return list(zip(self.thresholds.tolist(), self.values.tolist()))


@dataclass(frozen=True)
class RocCurve:
    """ROC operating points, one per distinct score, from (0, 0) to (1, 1)."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


@dataclass(frozen=True)
class DetectionReport:
    alpha: float
    tp: int
    n_gt: int

    @property
    def rate(self) -> float:
        return self.tp / self.n_gt


@dataclass(frozen=True)
class ScoredPrediction:
    bbox: BBox
    score: float
    mask: Optional[np.ndarray] = None  # full-frame boolean mask

    def __post_init__(self):
        if not (np.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


# -- pixel-level -------------------------------------------------------------

def dice(a, b) -> float:
    """Dice overlap of two masks; two empty masks agree perfectly (1.0)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("mask shapes differ")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def dice_curve(entropy, gt, n_thresholds: int = 101) -> Tuple[MetricCurve, Tuple[float, float]]:
    """Dice of ``entropy >= t`` against ``gt`` over evenly spaced ``t`` in [0, 1].

    Returns the curve and its peak ``(threshold, dice)``; ties resolve to
    the lowest threshold.
    """
    entropy = np.asarray(entropy, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    thresholds = np.linspace(0.0, 1.0, n_thresholds)
    values = np.array([dice(entropy >= t, gt) for t in thresholds])
    best = int(np.argmax(values))
    return MetricCurve(thresholds, values), (float(thresholds[best]), float(values[best]))


def roc_auroc(entropy, gt) -> Tuple[RocCurve, float]:
    """ROC curve and trapezoidal AUROC with ``gt`` pixels as positives.

    Pixels with equal scores are swept together, which makes the area equal
    to the Mann-Whitney statistic with ties counted as one half.
    """
    scores = np.asarray(entropy, dtype=np.float64).ravel()
    labels = np.asarray(gt, dtype=bool).ravel()
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC undefined: ground truth must contain both classes")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    hits = labels[order]
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(hits)[ends]
    fp = (ends + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s[ends]]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds), auc


# -- instance-level ----------------------------------------------------------

def box_iou(a: BBox, b: BBox) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    inter = max(iw, 0) * max(ih, 0)
    union = a.area + b.area - inter
    if union == 0:
        raise ValueError("IoU undefined for two empty regions")
    return inter / union


def iou(a, b) -> float:
    """Intersection over union of two boxes or two masks."""
    if isinstance(a, BBox) and isinstance(b, BBox):
        return box_iou(a, b)
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("mask shapes differ")
    inter = int(np.count_nonzero(a & b))
    union = int(a.sum()) + int(b.sum()) - inter
    if union == 0:
        raise ValueError("IoU undefined for two empty regions")
    return inter / union


def _gt_boxes(gt) -> List[BBox]:
    if isinstance(gt, np.ndarray):
        return [b for _, b in component_bboxes(gt)]
    return list(gt)


def _pred_boxes(preds) -> List[BBox]:
    return [p if isinstance(p, BBox) else p.bbox for p in preds]


def iou_matrix(pred_boxes: Sequence[BBox], gt_boxes: Sequence[BBox]) -> np.ndarray:
    out = np.zeros((len(pred_boxes), len(gt_boxes)))
    for i, p in enumerate(pred_boxes):
        for j, g in enumerate(gt_boxes):
            out[i, j] = box_iou(p, g)
    return out


def detection_rate(preds, gt, alpha: float) -> DetectionReport:
    """Fraction of ground-truth nuclei matched one-to-one by a box with IoU >= ``alpha``.

    ``preds`` is any iterable of boxes or objects with a ``bbox``; ``gt`` is
    a label map or a list of boxes. Matching is greedy by descending IoU.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    gboxes = _gt_boxes(gt)
    if not gboxes:
        raise ValueError("no nuclei in ground truth")
    ious = iou_matrix(_pred_boxes(preds), gboxes)
    pi, gi = np.nonzero(ious >= alpha)
    order = sorted(zip(-ious[pi, gi], pi, gi))
    used_p, used_g = set(), set()
    for _, p, g in order:
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
    return DetectionReport(float(alpha), len(used_g), len(gboxes))


def detection_curve(preds, gt, alphas: Sequence[float] = DETECTION_ALPHAS) -> MetricCurve:
    preds = list(preds)
    rates = [detection_rate(preds, gt, a).rate for a in alphas]
    return MetricCurve(np.asarray(alphas, dtype=np.float64), np.asarray(rates))


def _gt_masks(gt) -> List[np.ndarray]:
    return [gt == i for i, _ in component_bboxes(gt)]


def average_precision(preds: Sequence[ScoredPrediction], gt, alpha: float,
                      iou_type: str = "bbox") -> float:
    """101-point interpolated average precision at IoU threshold ``alpha``.

    Predictions are ranked by descending score (stable), and each one claims
    the unclaimed ground truth it overlaps best, if that IoU is >= ``alpha``.
    ``gt`` is a label map (required for ``iou_type="segm"``) or a list of boxes.
    """
    gboxes = _gt_boxes(gt)
    if not gboxes:
        raise ValueError("no nuclei in ground truth")
    if not preds:
        return 0.0
    ranked = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    if iou_type == "bbox":
        ious = iou_matrix([preds[i].bbox for i in ranked], gboxes)
    elif iou_type == "segm":
        gmasks = _gt_masks(np.asarray(gt))
        ious = np.array([[iou(preds[i].mask, g) for g in gmasks] for i in ranked])
    else:
        raise ValueError(f"unknown iou_type {iou_type!r}")

    claimed = np.zeros(len(gboxes), dtype=bool)
    hits = np.zeros(len(ranked), dtype=bool)
    for row in range(len(ranked)):
        cand = np.where(claimed, -1.0, ious[row])
        best = int(np.argmax(cand))
        if cand[best] >= alpha:
            claimed[best] = True
            hits[row] = True
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(ranked) + 1)
    recall = tp / len(gboxes)
    # precision envelope: best precision at any recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, AP_RECALL_GRID, side="left")
    interp = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(interp.mean())


def map_suite(preds: Sequence[ScoredPrediction], gt, iou_type: str = "bbox") -> Dict[str, float]:
    """AP at 0.50 and 0.75, and AP averaged over 0.50:0.05:0.95, for one image."""
    aps = {a: average_precision(preds, gt, a, iou_type) for a in MAP_ALPHAS}
    return {"mAP50": aps[0.5], "mAP75": aps[0.75], "mAP": float(np.mean(list(aps.values())))}


def mean_map_suite(pairs, iou_type: str = "bbox") -> Dict[str, float]:
    """Average :func:`map_suite` over ``(preds, gt)`` pairs, one per image."""
    per_image = [map_suite(p, g, iou_type) for p, g in pairs]
    if not per_image:
        raise ValueError("no images to evaluate")
    return {k: float(np.mean([m[k] for m in per_image])) for k in per_image[0]}
