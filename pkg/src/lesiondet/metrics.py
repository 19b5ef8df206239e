"""COCO-style average-precision evaluation for box detections.

The protocol: detections are matched greedily in descending score order to
the highest-IoU unmatched ground truth of the same image and category;
precision is interpolated over a fixed 101-point recall grid after taking
the running-maximum envelope; the headline AP averages ten IoU thresholds
from 0.50 to 0.95, and size-stratified variants ignore ground truths (and
the detections they absorb) outside each area bucket.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Optional, Sequence

import numpy as np

from .errors import DomainError
from .geometry import BBox, _pairwise_iou, as_box_array

__all__ = [
    "Detection",
    "GroundTruth",
    "PRCurve",
    "EvalReport",
    "IOU_THRESHOLDS",
    "RECALL_GRID",
    "AREA_BUCKETS",
    "match_detections",
    "average_precision",
    "evaluate",
]

IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
# correctly-rounded hundredths; recalls landing exactly on a grid point must
# see the same float on every code path
RECALL_GRID: np.ndarray = np.array([i / 100.0 for i in range(101)])
RECALL_GRID.setflags(write=False)

# area buckets [lo, hi) in pixels squared; 32**2 and 96**2 edges
AREA_BUCKETS: dict[str, tuple[float, float]] = {
    "all": (0.0, math.inf),
    "small": (0.0, 1024.0),
    "medium": (1024.0, 9216.0),
    "large": (9216.0, math.inf),
}


@dataclass(frozen=True)
class Detection:
    """One scored box prediction."""

    image_id: Hashable
    box: BBox
    score: float
    category: Hashable = 1

    def __post_init__(self) -> None:
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise DomainError(f"detection score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class GroundTruth:
    """One annotated box."""

    image_id: Hashable
    box: BBox
    category: Hashable = 1


@dataclass(frozen=True)
class PRCurve:
    """Interpolated precision over the fixed recall grid, one curve per IoU threshold."""

    recall: np.ndarray
    precision: np.ndarray

    def to_json_dict(self) -> dict:
        return {"recall": self.recall.tolist(), "precision": self.precision.tolist()}


@dataclass(frozen=True)
class EvalReport:
    """The reported metric family; entries are None when no ground truth defines them.

    ``ap`` averages the ten IoU thresholds; ``ap50``/``ap75`` are the fixed
    0.50/0.75 entries; the size-stratified values restrict ground truths to
    the small/medium/large area buckets. ``pr_curves`` maps each IoU
    threshold to its all-areas curve (macro-averaged over categories).
    """

    ap: Optional[float]
    ap50: Optional[float]
    ap75: Optional[float]
    ap_small: Optional[float]
    ap_medium: Optional[float]
    ap_large: Optional[float]
    per_threshold_ap: dict[float, Optional[float]] = field(default_factory=dict)
    pr_curves: dict[float, PRCurve] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ap_s": self.ap_small,
            "ap_m": self.ap_medium,
            "ap_l": self.ap_large,
            "per_threshold_ap": {f"{t:.2f}": v for t, v in self.per_threshold_ap.items()},
            "pr_curves": {f"{t:.2f}": c.to_json_dict() for t, c in self.pr_curves.items()},
        }


def _sort_key(value: Hashable) -> str:
    return repr(value)


def _greedy_match(
    ious: np.ndarray, gt_ignore: np.ndarray, iou_thresh: float
) -> tuple[np.ndarray, np.ndarray]:
    """Match score-ordered detections against one image's ground truths.

    Returns (tp, det_ignore) flag arrays aligned with the detection rows of
    ``ious``. Each detection takes the highest-IoU available ground truth
    with IoU >= iou_thresh, preferring non-ignored ones; equal IoUs go to
    the lowest ground-truth index. A detection that can only reach an
    ignored ground truth absorbs it and is itself ignored.
    """
    n_det, n_gt = ious.shape
    tp = np.zeros(n_det, dtype=bool)
    det_ignore = np.zeros(n_det, dtype=bool)
    taken = np.zeros(n_gt, dtype=bool)
    for di in range(n_det):
        row = ious[di]
        best = -1
        for phase_mask in (~taken & ~gt_ignore, ~taken & gt_ignore):
            if not phase_mask.any():
                continue
            vals = np.where(phase_mask, row, -1.0)
            cand = int(vals.argmax())
            if vals[cand] >= iou_thresh:
                best = cand
                break
        if best >= 0:
            taken[best] = True
            det_ignore[di] = gt_ignore[best]
            tp[di] = not gt_ignore[best]
    return tp, det_ignore


def match_detections(
    dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_thresh: float
) -> np.ndarray:
    """TP/FP flags for each detection, aligned with the input order.

    Matching runs in descending score order (score ties keep input order)
    within each (image, category) group; every ground truth is matched at
    most once.
    """
    if not (math.isfinite(iou_thresh) and 0.0 < iou_thresh <= 1.0):
        raise DomainError(f"iou_thresh must lie in (0, 1], got {iou_thresh}")
    flags = np.zeros(len(dets), dtype=bool)
    groups: dict[tuple, list[int]] = {}
    for i, d in enumerate(dets):
        groups.setdefault((d.image_id, d.category), []).append(i)
    gt_groups: dict[tuple, list[GroundTruth]] = {}
    for g in gts:
        gt_groups.setdefault((g.image_id, g.category), []).append(g)
    for key, det_idx in groups.items():
        group_gts = gt_groups.get(key, [])
        if not group_gts:
            continue
        scores = np.array([dets[i].score for i in det_idx])
        order = np.argsort(-scores, kind="stable")
        sorted_idx = [det_idx[k] for k in order]
        ious = _pairwise_iou(
            as_box_array([dets[i].box for i in sorted_idx]),
            as_box_array([g.box for g in group_gts]),
        )
        tp, _ = _greedy_match(ious, np.zeros(len(group_gts), dtype=bool), iou_thresh)
        flags[sorted_idx] = tp
    return flags


def _precision_samples(flags: np.ndarray, n_gt: int) -> np.ndarray:
    """Envelope precision sampled on the 101-point recall grid."""
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        return np.zeros_like(RECALL_GRID)
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    in_range = idx < envelope.size
    return np.where(in_range, envelope[np.minimum(idx, envelope.size - 1)], 0.0)


def average_precision(flags: Sequence[bool], n_gt: int) -> Optional[float]:
    """Mean interpolated precision over the 101-point recall grid.

    ``flags`` must already be in descending score order. Returns None when
    ``n_gt`` is zero (the metric is undefined with nothing to recall).
    """
    if n_gt < 0:
        raise DomainError(f"n_gt must be >= 0, got {n_gt}")
    if n_gt == 0:
        return None
    return float(_precision_samples(np.asarray(flags, dtype=bool), n_gt).mean())


class _CategoryEval:
    """Per-category matching state shared across thresholds and buckets."""

    def __init__(
        self,
        image_ids: list,
        dets_by_image: dict,
        gts_by_image: dict,
        max_dets: Optional[int],
    ) -> None:
        self.images = []
        for img in image_ids:
            dets = dets_by_image.get(img, [])
            gts = gts_by_image.get(img, [])
            if not dets and not gts:
                continue
            scores = np.array([d.score for d in dets], dtype=np.float64)
            order = np.argsort(-scores, kind="stable")
            if max_dets is not None:
                order = order[:max_dets]
            det_boxes = as_box_array([dets[k].box for k in order])
            gt_boxes = as_box_array([g.box for g in gts])
            self.images.append(
                {
                    "scores": scores[order],
                    "det_areas": det_boxes[:, 2] * det_boxes[:, 3],
                    "gt_areas": gt_boxes[:, 2] * gt_boxes[:, 3],
                    "ious": _pairwise_iou(det_boxes, gt_boxes),
                }
            )

    def gt_count(self, lo: float, hi: float) -> int:
        return int(
            sum(((img["gt_areas"] >= lo) & (img["gt_areas"] < hi)).sum() for img in self.images)
        )

    def precision_samples(self, iou_thresh: float, lo: float, hi: float) -> Optional[np.ndarray]:
        """101-point precision array at one threshold and area bucket, or None."""
        n_gt = self.gt_count(lo, hi)
        if n_gt == 0:
            return None
        scores, tps, ignores = [], [], []
        for img in self.images:
            gt_ignore = ~((img["gt_areas"] >= lo) & (img["gt_areas"] < hi))
            tp, det_ignore = _greedy_match(img["ious"], gt_ignore, iou_thresh)
            # unmatched detections outside the bucket are ignored, not FPs
            out_of_bucket = ~((img["det_areas"] >= lo) & (img["det_areas"] < hi))
            det_ignore |= ~tp & ~det_ignore & out_of_bucket
            scores.append(img["scores"])
            tps.append(tp)
            ignores.append(det_ignore)
        all_scores = np.concatenate(scores) if scores else np.zeros(0)
        all_tp = np.concatenate(tps) if tps else np.zeros(0, dtype=bool)
        all_ignore = np.concatenate(ignores) if ignores else np.zeros(0, dtype=bool)
        order = np.argsort(-all_scores, kind="stable")
        keep = ~all_ignore[order]
        return _precision_samples(all_tp[order][keep], n_gt)


def evaluate(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    max_dets: Optional[int] = None,
) -> EvalReport:
    """Evaluate detections against ground truths over all thresholds and buckets.

    Categories are macro-averaged; categories without ground truth are
    skipped, and detections whose category never appears in the ground
    truth are dropped. ``max_dets`` caps detections per image and category
    (highest scores kept); the default keeps everything.
    """
    if max_dets is not None and max_dets < 0:
        raise DomainError(f"max_dets must be >= 0, got {max_dets}")
    categories = sorted({g.category for g in gts}, key=_sort_key)
    image_ids = sorted(
        {g.image_id for g in gts} | {d.image_id for d in dets}, key=_sort_key
    )
    evals = []
    for cat in categories:
        dets_by_image: dict = {}
        gts_by_image: dict = {}
        for d in dets:
            if d.category == cat:
                dets_by_image.setdefault(d.image_id, []).append(d)
        for g in gts:
            if g.category == cat:
                gts_by_image.setdefault(g.image_id, []).append(g)
        evals.append(_CategoryEval(image_ids, dets_by_image, gts_by_image, max_dets))

    def bucket_threshold_samples(bucket: str) -> dict[float, Optional[np.ndarray]]:
        lo, hi = AREA_BUCKETS[bucket]
        out: dict[float, Optional[np.ndarray]] = {}
        for t in IOU_THRESHOLDS:
            arrays = [
                s for ev in evals if (s := ev.precision_samples(t, lo, hi)) is not None
            ]
            out[t] = np.mean(arrays, axis=0) if arrays else None
        return out

    def mean_ap(samples: dict[float, Optional[np.ndarray]]) -> Optional[float]:
        values = [float(s.mean()) for s in samples.values() if s is not None]
        return float(np.mean(values)) if values else None

    all_samples = bucket_threshold_samples("all")
    per_threshold = {
        t: (float(s.mean()) if s is not None else None) for t, s in all_samples.items()
    }
    report = EvalReport(
        ap=mean_ap(all_samples),
        ap50=per_threshold[0.50],
        ap75=per_threshold[0.75],
        ap_small=mean_ap(bucket_threshold_samples("small")),
        ap_medium=mean_ap(bucket_threshold_samples("medium")),
        ap_large=mean_ap(bucket_threshold_samples("large")),
        per_threshold_ap=per_threshold,
        pr_curves={
            t: PRCurve(recall=RECALL_GRID.copy(), precision=s)
            for t, s in all_samples.items()
            if s is not None
        },
    )
    return report
