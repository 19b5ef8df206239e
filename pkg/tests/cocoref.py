"""Reference transcription of the COCO evaluation protocol.

Deliberately plain Python: explicit loops, lists, and bisect, structured
as per-image matching followed by global accumulation with the ignored
entries carried through the cumulative sums. Serves as the independent
oracle for ``lesiondet.metrics.evaluate``.

Shared conventions with the implementation under test (both documented
there): equal-IoU matches go to the lowest ground-truth index, and the
area buckets are half-open [lo, hi).
"""

from __future__ import annotations

import math
from bisect import bisect_left

THRESHOLDS = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95]
RECALL_THRESHOLDS = [i / 100.0 for i in range(101)]
AREAS = {
    "all": (0.0, math.inf),
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, math.inf),
}


def _iou(a, b):
    ax2, ay2 = a[0] + a[2], a[1] + a[3]
    bx2, by2 = b[0] + b[2], b[1] + b[3]
    iw = min(ax2, bx2) - max(a[0], b[0])
    ih = min(ay2, by2) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return 0.0 if union <= 0 else inter / union


def _evaluate_image(det_boxes, gt_boxes, gt_ignore, threshold):
    """Greedy score-order matching for one image, category, area and threshold.

    Detections must already be sorted by descending score. Returns parallel
    lists (matched, det_ignore): matched[i] is True when detection i took a
    non-ignored ground truth; det_ignore[i] when it took an ignored one.
    """
    n_gt = len(gt_boxes)
    # ground truths scanned non-ignored first, original order inside each part
    order = [g for g in range(n_gt) if not gt_ignore[g]] + [
        g for g in range(n_gt) if gt_ignore[g]
    ]
    taken = [False] * n_gt
    matched = [False] * len(det_boxes)
    det_ignore = [False] * len(det_boxes)
    for d, dbox in enumerate(det_boxes):
        best = -1
        best_iou = threshold
        for g in order:
            if taken[g]:
                continue
            if best >= 0 and not gt_ignore[best] and gt_ignore[g]:
                break
            v = _iou(dbox, gt_boxes[g])
            if v < best_iou:
                continue
            if best == -1 or v > best_iou:
                best = g
                best_iou = v
        if best >= 0:
            taken[best] = True
            matched[d] = not gt_ignore[best]
            det_ignore[d] = gt_ignore[best]
    return matched, det_ignore


def _average_precision(scores, matched, det_ignore, n_gt):
    """Accumulate one (category, area, threshold) cell into an AP value."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    tp_cum, fp_cum = [], []
    tp = fp = 0
    recalls, precisions = [], []
    for i in order:
        if matched[i] and not det_ignore[i]:
            tp += 1
        elif not matched[i] and not det_ignore[i]:
            fp += 1
        tp_cum.append(tp)
        fp_cum.append(fp)
    for t, f in zip(tp_cum, fp_cum):
        recalls.append(t / n_gt)
        precisions.append(t / (t + f) if (t + f) > 0 else 0.0)
    for i in range(len(precisions) - 1, 0, -1):
        if precisions[i] > precisions[i - 1]:
            precisions[i - 1] = precisions[i]
    total = 0.0
    for r in RECALL_THRESHOLDS:
        idx = bisect_left(recalls, r)
        if idx < len(precisions):
            total += precisions[idx]
    return total / len(RECALL_THRESHOLDS)


def ref_evaluate(dets, gts, max_dets=None):
    """Full protocol over all categories, thresholds, and area buckets.

    ``dets`` and ``gts`` are sequences of objects with image_id, category,
    box (x/y/w/h attributes) and, for detections, score. Returns a dict
    with ap, ap50, ap75, ap_s, ap_m, ap_l (None where no ground truth).
    """
    categories = sorted({g.category for g in gts}, key=repr)
    image_ids = sorted({g.image_id for g in gts} | {d.image_id for d in dets}, key=repr)

    cell_ap = {}
    for cat in categories:
        per_image = []
        for img in image_ids:
            img_dets = [d for d in dets if d.image_id == img and d.category == cat]
            img_dets = sorted(img_dets, key=lambda d: -d.score)
            if max_dets is not None:
                img_dets = img_dets[:max_dets]
            img_gts = [g for g in gts if g.image_id == img and g.category == cat]
            per_image.append(
                {
                    "det_boxes": [(d.box.x, d.box.y, d.box.w, d.box.h) for d in img_dets],
                    "scores": [d.score for d in img_dets],
                    "gt_boxes": [(g.box.x, g.box.y, g.box.w, g.box.h) for g in img_gts],
                }
            )
        for area_name, (lo, hi) in AREAS.items():
            n_gt = 0
            ignores = []
            for img in per_image:
                flags = [not (lo <= b[2] * b[3] < hi) for b in img["gt_boxes"]]
                ignores.append(flags)
                n_gt += sum(1 for f in flags if not f)
            for t in THRESHOLDS:
                if n_gt == 0:
                    cell_ap[(cat, area_name, t)] = None
                    continue
                scores, matched, det_ignore = [], [], []
                for img, gt_ignore in zip(per_image, ignores):
                    m, di = _evaluate_image(img["det_boxes"], img["gt_boxes"], gt_ignore, t)
                    for k, b in enumerate(img["det_boxes"]):
                        if not m[k] and not di[k] and not (lo <= b[2] * b[3] < hi):
                            di[k] = True
                    scores.extend(img["scores"])
                    matched.extend(m)
                    det_ignore.extend(di)
                cell_ap[(cat, area_name, t)] = _average_precision(
                    scores, matched, det_ignore, n_gt
                )

    def bucket_mean(area_name, thresholds):
        values = []
        for t in thresholds:
            per_cat = [
                cell_ap[(c, area_name, t)]
                for c in categories
                if cell_ap.get((c, area_name, t)) is not None
            ]
            if per_cat:
                values.append(sum(per_cat) / len(per_cat))
        return sum(values) / len(values) if values else None

    return {
        "ap": bucket_mean("all", THRESHOLDS),
        "ap50": bucket_mean("all", [0.50]),
        "ap75": bucket_mean("all", [0.75]),
        "ap_s": bucket_mean("small", THRESHOLDS),
        "ap_m": bucket_mean("medium", THRESHOLDS),
        "ap_l": bucket_mean("large", THRESHOLDS),
    }
