"""Label assignment with size-adaptive thresholds and a blended overlap score.

Small objects rarely clear a fixed IoU threshold, so the positive-sample
threshold grows with the object's geometric-mean side length and is floored
for tiny boxes. The per-anchor score blends the anchor's own IoU with the
IoU of its current regression box, penalizing disagreement between the two;
a training-progress schedule shifts weight from the anchor IoU toward the
regression IoU as training stabilizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatchError, DomainError
from .geometry import BoxArrayLike, _pairwise_iou, as_box_array

__all__ = [
    "AssignmentConfig",
    "AssignmentResult",
    "adaptive_threshold",
    "alpha_schedule",
    "dynamic_iou",
    "assign_labels",
]

_BLOCK_ELEMENTS = 400_000  # pairwise entries per block; keeps work cache-resident


@dataclass(frozen=True)
class AssignmentConfig:
    """Assignment hyperparameters.

    ``lambda_exp`` controls how fast the positive threshold grows with
    object size, ``alpha0`` is the late-training blend weight, ``gamma_exp``
    shapes the disagreement penalty, and ``area_scale`` is the reference
    side length (pixels) at which the threshold reaches base + slope.
    ``floor``, ``base`` and ``slope`` are the threshold-curve constants.
    """

    lambda_exp: float = 0.55
    alpha0: float = 0.6
    gamma_exp: float = 1.5
    area_scale: float = 32.0
    floor: float = 0.25
    base: float = 0.2
    slope: float = 0.15

    def __post_init__(self) -> None:
        if not (np.isfinite(self.lambda_exp) and self.lambda_exp > 0):
            raise DomainError(f"lambda_exp must be > 0, got {self.lambda_exp}")
        if not (np.isfinite(self.alpha0) and 0 < self.alpha0 <= 1):
            raise DomainError(f"alpha0 must lie in (0, 1], got {self.alpha0}")
        if not (np.isfinite(self.gamma_exp) and self.gamma_exp > 0):
            raise DomainError(f"gamma_exp must be > 0, got {self.gamma_exp}")
        if not (np.isfinite(self.area_scale) and self.area_scale > 0):
            raise DomainError(f"area_scale must be > 0, got {self.area_scale}")
        for name in ("floor", "base", "slope"):
            if not np.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")


@dataclass(frozen=True)
class AssignmentResult:
    """Per-anchor assignment outcome.

    ``labels`` is True where the anchor is a positive sample. When no
    ground truth exists, ``matched_gt`` is -1 and ``score``/``threshold``
    are NaN for every anchor; otherwise ``matched_gt[i]`` is the index of
    the ground truth maximizing the blended score for anchor i (ties go to
    the lowest index), ``score[i]`` that maximum, and ``threshold[i]`` the
    adaptive threshold of the matched ground truth.
    """

    labels: np.ndarray
    matched_gt: np.ndarray
    score: np.ndarray
    threshold: np.ndarray
    alpha: float

    @property
    def n_positive(self) -> int:
        return int(self.labels.sum())

    def to_json_dict(self) -> dict:
        has_gt = bool(np.all(self.matched_gt >= 0))
        return {
            "alpha": self.alpha,
            "n_anchors": int(self.labels.size),
            "n_positive": self.n_positive,
            "labels": ["positive" if p else "negative" for p in self.labels],
            "matched_gt": [int(j) if j >= 0 else None for j in self.matched_gt],
            "diou": [float(d) if has_gt else None for d in self.score],
            "threshold_used": [float(t) if has_gt else None for t in self.threshold],
        }


def adaptive_threshold(w: float, h: float, cfg: AssignmentConfig = AssignmentConfig()) -> float:
    """Positive-sample threshold for an object of the given width and height.

    Grows as base + slope * (sqrt(w*h) / area_scale) ** lambda_exp and is
    clipped from below at the floor, so small objects keep a reachable
    threshold while large ones demand tighter overlap.
    """
    if not (math.isfinite(w) and math.isfinite(h)) or w < 0 or h < 0:
        raise DomainError(f"object dimensions must be finite and >= 0, got w={w}, h={h}")
    ratio = math.sqrt(w * h) / cfg.area_scale
    return max(cfg.floor, cfg.base + cfg.slope * ratio**cfg.lambda_exp)


def alpha_schedule(progress: float, alpha0: float) -> float:
    """Blend weight as a function of training progress in [0, 1].

    Stays at 1 for the first tenth of training, decays linearly to
    ``alpha0`` until the halfway point, then holds there.
    """
    if not (np.isfinite(progress) and 0 <= progress <= 1):
        raise DomainError(f"progress must lie in [0, 1], got {progress}")
    if not (np.isfinite(alpha0) and 0 < alpha0 <= 1):
        raise DomainError(f"alpha0 must lie in (0, 1], got {alpha0}")
    if progress < 0.1:
        return 1.0
    if progress < 0.5:
        return (alpha0 - 1.0) / 0.4 * (progress - 0.1) + 1.0
    return alpha0


def dynamic_iou(a_iou: float, r_iou: float, alpha: float, gamma_exp: float) -> float:
    """Blend of anchor IoU and regression IoU with a disagreement penalty.

    Returns alpha * a_iou + (1 - alpha) * r_iou
    - (1 - alpha) * |a_iou - r_iou| ** gamma_exp, which may be negative.
    """
    for name, v, lo, hi in (
        ("a_iou", a_iou, 0.0, 1.0),
        ("r_iou", r_iou, 0.0, 1.0),
        ("alpha", alpha, 0.0, 1.0),
    ):
        if not (np.isfinite(v) and lo <= v <= hi):
            raise DomainError(f"{name} must lie in [{lo}, {hi}], got {v}")
    if not (np.isfinite(gamma_exp) and gamma_exp > 0):
        raise DomainError(f"gamma_exp must be > 0, got {gamma_exp}")
    return alpha * a_iou + (1.0 - alpha) * r_iou - (1.0 - alpha) * abs(a_iou - r_iou) ** gamma_exp


def assign_labels(
    anchors: BoxArrayLike,
    regressed: BoxArrayLike,
    gts: BoxArrayLike,
    progress: float,
    cfg: Optional[AssignmentConfig] = None,
) -> AssignmentResult:
    """Assign a positive/negative label to every anchor.

    ``regressed[i]`` must be anchor i's current regression box. Each anchor
    is matched to the ground truth maximizing the blended overlap score and
    labeled positive when that score strictly exceeds the matched ground
    truth's adaptive threshold. With no ground truths every anchor is
    negative. The pairwise scores are computed in anchor blocks, so memory
    stays bounded for large anchor sets; results are independent of the
    blocking.
    """
    cfg = cfg if cfg is not None else AssignmentConfig()
    anchor_arr = as_box_array(anchors)
    regressed_arr = as_box_array(regressed)
    gt_arr = as_box_array(gts)
    n = anchor_arr.shape[0]
    if regressed_arr.shape[0] != n:
        raise DimensionMismatchError(
            f"got {n} anchors but {regressed_arr.shape[0]} regression boxes"
        )
    alpha = alpha_schedule(progress, cfg.alpha0)

    m = gt_arr.shape[0]
    if m == 0:
        return AssignmentResult(
            labels=np.zeros(n, dtype=bool),
            matched_gt=np.full(n, -1, dtype=np.int64),
            score=np.full(n, np.nan),
            threshold=np.full(n, np.nan),
            alpha=alpha,
        )

    thresholds = np.array(
        [adaptive_threshold(w, h, cfg) for w, h in gt_arr[:, 2:]], dtype=np.float64
    )

    matched = np.empty(n, dtype=np.int64)
    score = np.empty(n, dtype=np.float64)
    beta = 1.0 - alpha
    chunk = max(1, _BLOCK_ELEMENTS // m)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        a_iou = _pairwise_iou(anchor_arr[start:stop], gt_arr)
        r_iou = _pairwise_iou(regressed_arr[start:stop], gt_arr)
        penalty = np.abs(a_iou - r_iou)
        penalty **= cfg.gamma_exp
        blended = alpha * a_iou
        blended += beta * r_iou
        blended -= beta * penalty
        idx = blended.argmax(axis=1)
        matched[start:stop] = idx
        score[start:stop] = blended[np.arange(stop - start), idx]

    labels = score > thresholds[matched]
    return AssignmentResult(
        labels=labels,
        matched_gt=matched,
        score=score,
        threshold=thresholds[matched],
        alpha=alpha,
    )
