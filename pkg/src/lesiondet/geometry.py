"""Axis-aligned bounding-box arithmetic.

Boxes follow the COCO convention: ``(x, y)`` is the top-left corner and
``(w, h)`` the width and height, all real-valued pixel units. The batch
entry point :func:`iou_matrix` reproduces the scalar :func:`iou` exactly,
entry by entry, so either path can serve as the oracle for the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DomainError

__all__ = ["BBox", "BoxArrayLike", "area", "iou", "as_box_array", "iou_matrix"]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with non-negative width and height."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "w", "h"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise DomainError(f"BBox.{name} must be finite, got {value!r}")
        if self.w < 0 or self.h < 0:
            raise DomainError(
                f"BBox width and height must be >= 0, got w={self.w}, h={self.h}"
            )

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


BoxArrayLike = Union[np.ndarray, Sequence[BBox], Sequence[Sequence[float]]]


def area(b: BBox) -> float:
    """Box area in pixels squared."""
    return b.w * b.h


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union in [0, 1]; 0.0 when the union is empty.

    Box extents are derived from the rounded corners on every term, which
    keeps intersection and union mutually consistent: the result never
    leaves [0, 1] and identical boxes score exactly 1.
    """
    ax2, ay2 = a.x + a.w, a.y + a.h
    bx2, by2 = b.x + b.w, b.y + b.h
    iw = min(ax2, bx2) - max(a.x, b.x)
    ih = min(ay2, by2) - max(a.y, b.y)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax2 - a.x) * (ay2 - a.y) + (bx2 - b.x) * (by2 - b.y) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def as_box_array(boxes: BoxArrayLike) -> np.ndarray:
    """Coerce boxes to a validated (n, 4) float64 array of (x, y, w, h) rows.

    Accepts an ndarray, a sequence of :class:`BBox`, or a sequence of
    4-element sequences. Raises :class:`DomainError` on non-finite values
    or negative widths/heights.
    """
    try:
        if isinstance(boxes, np.ndarray):
            arr = np.asarray(boxes, dtype=np.float64)
        elif len(boxes) == 0:
            arr = np.zeros((0, 4), dtype=np.float64)
        elif isinstance(boxes[0], BBox):
            arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
        else:
            arr = np.asarray(boxes, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DomainError(f"boxes are not coercible to an (n, 4) array: {exc}") from exc
    if arr.size == 0:
        return arr.reshape(0, 4)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise DomainError(f"expected (n, 4) box array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("box coordinates must be finite")
    if np.any(arr[:, 2:] < 0):
        raise DomainError("box widths and heights must be >= 0")
    return arr


def _pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU of every row of ``a`` against every row of ``b``.

    Both arguments are pre-validated (n, 4) float64 arrays. The arithmetic
    mirrors :func:`iou` operation for operation so results agree bitwise.
    """
    n, m = a.shape[0], b.shape[0]
    if n == 0 or m == 0:
        return np.zeros((n, m), dtype=np.float64)
    ax, ay, aw, ah = a[:, 0], a[:, 1], a[:, 2], a[:, 3]
    bx, by, bw, bh = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    ax2, ay2 = ax + aw, ay + ah
    bx2, by2 = bx + bw, by + bh

    iw = np.minimum(ax2[:, None], bx2[None, :])
    iw -= np.maximum(ax[:, None], bx[None, :])
    np.clip(iw, 0.0, None, out=iw)
    ih = np.minimum(ay2[:, None], by2[None, :])
    ih -= np.maximum(ay[:, None], by[None, :])
    np.clip(ih, 0.0, None, out=ih)

    inter = iw
    inter *= ih
    union = ((ax2 - ax) * (ay2 - ay))[:, None] + ((bx2 - bx) * (by2 - by))[None, :]
    union -= inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = inter / union
    # union == 0 means two degenerate boxes: defined as IoU 0, not an error
    np.nan_to_num(out, copy=False, nan=0.0, posinf=0.0, neginf=0.0)
    return out


def iou_matrix(boxes_a: BoxArrayLike, boxes_b: BoxArrayLike) -> np.ndarray:
    """Pairwise IoU matrix with entry (i, j) equal to ``iou(boxes_a[i], boxes_b[j])``."""
    return _pairwise_iou(as_box_array(boxes_a), as_box_array(boxes_b))
