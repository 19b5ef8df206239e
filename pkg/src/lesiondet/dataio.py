"""Annotation ingestion, dataset statistics, patient-level splitting, and
synthetic scenario generation.

Annotations use the COCO JSON layout (images / annotations / categories,
bbox as [x, y, w, h] pixels). All randomness flows through PCG64 so that a
seed pins byte-identical results across platforms and runs.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Hashable, Optional, Sequence

import numpy as np

from .errors import DomainError, SchemaError
from .geometry import BBox
from .metrics import Detection, GroundTruth

__all__ = [
    "ImageInfo",
    "Category",
    "DatasetIndex",
    "StatsReport",
    "Scenario",
    "DEFAULT_AR_BINS",
    "SMALL_AR_THRESHOLD",
    "load_coco",
    "save_coco",
    "load_detections",
    "area_ratio",
    "compute_stats",
    "patient_split",
    "synth_scenario",
]

DEFAULT_AR_BINS: tuple[float, ...] = (0.0, 0.001, 0.0025, 0.005, 0.01, 0.02, 0.05, 1.0)
SMALL_AR_THRESHOLD = 0.005


@dataclass(frozen=True)
class ImageInfo:
    id: Hashable
    width: float
    height: float
    patient_id: Optional[Hashable] = None


@dataclass(frozen=True)
class Category:
    id: Hashable
    name: str


@dataclass(frozen=True)
class DatasetIndex:
    """Parsed annotation set; immutable after loading."""

    images: tuple[ImageInfo, ...]
    annotations: tuple[GroundTruth, ...]
    categories: tuple[Category, ...]

    @property
    def n_images(self) -> int:
        return len(self.images)

    @property
    def n_instances(self) -> int:
        return len(self.annotations)

    def image_by_id(self) -> dict:
        return {im.id: im for im in self.images}


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise SchemaError(f"{where} is missing required field {key!r}")
    return obj[key]


def _parse_bbox(raw, where: str) -> BBox:
    try:
        x, y, w, h = (float(v) for v in raw)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where} bbox must be [x, y, w, h] numbers, got {raw!r}") from exc
    try:
        return BBox(x, y, w, h)
    except DomainError as exc:
        raise SchemaError(f"{where}: {exc}") from exc


def load_coco(path, patient_field: str = "patient_id") -> DatasetIndex:
    """Load a COCO-style annotation file.

    Unknown fields are ignored. An annotation referencing a missing image
    is an error; a box extending past its image's bounds only warns, since
    exported datasets routinely contain slight overflows.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError(f"{path}: top level must be a JSON object")

    images = []
    for rec in _require(raw, "images", str(path)):
        images.append(
            ImageInfo(
                id=_require(rec, "id", "image record"),
                width=float(_require(rec, "width", "image record")),
                height=float(_require(rec, "height", "image record")),
                patient_id=rec.get(patient_field),
            )
        )
    by_id = {im.id: im for im in images}
    if len(by_id) != len(images):
        raise SchemaError(f"{path}: duplicate image ids")

    annotations = []
    for i, rec in enumerate(raw.get("annotations", [])):
        where = f"annotation #{i}"
        image_id = _require(rec, "image_id", where)
        if image_id not in by_id:
            raise SchemaError(f"{where} references missing image id {image_id!r}")
        box = _parse_bbox(_require(rec, "bbox", where), where)
        image = by_id[image_id]
        if box.x < 0 or box.y < 0 or box.x2 > image.width or box.y2 > image.height:
            warnings.warn(
                f"{where} box {box.as_tuple()} extends outside image {image_id!r} "
                f"({image.width}x{image.height})",
                stacklevel=2,
            )
        annotations.append(
            GroundTruth(image_id=image_id, box=box, category=_require(rec, "category_id", where))
        )

    if "categories" in raw:
        categories = [
            Category(id=_require(rec, "id", "category record"), name=str(rec.get("name", "")))
            for rec in raw["categories"]
        ]
    else:
        seen = sorted({a.category for a in annotations}, key=repr)
        categories = [Category(id=c, name=str(c)) for c in seen]

    return DatasetIndex(tuple(images), tuple(annotations), tuple(categories))


def save_coco(index: DatasetIndex, path, patient_field: str = "patient_id") -> None:
    """Write an index back to COCO JSON; inverse of :func:`load_coco`."""
    images = []
    for im in index.images:
        rec = {"id": im.id, "width": im.width, "height": im.height}
        if im.patient_id is not None:
            rec[patient_field] = im.patient_id
        images.append(rec)
    annotations = [
        {
            "id": i + 1,
            "image_id": a.image_id,
            "category_id": a.category,
            "bbox": list(a.box.as_tuple()),
            "area": a.box.w * a.box.h,
        }
        for i, a in enumerate(index.annotations)
    ]
    categories = [{"id": c.id, "name": c.name} for c in index.categories]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"images": images, "annotations": annotations, "categories": categories},
            fh,
            sort_keys=True,
            separators=(",", ":"),
        )


def load_detections(path) -> list[Detection]:
    """Load a COCO results array: [{image_id, category_id, bbox, score}, ...]."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise SchemaError(f"{path}: detections file must be a JSON array")
    dets = []
    for i, rec in enumerate(raw):
        where = f"detection #{i}"
        box = _parse_bbox(_require(rec, "bbox", where), where)
        score = float(_require(rec, "score", where))
        try:
            dets.append(
                Detection(
                    image_id=_require(rec, "image_id", where),
                    box=box,
                    score=score,
                    category=_require(rec, "category_id", where),
                )
            )
        except DomainError as exc:
            raise SchemaError(f"{where}: {exc}") from exc
    return dets


def area_ratio(ann: GroundTruth, image_w: float, image_h: float) -> float:
    """Fraction of the image covered by the annotation box, clamped to [0, 1]."""
    if not (image_w > 0 and image_h > 0):
        raise DomainError(f"image dimensions must be > 0, got {image_w}x{image_h}")
    ratio = (ann.box.w * ann.box.h) / (image_w * image_h)
    return min(1.0, max(0.0, ratio))


@dataclass(frozen=True)
class StatsReport:
    """Dataset-level counts and the area-ratio distribution."""

    n_images: int
    n_instances: int
    instances_per_image: dict[int, int]
    ar_values: np.ndarray
    ar_bin_edges: np.ndarray
    ar_histogram: np.ndarray
    small_fraction: Optional[float]
    small_threshold: float = SMALL_AR_THRESHOLD

    def to_json_dict(self) -> dict:
        return {
            "n_images": self.n_images,
            "n_instances": self.n_instances,
            "instances_per_image": {str(k): v for k, v in sorted(self.instances_per_image.items())},
            "ar_bin_edges": self.ar_bin_edges.tolist(),
            "ar_histogram": self.ar_histogram.tolist(),
            "small_fraction": self.small_fraction,
            "small_threshold": self.small_threshold,
        }


def compute_stats(
    index: DatasetIndex,
    ar_bins: Sequence[float] = DEFAULT_AR_BINS,
    small_threshold: float = SMALL_AR_THRESHOLD,
) -> StatsReport:
    """Instance counts per image plus the area-ratio histogram.

    ``ar_bins`` are histogram edges (strictly increasing); counts follow
    numpy.histogram semantics, half-open bins with the last edge closed.
    The small fraction counts ratios at or below ``small_threshold``.
    """
    edges = np.asarray(ar_bins, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise DomainError("ar_bins must be a strictly increasing sequence of >= 2 edges")
    by_id = index.image_by_id()
    counts: dict = {}
    ars = []
    for ann in index.annotations:
        image = by_id[ann.image_id]
        ars.append(area_ratio(ann, image.width, image.height))
        counts[ann.image_id] = counts.get(ann.image_id, 0) + 1
    per_image: dict[int, int] = {}
    for im in index.images:
        k = counts.get(im.id, 0)
        per_image[k] = per_image.get(k, 0) + 1
    ar_values = np.array(ars, dtype=np.float64)
    hist, _ = np.histogram(ar_values, bins=edges)
    small = float(np.mean(ar_values <= small_threshold)) if ar_values.size else None
    return StatsReport(
        n_images=index.n_images,
        n_instances=index.n_instances,
        instances_per_image=per_image,
        ar_values=ar_values,
        ar_bin_edges=edges,
        ar_histogram=hist,
        small_fraction=small,
        small_threshold=small_threshold,
    )


def patient_split(
    index: DatasetIndex, train_fraction: float, seed: int
) -> tuple[DatasetIndex, DatasetIndex]:
    """Split images into train/test without splitting any patient.

    Patients are shuffled with a seeded generator and assigned greedily to
    the training side until it holds at least ``train_fraction`` of the
    images; images without a patient id count as singleton patients.
    """
    if not (0.0 < train_fraction < 1.0):
        raise DomainError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    patients: dict = {}
    order = []
    for im in index.images:
        key = ("patient", im.patient_id) if im.patient_id is not None else ("image", im.id)
        if key not in patients:
            patients[key] = []
            order.append(key)
        patients[key].append(im)
    rng = np.random.Generator(np.random.PCG64(seed))
    shuffled = [order[i] for i in rng.permutation(len(order))]

    target = train_fraction * index.n_images
    train_images: list[ImageInfo] = []
    test_images: list[ImageInfo] = []
    for key in shuffled:
        side = train_images if len(train_images) < target else test_images
        side.extend(patients[key])

    def subset(images: list[ImageInfo]) -> DatasetIndex:
        ids = {im.id for im in images}
        anns = tuple(a for a in index.annotations if a.image_id in ids)
        return DatasetIndex(tuple(images), anns, index.categories)

    return subset(train_images), subset(test_images)


@dataclass(frozen=True)
class Scenario:
    """Synthetic assignment scenario: (n, 4) arrays of (x, y, w, h) rows."""

    anchors: np.ndarray
    regressed: np.ndarray
    gts: np.ndarray
    image_w: float
    image_h: float

    def to_json_dict(self) -> dict:
        return {
            "anchors": self.anchors.tolist(),
            "regressed": self.regressed.tolist(),
            "gts": self.gts.tolist(),
            "image_w": self.image_w,
            "image_h": self.image_h,
        }


def _regress_toward(
    anchors: np.ndarray, gts: np.ndarray, noise: float, rng: np.random.Generator, pull: float = 0.5
) -> np.ndarray:
    """Move each anchor halfway toward its nearest ground truth, plus jitter.

    Nearest is by center distance. With no ground truths the anchors are
    only jittered. Widths and heights are clamped at zero afterwards.
    """
    out = anchors.copy()
    if gts.shape[0] > 0:
        a_centers = anchors[:, :2] + anchors[:, 2:] / 2.0
        g_centers = gts[:, :2] + gts[:, 2:] / 2.0
        d2 = ((a_centers[:, None, :] - g_centers[None, :, :]) ** 2).sum(axis=2)
        nearest = d2.argmin(axis=1)
        out += pull * (gts[nearest] - anchors)
    if noise > 0:
        out += rng.uniform(-noise, noise, out.shape)
    out[:, 2:] = np.maximum(out[:, 2:], 0.0)
    return out


def synth_scenario(
    n_anchors: int,
    n_gts: int,
    image_w: float,
    image_h: float,
    gt_size_range: tuple[float, float],
    noise: float,
    seed: int,
) -> Scenario:
    """Generate a deterministic assignment scenario.

    Ground-truth boxes are sampled uniformly inside the image with side
    lengths in ``gt_size_range``; anchors sit on a jittered regular grid
    with the geometric-mean side length; regression boxes are the anchors
    pulled toward their nearest ground truth with uniform noise of the
    given magnitude. Identical arguments produce identical output.
    """
    if n_anchors < 0 or n_gts < 0:
        raise DomainError("counts must be >= 0")
    if not (image_w > 0 and image_h > 0):
        raise DomainError(f"image dimensions must be > 0, got {image_w}x{image_h}")
    size_lo, size_hi = gt_size_range
    if not (0 < size_lo <= size_hi):
        raise DomainError(f"gt_size_range must satisfy 0 < lo <= hi, got {gt_size_range}")
    if size_hi > min(image_w, image_h):
        raise DomainError(
            f"gt_size_range upper bound {size_hi} exceeds image side {min(image_w, image_h)}"
        )
    if noise < 0:
        raise DomainError(f"noise must be >= 0, got {noise}")

    rng = np.random.Generator(np.random.PCG64(seed))
    gw = rng.uniform(size_lo, size_hi, n_gts)
    gh = rng.uniform(size_lo, size_hi, n_gts)
    gx = rng.uniform(0.0, image_w - gw)
    gy = rng.uniform(0.0, image_h - gh)
    gts = np.column_stack([gx, gy, gw, gh]) if n_gts else np.zeros((0, 4))

    side = math.sqrt(size_lo * size_hi)
    cols = max(1, math.ceil(math.sqrt(n_anchors * image_w / image_h))) if n_anchors else 1
    rows = max(1, math.ceil(n_anchors / cols))
    cell_w, cell_h = image_w / cols, image_h / rows
    idx = np.arange(n_anchors)
    cx = (idx % cols + 0.5) * cell_w + rng.uniform(-cell_w / 4, cell_w / 4, n_anchors)
    cy = (idx // cols + 0.5) * cell_h + rng.uniform(-cell_h / 4, cell_h / 4, n_anchors)
    anchors = (
        np.column_stack([cx - side / 2, cy - side / 2, np.full(n_anchors, side), np.full(n_anchors, side)])
        if n_anchors
        else np.zeros((0, 4))
    )

    regressed = _regress_toward(anchors, gts, noise, rng)
    return Scenario(
        anchors=anchors,
        regressed=regressed,
        gts=gts,
        image_w=float(image_w),
        image_h=float(image_h),
    )
