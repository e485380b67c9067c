"""Canonical in-memory data model and on-disk JSON format for detection datasets.

The on-disk format is a COCO-style superset: every annotation additionally
carries a ``source`` (provenance) and a ``score``. Unknown fields are kept
verbatim so files produced by other tooling survive a round-trip.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from PIL import Image as PILImage

from .errors import (
    DegenerateBoxError,
    InvariantViolationError,
    IOFailureError,
    MalformedFileError,
)

logger = logging.getLogger(__name__)

SOURCES = ("original", "completed", "pseudo", "accepted", "rejected")
DENSE_THRESHOLD = 15.0

_IMAGE_KEYS = {"id", "file_name", "width", "height"}
_ANN_KEYS = {"id", "image_id", "category_id", "bbox", "score", "source"}
_CAT_KEYS = {"id", "name"}


@dataclass(frozen=True)
class Annotation:
    """One bounding box: absolute-pixel (x, y, w, h) with top-left origin."""

    annotation_id: int
    image_id: int
    category_id: int
    bbox: tuple[float, float, float, float]
    score: float = 1.0
    source: str = "original"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise InvariantViolationError(
                f"annotation {self.annotation_id}: unknown source {self.source!r}"
            )
        if not 0.0 <= self.score <= 1.0:
            raise InvariantViolationError(
                f"annotation {self.annotation_id}: score {self.score} outside [0, 1]"
            )

    @property
    def area(self) -> float:
        return self.bbox[2] * self.bbox[3]

    def clamped(self, width: int, height: int) -> tuple[float, float, float, float]:
        """Intersection of the box with the image rectangle, as (x, y, w, h)."""
        x0 = min(max(self.bbox[0], 0.0), float(width))
        y0 = min(max(self.bbox[1], 0.0), float(height))
        x1 = min(max(self.bbox[0] + self.bbox[2], 0.0), float(width))
        y1 = min(max(self.bbox[1] + self.bbox[3], 0.0), float(height))
        return (x0, y0, max(x1 - x0, 0.0), max(y1 - y0, 0.0))


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    file_path: str
    width: int
    height: int
    annotations: tuple[Annotation, ...] = ()
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvariantViolationError(
                f"image {self.image_id}: nonpositive dimensions "
                f"{self.width}x{self.height}"
            )
        for ann in self.annotations:
            if ann.image_id != self.image_id:
                raise InvariantViolationError(
                    f"annotation {ann.annotation_id} references image "
                    f"{ann.image_id}, not {self.image_id}"
                )


@dataclass(frozen=True)
class Dataset:
    """Immutable dataset; mutation means constructing a new Dataset."""

    images: tuple[ImageRecord, ...]
    categories: dict[int, str]
    provenance: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        seen_images: set[int] = set()
        seen_anns: set[int] = set()
        for img in self.images:
            if img.image_id in seen_images:
                raise InvariantViolationError(f"duplicate image id {img.image_id}")
            seen_images.add(img.image_id)
            for ann in img.annotations:
                if ann.annotation_id in seen_anns:
                    raise InvariantViolationError(
                        f"duplicate annotation id {ann.annotation_id}"
                    )
                seen_anns.add(ann.annotation_id)
                if ann.category_id not in self.categories:
                    raise InvariantViolationError(
                        f"annotation {ann.annotation_id} references unknown "
                        f"category {ann.category_id}"
                    )

    def iter_annotations(self) -> Iterator[Annotation]:
        for img in self.images:
            yield from img.annotations

    @property
    def n_images(self) -> int:
        return len(self.images)

    @property
    def n_annotations(self) -> int:
        return sum(len(img.annotations) for img in self.images)

    def image(self, image_id: int) -> ImageRecord:
        for img in self.images:
            if img.image_id == image_id:
                return img
        raise KeyError(image_id)

    def max_annotation_id(self) -> int:
        return max((a.annotation_id for a in self.iter_annotations()), default=0)

    def with_provenance(self, provenance: str) -> "Dataset":
        return Dataset(self.images, dict(self.categories), provenance, dict(self.extra))

    def subset_images(self, image_ids: set[int]) -> "Dataset":
        kept = tuple(img for img in self.images if img.image_id in image_ids)
        return Dataset(kept, dict(self.categories), self.provenance, dict(self.extra))


@dataclass(frozen=True)
class DatasetStats:
    n_images: int
    n_annotations: int
    avg_per_image: float
    per_class_counts: dict[int, int]
    dense: bool


@dataclass(frozen=True)
class QueryPatch:
    """Pixel crop of one ground-truth annotation."""

    pixels: np.ndarray  # (H, W, 3) uint8
    category_id: int
    image_id: int
    annotation_id: int

    def __post_init__(self):
        if self.pixels.size == 0:
            raise DegenerateBoxError(
                f"annotation {self.annotation_id}: empty crop"
            )


def dataset_stats(ds: Dataset) -> DatasetStats:
    """Counts plus average annotations per image; dense iff the average >= 15."""
    per_class: dict[int, int] = {}
    n_anns = 0
    for ann in ds.iter_annotations():
        per_class[ann.category_id] = per_class.get(ann.category_id, 0) + 1
        n_anns += 1
    n_images = ds.n_images
    avg = n_anns / n_images if n_images > 0 else 0.0
    return DatasetStats(
        n_images=n_images,
        n_annotations=n_anns,
        avg_per_image=avg,
        per_class_counts=per_class,
        dense=avg >= DENSE_THRESHOLD,
    )


def load_dataset(path: str | os.PathLike) -> Dataset:
    """Parse an annotation JSON file into a validated Dataset.

    Annotations with nonpositive width/height, or whose box has zero area
    after clamping to the image bounds, are dropped with a warning.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise IOFailureError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"{path}: invalid JSON: {exc}") from exc
    return dataset_from_dict(raw, origin=str(path))


def dataset_from_dict(raw: dict, origin: str = "<dict>") -> Dataset:
    if not isinstance(raw, dict):
        raise MalformedFileError(f"{origin}: top level must be an object")
    for key in ("images", "annotations", "categories"):
        if key not in raw or not isinstance(raw[key], list):
            raise MalformedFileError(f"{origin}: missing or non-array {key!r}")

    categories: dict[int, str] = {}
    cat_extra: dict[int, dict] = {}
    for cat in raw["categories"]:
        _require(cat, ("id", "name"), origin, "category")
        if cat["id"] in categories:
            raise InvariantViolationError(f"{origin}: duplicate category id {cat['id']}")
        categories[int(cat["id"])] = str(cat["name"])
        cat_extra[int(cat["id"])] = {k: v for k, v in cat.items() if k not in _CAT_KEYS}

    records: dict[int, dict] = {}
    order: list[int] = []
    for img in raw["images"]:
        _require(img, ("id", "file_name", "width", "height"), origin, "image")
        image_id = int(img["id"])
        if image_id in records:
            raise InvariantViolationError(f"{origin}: duplicate image id {image_id}")
        records[image_id] = {
            "file_path": str(img["file_name"]),
            "width": int(img["width"]),
            "height": int(img["height"]),
            "extra": {k: v for k, v in img.items() if k not in _IMAGE_KEYS},
            "annotations": [],
        }
        order.append(image_id)

    seen_ann_ids: set[int] = set()
    n_dropped = 0
    for ann in raw["annotations"]:
        _require(ann, ("id", "image_id", "category_id", "bbox"), origin, "annotation")
        ann_id = int(ann["id"])
        if ann_id in seen_ann_ids:
            raise InvariantViolationError(f"{origin}: duplicate annotation id {ann_id}")
        seen_ann_ids.add(ann_id)
        image_id = int(ann["image_id"])
        if image_id not in records:
            raise InvariantViolationError(
                f"{origin}: annotation {ann_id} references unknown image {image_id}"
            )
        category_id = int(ann["category_id"])
        if category_id not in categories:
            raise InvariantViolationError(
                f"{origin}: annotation {ann_id} references unknown category {category_id}"
            )
        bbox = ann["bbox"]
        if not (isinstance(bbox, list) and len(bbox) == 4):
            raise MalformedFileError(f"{origin}: annotation {ann_id} bbox must be [x,y,w,h]")
        bbox = tuple(float(v) for v in bbox)
        rec = records[image_id]
        annotation = Annotation(
            annotation_id=ann_id,
            image_id=image_id,
            category_id=category_id,
            bbox=bbox,
            score=float(ann.get("score", 1.0)),
            source=str(ann.get("source", "original")),
            extra={k: v for k, v in ann.items() if k not in _ANN_KEYS},
        )
        clamped = annotation.clamped(rec["width"], rec["height"])
        if bbox[2] <= 0 or bbox[3] <= 0 or clamped[2] <= 0 or clamped[3] <= 0:
            n_dropped += 1
            continue
        rec["annotations"].append(annotation)

    if n_dropped:
        logger.warning("%s: dropped %d degenerate annotation(s)", origin, n_dropped)

    images = tuple(
        ImageRecord(
            image_id=i,
            file_path=records[i]["file_path"],
            width=records[i]["width"],
            height=records[i]["height"],
            annotations=tuple(records[i]["annotations"]),
            extra=records[i]["extra"],
        )
        for i in order
    )
    known = {"images", "annotations", "categories", "provenance"}
    extra = {k: v for k, v in raw.items() if k not in known}
    if any(cat_extra.values()):
        # stash category extras so they round-trip
        extra.setdefault("_category_extra", {str(k): v for k, v in cat_extra.items() if v})
    return Dataset(
        images=images,
        categories=categories,
        provenance=str(raw.get("provenance", "")),
        extra=extra,
    )


def dataset_to_dict(ds: Dataset) -> dict:
    cat_extra = ds.extra.get("_category_extra", {})
    out = {
        "images": [
            dict(
                {
                    "id": img.image_id,
                    "file_name": img.file_path,
                    "width": img.width,
                    "height": img.height,
                },
                **img.extra,
            )
            for img in sorted(ds.images, key=lambda im: im.image_id)
        ],
        "annotations": [
            dict(
                {
                    "id": ann.annotation_id,
                    "image_id": ann.image_id,
                    "category_id": ann.category_id,
                    "bbox": [_jsonable(v) for v in ann.bbox],
                    "score": _jsonable(ann.score),
                    "source": ann.source,
                },
                **ann.extra,
            )
            for ann in sorted(ds.iter_annotations(), key=lambda a: a.annotation_id)
        ],
        "categories": [
            dict({"id": cid, "name": name}, **cat_extra.get(str(cid), {}))
            for cid, name in sorted(ds.categories.items())
        ],
        "provenance": ds.provenance,
    }
    for k, v in ds.extra.items():
        if k != "_category_extra":
            out[k] = v
    return out


def save_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    """Write the canonical serialization (sorted keys and ids, UTF-8, no BOM)."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(dataset_to_dict(ds), fh, sort_keys=True, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise IOFailureError(f"cannot write {path}: {exc}") from exc


def crop_patch(pixels: np.ndarray, record: ImageRecord, ann: Annotation) -> QueryPatch:
    """Crop the annotation's box (clamped to image bounds) out of the image.

    Pixel extent is [floor(x0), ceil(x1)) x [floor(y0), ceil(y1)), so integer
    boxes crop exactly their stated width and height.
    """
    if ann.image_id != record.image_id:
        raise InvariantViolationError(
            f"annotation {ann.annotation_id} does not belong to image {record.image_id}"
        )
    x0, y0, w, h = ann.clamped(record.width, record.height)
    if w <= 0 or h <= 0:
        raise DegenerateBoxError(
            f"annotation {ann.annotation_id}: zero area after clamping"
        )
    xi0, yi0 = int(math.floor(x0)), int(math.floor(y0))
    xi1 = min(int(math.ceil(x0 + w)), record.width)
    yi1 = min(int(math.ceil(y0 + h)), record.height)
    crop = pixels[yi0:yi1, xi0:xi1]
    if crop.size == 0:
        raise DegenerateBoxError(
            f"annotation {ann.annotation_id}: empty pixel crop"
        )
    return QueryPatch(
        pixels=np.ascontiguousarray(crop),
        category_id=ann.category_id,
        image_id=ann.image_id,
        annotation_id=ann.annotation_id,
    )


class ImageStore:
    """Loads and caches image pixel arrays referenced by ImageRecords."""

    def __init__(self, root: str | os.PathLike):
        self.root = str(root)
        self._cache: dict[int, np.ndarray] = {}

    def pixels(self, record: ImageRecord) -> np.ndarray:
        if record.image_id not in self._cache:
            path = os.path.join(self.root, record.file_path)
            try:
                with PILImage.open(path) as im:
                    arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
            except OSError as exc:
                raise IOFailureError(f"cannot read image {path}: {exc}") from exc
            self._cache[record.image_id] = arr
        return self._cache[record.image_id]


def _require(obj: dict, keys: tuple[str, ...], origin: str, kind: str) -> None:
    if not isinstance(obj, dict):
        raise MalformedFileError(f"{origin}: {kind} entries must be objects")
    missing = [k for k in keys if k not in obj]
    if missing:
        raise MalformedFileError(f"{origin}: {kind} missing {', '.join(missing)}")


def _jsonable(v: float) -> float | int:
    # ints stay ints so canonical files are byte-stable
    return int(v) if float(v).is_integer() and abs(v) < 2**53 else float(v)
