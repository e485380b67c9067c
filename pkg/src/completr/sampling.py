"""Annotation-budget sampling: partial images (PI) and partial annotations (PA).

Both protocols are per-element Bernoulli draws. Randomness is derived per
(seed, element id) with a keyed hash, so results do not depend on iteration
order and are reproducible across platforms.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from .data import Dataset, ImageRecord
from .errors import ConfigInvalidError

PARTIAL_IMAGES = "partial_images"
PARTIAL_ANNOTATIONS = "partial_annotations"


@dataclass(frozen=True)
class SamplingSpec:
    fraction: float
    seed: int
    mode: str

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigInvalidError(f"fraction {self.fraction} outside [0, 1]")
        if self.mode not in (PARTIAL_IMAGES, PARTIAL_ANNOTATIONS):
            raise ConfigInvalidError(f"unknown sampling mode {self.mode!r}")


def _unit_uniform(seed: int, kind: str, element_id: int) -> float:
    """Deterministic uniform in [0, 1) keyed by (seed, kind, element id)."""
    h = hashlib.blake2b(digest_size=8)
    h.update(kind.encode("ascii"))
    h.update(struct.pack("<qq", seed, element_id))
    return struct.unpack("<Q", h.digest())[0] / 2.0**64


def _keep(spec: SamplingSpec, kind: str, element_id: int) -> bool:
    return _unit_uniform(spec.seed, kind, element_id) < spec.fraction


def sample_partial_images(ds: Dataset, spec: SamplingSpec) -> tuple[Dataset, Dataset]:
    """Keep each image (with all its boxes) with probability ``fraction``.

    Returns (labeled, unlabeled); unlabeled keeps the remaining images with
    their annotations stripped.
    """
    if spec.mode != PARTIAL_IMAGES:
        raise ConfigInvalidError(f"expected mode {PARTIAL_IMAGES}, got {spec.mode}")
    labeled: list[ImageRecord] = []
    unlabeled: list[ImageRecord] = []
    for img in ds.images:
        if _keep(spec, "pi", img.image_id):
            labeled.append(img)
        else:
            unlabeled.append(
                ImageRecord(
                    image_id=img.image_id,
                    file_path=img.file_path,
                    width=img.width,
                    height=img.height,
                    annotations=(),
                    extra=dict(img.extra),
                )
            )
    note = f"partial_images fraction={spec.fraction} seed={spec.seed}"
    return (
        Dataset(tuple(labeled), dict(ds.categories), _chain(ds.provenance, note + " split=labeled"), dict(ds.extra)),
        Dataset(tuple(unlabeled), dict(ds.categories), _chain(ds.provenance, note + " split=unlabeled"), dict(ds.extra)),
    )


def sample_partial_annotations(ds: Dataset, spec: SamplingSpec) -> Dataset:
    """Keep each box with probability ``fraction``; drop images left empty."""
    if spec.mode != PARTIAL_ANNOTATIONS:
        raise ConfigInvalidError(f"expected mode {PARTIAL_ANNOTATIONS}, got {spec.mode}")
    kept_images: list[ImageRecord] = []
    for img in ds.images:
        kept = tuple(a for a in img.annotations if _keep(spec, "pa", a.annotation_id))
        if not kept:
            continue
        kept_images.append(
            ImageRecord(
                image_id=img.image_id,
                file_path=img.file_path,
                width=img.width,
                height=img.height,
                annotations=kept,
                extra=dict(img.extra),
            )
        )
    note = f"partial_annotations fraction={spec.fraction} seed={spec.seed}"
    return Dataset(
        tuple(kept_images), dict(ds.categories), _chain(ds.provenance, note), dict(ds.extra)
    )


def _chain(provenance: str, note: str) -> str:
    return f"{provenance} | {note}" if provenance else note
