import numpy as np
import pytest

from completr.data import Annotation, Dataset, ImageRecord


def make_dataset(ann_specs, categories=None, size=(64, 48)):
    """Build a small in-memory dataset.

    ann_specs: list of per-image annotation lists, each entry
    (category_id, (x, y, w, h)).
    """
    w, h = size
    images = []
    ann_id = 1
    for i, specs in enumerate(ann_specs, start=1):
        anns = []
        for cat, bbox in specs:
            anns.append(
                Annotation(
                    annotation_id=ann_id,
                    image_id=i,
                    category_id=cat,
                    bbox=tuple(float(v) for v in bbox),
                )
            )
            ann_id += 1
        images.append(
            ImageRecord(
                image_id=i,
                file_path=f"img_{i:04d}.png",
                width=w,
                height=h,
                annotations=tuple(anns),
            )
        )
    if categories is None:
        cats = sorted({cat for specs in ann_specs for cat, _ in specs}) or [1]
        categories = {c: f"class_{c}" for c in cats}
    return Dataset(images=tuple(images), categories=categories)


@pytest.fixture
def tiny_dataset():
    return make_dataset(
        [
            [(1, (2, 2, 10, 8)), (2, (20, 10, 12, 12))],
            [(1, (5, 5, 6, 6))],
        ]
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
