import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from completr.data import (
    Annotation,
    Dataset,
    ImageRecord,
    crop_patch,
    dataset_stats,
    load_dataset,
    save_dataset,
)
from completr.errors import (
    DegenerateBoxError,
    InvariantViolationError,
    MalformedFileError,
)
from conftest import make_dataset


def write_json(tmp_path, payload, name="ds.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def coco_payload():
    return {
        "images": [
            {"id": 1, "file_name": "a.png", "width": 64, "height": 48},
            {"id": 2, "file_name": "b.png", "width": 64, "height": 48},
        ],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 1, "bbox": [2, 2, 10, 8]},
            {"id": 2, "image_id": 1, "category_id": 1, "bbox": [20, 10, 12, 12]},
            {"id": 3, "image_id": 2, "category_id": 1, "bbox": [5, 5, 6, 6]},
        ],
        "categories": [{"id": 1, "name": "widget"}],
    }


class TestLoad:
    def test_counts(self, tmp_path):
        ds = load_dataset(write_json(tmp_path, coco_payload()))
        assert ds.n_images == 2
        assert ds.n_annotations == 3

    def test_unknown_category_rejected(self, tmp_path):
        payload = coco_payload()
        payload["annotations"][0]["category_id"] = 99
        with pytest.raises(InvariantViolationError):
            load_dataset(write_json(tmp_path, payload))

    def test_duplicate_annotation_id_rejected(self, tmp_path):
        payload = coco_payload()
        payload["annotations"][1]["id"] = 1
        with pytest.raises(InvariantViolationError):
            load_dataset(write_json(tmp_path, payload))

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(MalformedFileError):
            load_dataset(path)

    def test_missing_section(self, tmp_path):
        with pytest.raises(MalformedFileError):
            load_dataset(write_json(tmp_path, {"images": []}))

    def test_degenerate_boxes_dropped_with_warning(self, tmp_path, caplog):
        payload = coco_payload()
        payload["annotations"].append(
            {"id": 4, "image_id": 1, "category_id": 1, "bbox": [5, 5, 0, 10]}
        )
        payload["annotations"].append(
            {"id": 5, "image_id": 1, "category_id": 1, "bbox": [200, 200, 5, 5]}
        )
        with caplog.at_level("WARNING"):
            ds = load_dataset(write_json(tmp_path, payload))
        assert ds.n_annotations == 3
        assert "degenerate" in caplog.text

    def test_score_and_source_default(self, tmp_path):
        ds = load_dataset(write_json(tmp_path, coco_payload()))
        ann = ds.images[0].annotations[0]
        assert ann.score == 1.0
        assert ann.source == "original"

    def test_unknown_fields_preserved(self, tmp_path):
        payload = coco_payload()
        payload["info"] = {"year": 2024}
        payload["annotations"][0]["iscrowd"] = 0
        path = write_json(tmp_path, payload)
        ds = load_dataset(path)
        out = tmp_path / "out.json"
        save_dataset(ds, out)
        raw = json.loads(out.read_text())
        assert raw["info"] == {"year": 2024}
        anns = {a["id"]: a for a in raw["annotations"]}
        assert anns[1]["iscrowd"] == 0


class TestSaveRoundTrip:
    def test_empty_dataset(self, tmp_path):
        ds = Dataset(images=(), categories={1: "widget"})
        path = tmp_path / "empty.json"
        save_dataset(ds, path)
        raw = json.loads(path.read_text())
        assert raw["images"] == [] and raw["annotations"] == []

    def test_source_field_round_trips(self, tmp_path):
        ds = make_dataset([[(1, (2, 2, 10, 8))]])
        completed = Annotation(
            annotation_id=99, image_id=1, category_id=1,
            bbox=(1.0, 1.0, 5.0, 5.0), score=0.42, source="completed",
        )
        img = ds.images[0]
        ds2 = Dataset(
            images=(
                ImageRecord(
                    img.image_id, img.file_path, img.width, img.height,
                    img.annotations + (completed,),
                ),
            ),
            categories=dict(ds.categories),
        )
        path = tmp_path / "ds.json"
        save_dataset(ds2, path)
        back = load_dataset(path)
        ann = [a for a in back.iter_annotations() if a.annotation_id == 99][0]
        assert ann.source == "completed"
        assert ann.score == 0.42

    def test_byte_stable_after_first_save(self, tmp_path):
        ds = load_dataset(write_json(tmp_path, coco_payload()))
        p1, p2 = tmp_path / "one.json", tmp_path / "two.json"
        save_dataset(ds, p1)
        save_dataset(load_dataset(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()


ann_strategy = st.builds(
    lambda x, y, w, h: (x, y, w, h),
    st.integers(0, 40), st.integers(0, 30),
    st.integers(1, 20), st.integers(1, 15),
)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.lists(st.tuples(st.integers(1, 3), ann_strategy), max_size=5),
        max_size=4,
    )
)
def test_round_trip_equality(tmp_path_factory, specs):
    ds = make_dataset(specs, categories={1: "a", 2: "b", 3: "c"})
    path = tmp_path_factory.mktemp("rt") / "ds.json"
    save_dataset(ds, path)
    assert load_dataset(path) == ds


class TestStats:
    def test_arithmetic(self):
        ds = make_dataset(
            [[(1, (0, 0, 5, 5))] * 10, [(1, (0, 0, 5, 5))] * 20], size=(64, 64)
        )
        # conftest assigns unique ids; rebuild with distinct boxes to avoid confusion
        stats = dataset_stats(ds)
        assert stats.n_images == 2
        assert stats.n_annotations == 30
        assert stats.avg_per_image == 15.0
        assert stats.dense is True
        assert sum(stats.per_class_counts.values()) == stats.n_annotations

    def test_empty(self):
        stats = dataset_stats(Dataset(images=(), categories={}))
        assert stats.n_images == 0
        assert stats.avg_per_image == 0.0
        assert stats.dense is False

    def test_counts_match_line_count_oracle(self, tmp_path):
        payload = coco_payload()
        path = write_json(tmp_path, payload)
        ds = load_dataset(path)
        stats = dataset_stats(ds)
        raw = json.loads(path.read_text())
        assert stats.n_annotations == len(raw["annotations"])
        assert stats.n_images == len(raw["images"])
        per_class = {}
        for a in raw["annotations"]:
            per_class[a["category_id"]] = per_class.get(a["category_id"], 0) + 1
        assert stats.per_class_counts == per_class


class TestCropPatch:
    def _image(self, w=32, h=24):
        rng = np.random.default_rng(0)
        return rng.integers(0, 255, size=(h, w, 3), dtype=np.uint8)

    def _record(self, w=32, h=24, bbox=(0, 0, 32, 24)):
        ann = Annotation(annotation_id=1, image_id=1, category_id=1, bbox=bbox)
        return ImageRecord(1, "x.png", w, h, (ann,)), ann

    def test_full_image_box(self):
        px = self._image()
        rec, ann = self._record()
        patch = crop_patch(px, rec, ann)
        assert np.array_equal(patch.pixels, px)
        assert patch.category_id == 1

    def test_half_outside_clamped(self):
        px = self._image()
        rec, ann = self._record(bbox=(-8.0, 4.0, 16.0, 8.0))
        patch = crop_patch(px, rec, ann)
        assert patch.pixels.shape == (8, 8, 3)
        assert np.array_equal(patch.pixels, px[4:12, 0:8])

    def test_fully_outside_degenerate(self):
        px = self._image()
        rec, ann = self._record(bbox=(100.0, 100.0, 5.0, 5.0))
        with pytest.raises(DegenerateBoxError):
            crop_patch(px, rec, ann)

    def test_random_boxes_geometry_oracle(self, rng):
        px = self._image(64, 48)
        for _ in range(50):
            x = int(rng.integers(-10, 60))
            y = int(rng.integers(-10, 44))
            w = int(rng.integers(1, 30))
            h = int(rng.integers(1, 30))
            ann = Annotation(annotation_id=1, image_id=1, category_id=1,
                             bbox=(float(x), float(y), float(w), float(h)))
            rec = ImageRecord(1, "x.png", 64, 48, (ann,))
            cx0, cy0, cw, ch = ann.clamped(64, 48)
            if cw <= 0 or ch <= 0:
                with pytest.raises(DegenerateBoxError):
                    crop_patch(px, rec, ann)
                continue
            patch = crop_patch(px, rec, ann)
            assert patch.pixels.shape[1] == int(np.ceil(cx0 + cw)) - int(np.floor(cx0))
            assert patch.pixels.shape[0] == int(np.ceil(cy0 + ch)) - int(np.floor(cy0))
            # crop never exceeds the unclamped box, equality iff fully inside
            assert patch.pixels.shape[0] * patch.pixels.shape[1] <= max(w * h, 1) or (
                cw < w or ch < h
            )
