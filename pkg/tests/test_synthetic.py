import numpy as np
import pytest

from completr.data import dataset_stats
from completr.errors import ConfigInvalidError
from completr.synthetic import (
    SynthConfig,
    generate_synthetic_dense,
    mask_bbox,
    shape_mask,
    write_synthetic,
)


class TestConfig:
    def test_invalid_shape(self):
        with pytest.raises(ConfigInvalidError):
            SynthConfig(shapes=("hexagon",))

    def test_invalid_counts(self):
        with pytest.raises(ConfigInvalidError):
            SynthConfig(objects_per_image=0)


class TestGeneration:
    def test_density_near_configured_mean(self):
        cfg = SynthConfig(n_images=200, objects_per_image=30.0, seed=3)
        ds, _ = generate_synthetic_dense(cfg)
        stats = dataset_stats(ds)
        assert abs(stats.avg_per_image - 30.0) <= 2.0
        assert stats.dense

    def test_deterministic_bytes(self, tmp_path):
        cfg = SynthConfig(n_images=5, seed=11)
        ds1, px1 = generate_synthetic_dense(cfg)
        ds2, px2 = generate_synthetic_dense(cfg)
        assert ds1 == ds2
        for image_id in px1:
            assert np.array_equal(px1[image_id], px2[image_id])
        d1, d2 = tmp_path / "a", tmp_path / "b"
        write_synthetic(ds1, px1, d1)
        write_synthetic(ds2, px2, d2)
        for rec in ds1.images:
            assert (d1 / rec.file_path).read_bytes() == (d2 / rec.file_path).read_bytes()

    def test_different_seeds_differ(self):
        ds1, px1 = generate_synthetic_dense(SynthConfig(n_images=3, seed=1))
        ds2, px2 = generate_synthetic_dense(SynthConfig(n_images=3, seed=2))
        assert any(not np.array_equal(px1[i], px2[i]) for i in px1)

    def test_boxes_inside_image(self):
        cfg = SynthConfig(n_images=20, seed=5)
        ds, _ = generate_synthetic_dense(cfg)
        for ann in ds.iter_annotations():
            x, y, w, h = ann.bbox
            assert x >= 0 and y >= 0
            assert x + w <= cfg.image_size and y + h <= cfg.image_size
            assert w > 0 and h > 0

    def test_gt_boxes_tight_rasterization_oracle(self):
        """Independent scalar rasterizer must reproduce every tight bbox."""
        size = 64

        def slow_mask(shape, cx, cy, r):
            out = np.zeros((size, size), dtype=bool)
            for yi in range(size):
                for xi in range(size):
                    x, y = xi + 0.5, yi + 0.5
                    dx, dy = x - cx, y - cy
                    if shape == "disc":
                        out[yi, xi] = dx * dx + dy * dy <= r * r
                    elif shape == "square":
                        out[yi, xi] = abs(dx) <= r and abs(dy) <= r
                    elif shape == "triangle":
                        out[yi, xi] = dy <= r and dy >= 2.0 * abs(dx) - r
                    elif shape == "diamond":
                        out[yi, xi] = abs(dx) + abs(dy) <= r
                    elif shape == "ring":
                        d2 = dx * dx + dy * dy
                        out[yi, xi] = (0.55 * r) ** 2 <= d2 <= r * r
                    elif shape == "cross":
                        t = max(r / 3.0, 1.0)
                        out[yi, xi] = (abs(dx) <= t and abs(dy) <= r) or (
                            abs(dy) <= t and abs(dx) <= r
                        )
            return out

        rng = np.random.default_rng(9)
        for shape in ("disc", "square", "triangle", "ring", "diamond", "cross"):
            for _ in range(3):
                r = float(rng.uniform(3, 9))
                cx = float(rng.uniform(r + 1, size - r - 1))
                cy = float(rng.uniform(r + 1, size - r - 1))
                fast = shape_mask(shape, size, cx, cy, r)
                slow = slow_mask(shape, cx, cy, r)
                assert np.array_equal(fast, slow)
                bbox = mask_bbox(fast)
                ys, xs = np.nonzero(slow)
                expected = (
                    float(xs.min()), float(ys.min()),
                    float(xs.max() - xs.min() + 1), float(ys.max() - ys.min() + 1),
                )
                assert bbox == expected

    def test_every_annotation_covers_pixels_of_its_class_color(self):
        # boxes must bound the rendered object: the mask recomputed from the
        # stored bbox region is nonempty on all four borders of the box
        cfg = SynthConfig(n_images=4, seed=13, occlusion_rate=0.0, noise_sigma=0.0)
        ds, pixels = generate_synthetic_dense(cfg)
        bg = np.array(cfg.background)
        for rec in ds.images:
            img = pixels[rec.image_id].astype(int)
            fg = np.abs(img - bg).sum(axis=2) > 30
            for ann in rec.annotations:
                x, y, w, h = (int(v) for v in ann.bbox)
                region = fg[y : y + h, x : x + w]
                assert region.any()
                assert region[0, :].any() and region[-1, :].any()
                assert region[:, 0].any() and region[:, -1].any()
