import math

import pytest

from completr.data import Annotation, Dataset, ImageRecord
from completr.errors import ConfigInvalidError
from completr.sampling import (
    PARTIAL_ANNOTATIONS,
    PARTIAL_IMAGES,
    SamplingSpec,
    sample_partial_annotations,
    sample_partial_images,
)
from conftest import make_dataset


def big_dataset(n_images, anns_per_image=1):
    images = []
    ann_id = 1
    for i in range(1, n_images + 1):
        anns = []
        for _ in range(anns_per_image):
            anns.append(Annotation(ann_id, i, 1, (1.0, 1.0, 4.0, 4.0)))
            ann_id += 1
        images.append(ImageRecord(i, f"i{i}.png", 32, 32, tuple(anns)))
    return Dataset(tuple(images), {1: "c"})


def pi_spec(fraction, seed=1):
    return SamplingSpec(fraction=fraction, seed=seed, mode=PARTIAL_IMAGES)


def pa_spec(fraction, seed=1):
    return SamplingSpec(fraction=fraction, seed=seed, mode=PARTIAL_ANNOTATIONS)


class TestSpec:
    def test_fraction_bounds(self):
        with pytest.raises(ConfigInvalidError):
            SamplingSpec(fraction=1.5, seed=0, mode=PARTIAL_IMAGES)

    def test_unknown_mode(self):
        with pytest.raises(ConfigInvalidError):
            SamplingSpec(fraction=0.5, seed=0, mode="nope")


class TestPartialImages:
    def test_fraction_one_keeps_everything(self, tiny_dataset):
        labeled, unlabeled = sample_partial_images(tiny_dataset, pi_spec(1.0))
        assert labeled.images == tiny_dataset.images
        assert unlabeled.images == ()

    def test_fraction_zero_strips_all(self, tiny_dataset):
        labeled, unlabeled = sample_partial_images(tiny_dataset, pi_spec(0.0))
        assert labeled.images == ()
        assert unlabeled.n_images == tiny_dataset.n_images
        assert unlabeled.n_annotations == 0

    def test_binomial_bound(self):
        ds = big_dataset(10_000)
        for seed in (1, 2, 3):
            labeled, _ = sample_partial_images(ds, pi_spec(0.3, seed))
            assert abs(labeled.n_images - 3000) <= 200

    def test_labeled_keeps_original_annotations(self):
        ds = big_dataset(100, anns_per_image=3)
        labeled, _ = sample_partial_images(ds, pi_spec(0.5))
        original = {img.image_id: img for img in ds.images}
        for img in labeled.images:
            assert img.annotations == original[img.image_id].annotations

    def test_deterministic(self):
        ds = big_dataset(500)
        a = sample_partial_images(ds, pi_spec(0.4, seed=7))
        b = sample_partial_images(ds, pi_spec(0.4, seed=7))
        assert a == b

    def test_seeds_differ(self):
        ds = big_dataset(500)
        a, _ = sample_partial_images(ds, pi_spec(0.4, seed=7))
        b, _ = sample_partial_images(ds, pi_spec(0.4, seed=8))
        assert {i.image_id for i in a.images} != {i.image_id for i in b.images}


class TestPartialAnnotations:
    def test_fraction_one_identity(self, tiny_dataset):
        out = sample_partial_annotations(tiny_dataset, pa_spec(1.0))
        assert out.images == tiny_dataset.images

    def test_fraction_zero_drops_all_images(self, tiny_dataset):
        out = sample_partial_annotations(tiny_dataset, pa_spec(0.0))
        assert out.images == ()

    def test_binomial_bound(self):
        ds = big_dataset(1000, anns_per_image=10)
        for seed in (1, 2, 3):
            out = sample_partial_annotations(ds, pa_spec(0.3, seed))
            frac = out.n_annotations / ds.n_annotations
            assert abs(frac - 0.3) <= 0.02

    def test_no_empty_images(self):
        ds = big_dataset(2000, anns_per_image=2)
        out = sample_partial_annotations(ds, pa_spec(0.2, seed=5))
        assert all(len(img.annotations) > 0 for img in out.images)

    def test_no_invented_boxes(self):
        ds = big_dataset(200, anns_per_image=4)
        out = sample_partial_annotations(ds, pa_spec(0.5, seed=3))
        src_ids = {a.annotation_id for a in ds.iter_annotations()}
        out_ids = {a.annotation_id for a in out.iter_annotations()}
        assert out_ids <= src_ids

    def test_deterministic(self):
        ds = big_dataset(300, anns_per_image=5)
        assert sample_partial_annotations(ds, pa_spec(0.3, 11)) == sample_partial_annotations(
            ds, pa_spec(0.3, 11)
        )

    def test_order_independence(self):
        ds = big_dataset(50, anns_per_image=4)
        reversed_ds = Dataset(tuple(reversed(ds.images)), dict(ds.categories))
        out_fwd = sample_partial_annotations(ds, pa_spec(0.5, 2))
        out_rev = sample_partial_annotations(reversed_ds, pa_spec(0.5, 2))
        assert {a.annotation_id for a in out_fwd.iter_annotations()} == {
            a.annotation_id for a in out_rev.iter_annotations()
        }


def test_three_sigma_acceptance_bounds():
    """PI/PA retention within binomial 3-sigma at X in {0.01, 0.05, 0.3}."""
    n = 10_000
    ds_pi = big_dataset(n)
    ds_pa = big_dataset(1000, anns_per_image=10)
    for frac in (0.01, 0.05, 0.3):
        bound = 3 * math.sqrt(n * frac * (1 - frac))
        for seed in (1, 2, 3):
            labeled, _ = sample_partial_images(ds_pi, pi_spec(frac, seed))
            assert abs(labeled.n_images - n * frac) <= bound
            out = sample_partial_annotations(ds_pa, pa_spec(frac, seed))
            assert abs(out.n_annotations - n * frac) <= bound
            assert all(img.annotations for img in out.images)
