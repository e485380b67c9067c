import numpy as np
import pytest
import torch

from completr.data import Annotation, ImageRecord, ImageStore
from completr.errors import (
    ConfigInvalidError,
    DimensionMismatchError,
    NoAnnotationsError,
)
from completr.losses import LossWeights, FocalParams, SoftSamplingParams, completr_loss
from completr.model import (
    CompleterModel,
    ModelConfig,
    StepParams,
    class_gt_boxes,
    train_step,
)
from completr.patches import QueryPatchBatch, build_query_pool, to_tensor
from completr.synthetic import SynthConfig, generate_synthetic_dense, write_synthetic


TINY = ModelConfig(n_queries=12, query_dim=32, backbone_channels=32,
                   n_encoder_layers=1, n_decoder_layers=1, n_heads=4,
                   ffn_dim=64, patch_size=16)


@pytest.fixture(scope="module")
def tiny_model():
    return CompleterModel(TINY, seed=3)


@pytest.fixture(scope="module")
def synth_env(tmp_path_factory):
    cfg = SynthConfig(n_images=5, image_size=48, objects_per_image=8, seed=6, size_range=(3, 5))
    ds, px = generate_synthetic_dense(cfg)
    root = tmp_path_factory.mktemp("train_imgs")
    write_synthetic(ds, px, root)
    store = ImageStore(root)
    return ds, store, build_query_pool(ds, store)


def dummy_batch(model, n_pos=1, n_neg=1):
    g = torch.Generator().manual_seed(0)
    size = model.cfg.patch_size
    pos = [torch.rand(3, size, size, generator=g) for _ in range(n_pos)]
    neg = [torch.rand(3, size, size, generator=g) for _ in range(n_neg)]
    return QueryPatchBatch(positives=pos, negatives=neg, target_class=1)


class TestConfig:
    def test_defaults_match_convention(self):
        cfg = ModelConfig()
        assert cfg.n_queries == 300
        assert cfg.patch_size == 256

    def test_validation(self):
        with pytest.raises(ConfigInvalidError):
            ModelConfig(n_queries=0)
        with pytest.raises(ConfigInvalidError):
            ModelConfig(query_dim=30, n_heads=4)

    def test_round_trip(self):
        cfg = ModelConfig(n_queries=7)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestEmbedding:
    def test_zero_features_embed_to_zero(self, tiny_model):
        size = tiny_model.cfg.patch_size
        patches = torch.zeros(2, 3, size, size)
        # zero the backbone output by monkeypatching features
        orig = tiny_model.net.backbone_features
        try:
            tiny_model.net.backbone_features = lambda x: torch.zeros(
                x.shape[0], tiny_model.cfg.backbone_channels, 2, 2
            )
            p = tiny_model.net.embed_patches(patches)
        finally:
            tiny_model.net.backbone_features = orig
        assert torch.all(p == 0)

    def test_embedding_dimension(self, tiny_model):
        p = tiny_model.net.embed_patches(torch.rand(3, 3, 24, 24))
        assert p.shape == (tiny_model.cfg.query_dim,)

    def test_linear_map_oracle(self, tiny_model):
        c = tiny_model.cfg.backbone_channels
        dim = tiny_model.cfg.query_dim
        h = w = 3
        orig = tiny_model.net.backbone_features
        weight = tiny_model.net.patch_proj.weight.detach()
        try:
            tiny_model.net.backbone_features = lambda x: torch.ones(x.shape[0], c, h, w)
            p = tiny_model.net.embed_patches(torch.rand(1, 3, 16, 16))
        finally:
            tiny_model.net.backbone_features = orig
        # sum-pool of all-ones features is h*w per channel; p = W^T (h*w * 1)
        expected = torch.tensor(
            [h * w * sum(float(weight[j, k]) for k in range(c)) for j in range(dim)]
        )
        assert torch.allclose(p, expected, atol=1e-4)

    def test_shape_validation(self, tiny_model):
        with pytest.raises(DimensionMismatchError):
            tiny_model.net.embed_patches(torch.rand(3, 16, 16))


class TestAugmentQueries:
    def test_zero_embedding_identity(self, tiny_model):
        base = tiny_model.net.augment_queries(None, batch=2)
        zero = tiny_model.net.augment_queries(torch.zeros(tiny_model.cfg.query_dim), batch=2)
        assert torch.equal(base, zero)

    def test_broadcast_add_oracle(self, tiny_model, rng):
        p = torch.tensor(rng.normal(size=tiny_model.cfg.query_dim), dtype=torch.float32)
        out = tiny_model.net.augment_queries(p, batch=1)
        q = tiny_model.net.query_embed.weight
        for i in range(tiny_model.cfg.n_queries):
            for j in range(tiny_model.cfg.query_dim):
                assert out[0, i, j].item() == pytest.approx(
                    q[i, j].item() + p[j].item(), abs=1e-6
                )

    def test_dimension_mismatch(self, tiny_model):
        with pytest.raises(DimensionMismatchError):
            tiny_model.net.augment_queries(torch.zeros(tiny_model.cfg.query_dim + 1), batch=1)


class TestForward:
    def test_zero_patch_embedding_matches_unconditioned(self, tiny_model):
        img = torch.rand(1, 3, 48, 48, generator=torch.Generator().manual_seed(1))
        with torch.no_grad():
            encoded = tiny_model.net.encode(img)
            probs_zero, boxes_zero = tiny_model.net.decode(encoded, torch.zeros(32))
            probs_none, boxes_none = tiny_model.net.decode(encoded, None)
        assert torch.equal(probs_zero, probs_none)
        assert torch.equal(boxes_zero, boxes_none)

    def test_equal_embeddings_give_equal_streams(self, tiny_model):
        img = torch.rand(1, 3, 48, 48, generator=torch.Generator().manual_seed(2))
        batch = dummy_batch(tiny_model)
        batch.negatives = [t.clone() for t in batch.positives]
        with torch.no_grad():
            positive, negative = tiny_model.forward(img, batch)
        assert torch.equal(positive[0].probs, negative[0].probs)
        assert torch.equal(positive[0].boxes, negative[0].boxes)

    def test_deterministic_forward(self, tiny_model):
        img = torch.rand(2, 3, 48, 48, generator=torch.Generator().manual_seed(3))
        batch = dummy_batch(tiny_model)
        with torch.no_grad():
            a_pos, a_neg = tiny_model.forward(img, batch)
            b_pos, b_neg = tiny_model.forward(img, batch)
        for a, b in zip(a_pos + a_neg, b_pos + b_neg):
            assert torch.equal(a.probs, b.probs)
            assert torch.equal(a.boxes, b.boxes)

    def test_encoder_runs_once_per_forward(self, tiny_model, monkeypatch):
        img = torch.rand(1, 3, 48, 48)
        batch = dummy_batch(tiny_model, n_neg=2)
        calls = []
        orig = tiny_model.net.encode

        def counting_encode(images):
            calls.append(1)
            return orig(images)

        monkeypatch.setattr(tiny_model.net, "encode", counting_encode)
        with torch.no_grad():
            tiny_model.forward(img, batch)
        assert len(calls) == 1

    def test_outputs_in_range(self, tiny_model):
        g = torch.Generator().manual_seed(9)
        for _ in range(20):
            img = torch.rand(1, 3, 48, 48, generator=g)
            batch = dummy_batch(tiny_model)
            with torch.no_grad():
                positive, negative = tiny_model.forward(img, batch)
            for det in positive + (negative or []):
                assert torch.all(det.probs >= 0) and torch.all(det.probs <= 1)
                assert torch.all(det.boxes >= 0) and torch.all(det.boxes <= 1)
                assert det.probs.shape == (tiny_model.cfg.n_queries,)

    def test_requires_positive_patch(self, tiny_model):
        img = torch.rand(1, 3, 48, 48)
        with pytest.raises(DimensionMismatchError):
            tiny_model.forward(img, QueryPatchBatch([], [], target_class=1))


class TestTrainStep:
    def test_loss_finite_nonnegative(self, synth_env):
        ds, store, pool = synth_env
        model = CompleterModel(TINY, seed=0)
        opt = torch.optim.AdamW(model.net.parameters(), lr=1e-4)
        g = torch.Generator().manual_seed(0)
        record = ds.images[0]
        loss = train_step(model, record, to_tensor(store.pixels(record)), pool,
                          StepParams(), opt, g)
        assert np.isfinite(loss) and loss >= 0

    def test_no_annotations_rejected(self, synth_env):
        ds, store, pool = synth_env
        model = CompleterModel(TINY, seed=0)
        opt = torch.optim.AdamW(model.net.parameters(), lr=1e-4)
        empty = ImageRecord(999, ds.images[0].file_path, 48, 48, ())
        with pytest.raises(NoAnnotationsError):
            train_step(model, empty, torch.rand(3, 48, 48), pool,
                       StepParams(), opt, torch.Generator().manual_seed(0))

    def test_negative_stream_accounting(self, synth_env):
        """Disabling negatives must remove exactly the negative-stream term."""
        ds, store, pool = synth_env
        record = ds.images[0]
        image = to_tensor(store.pixels(record))
        model = CompleterModel(TINY, seed=1)
        params = StepParams()

        def run(n_neg):
            g = torch.Generator().manual_seed(42)
            classes = sorted({a.category_id for a in record.annotations})
            target = classes[int(torch.randint(0, len(classes), (1,), generator=g))]
            from completr.patches import sample_query_patches

            batch = sample_query_patches(pool, target, params.n_pos, n_neg,
                                         model.cfg.patch_size, g, augment=True)
            with torch.no_grad():
                positive, negative = model.forward(image.unsqueeze(0), batch)
            gts = class_gt_boxes(record, target)
            loss, _ = completr_loss(
                positive[0].probs, positive[0].boxes, gts,
                params.loss_weights, params.focal, params.soft_sampling,
                overlap_boxes=class_gt_boxes(record),
            )
            neg_term = 0.0
            if negative is not None:
                neg_loss, _ = completr_loss(
                    negative[0].probs, negative[0].boxes, torch.zeros((0, 4)),
                    params.loss_weights, params.focal, sp=None,
                )
                neg_term = float(neg_loss)
            return float(loss), neg_term

        with_neg_pos, with_neg_term = run(n_neg=1)
        without_pos, without_term = run(n_neg=0)
        assert without_term == 0.0
        # positive-stream term identical because the generator consumes the
        # same draws for target/patch selection in both runs
        assert with_neg_pos == pytest.approx(without_pos, rel=1e-6)
        total_with = with_neg_pos + with_neg_term
        total_without = without_pos
        assert total_with - total_without == pytest.approx(with_neg_term, rel=1e-6)

    def test_overfit_smoke(self, synth_env):
        ds, store, pool = synth_env
        model = CompleterModel(TINY, seed=2)
        opt = torch.optim.AdamW(model.net.parameters(), lr=4e-4)
        g = torch.Generator().manual_seed(1)
        losses = []
        records = [r for r in ds.images if r.annotations]
        for step in range(500):
            record = records[step % len(records)]
            losses.append(
                train_step(model, record, to_tensor(store.pixels(record)), pool,
                           StepParams(), opt, g)
            )
        start = np.mean(losses[:10])
        end = np.mean(losses[-10:])
        assert end <= 0.5 * start


class TestClassGtBoxes:
    def test_normalization(self):
        ann = Annotation(1, 1, 2, (8.0, 12.0, 16.0, 24.0))
        rec = ImageRecord(1, "x.png", 32, 48, (ann,))
        boxes = class_gt_boxes(rec, 2)
        assert boxes.shape == (1, 4)
        assert torch.allclose(boxes[0], torch.tensor([0.5, 0.5, 0.5, 0.5]))

    def test_class_filter(self):
        anns = (
            Annotation(1, 1, 1, (0.0, 0.0, 8.0, 8.0)),
            Annotation(2, 1, 2, (8.0, 8.0, 8.0, 8.0)),
        )
        rec = ImageRecord(1, "x.png", 32, 32, anns)
        assert class_gt_boxes(rec, 1).shape == (1, 4)
        assert class_gt_boxes(rec).shape == (2, 4)
        assert class_gt_boxes(rec, 99).shape == (0, 4)
