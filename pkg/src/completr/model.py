"""Two-stream set-prediction model for annotation completion.

A small strided CNN feeds a standard transformer encoder; learned object
queries, additively conditioned on a query-patch embedding, drive a
transformer decoder that emits N (probability, box) pairs per stream.

The patch embedding is the backbone feature map sum-pooled over space and
linearly mapped to the query dimension; conditioning is a plain addition,
so a zero embedding reproduces the unconditioned model exactly.

Desk-scale convergence aids (all standard detection practice): each query
owns a learned anchor box that the box head refines, cross-attention gets a
Gaussian locality bias around the query's anchor, the conditioned queries
seed the decoder content stream, and the class logit carries an explicit
content/patch similarity term (exactly zero when unconditioned).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import torch
from torch import Tensor, nn

from .data import Annotation, ImageRecord
from .errors import (
    ConfigInvalidError,
    DimensionMismatchError,
    NoAnnotationsError,
    UninitializedModelError,
)
from .geometry import abs_xywh_to_norm_cxcywh
from .losses import FocalParams, LossWeights, SoftSamplingParams, completr_loss
from .patches import AugmentConfig, QueryPatchBatch, QueryPool, sample_query_patches

POSITIVE_STREAM = "positive"
NEGATIVE_STREAM = "negative"

BACKBONE_STRIDE = 4


@dataclass(frozen=True)
class ModelConfig:
    n_queries: int = 300
    query_dim: int = 64
    backbone_channels: int = 64
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 128
    patch_size: int = 256
    locality_sigma: float = 0.12  # cross-attention Gaussian bias width
    n_classes: int = 1  # 1 = binary patch-conditioned head; >1 = plain detector

    def __post_init__(self):
        if self.n_queries < 1:
            raise ConfigInvalidError("n_queries must be >= 1")
        if self.query_dim % self.n_heads != 0:
            raise ConfigInvalidError("query_dim must be divisible by n_heads")
        if self.n_classes < 1:
            raise ConfigInvalidError("n_classes must be >= 1")
        if self.locality_sigma <= 0:
            raise ConfigInvalidError("locality_sigma must be positive")

    def to_dict(self) -> dict:
        return {
            "n_queries": self.n_queries,
            "query_dim": self.query_dim,
            "backbone_channels": self.backbone_channels,
            "n_encoder_layers": self.n_encoder_layers,
            "n_decoder_layers": self.n_decoder_layers,
            "n_heads": self.n_heads,
            "ffn_dim": self.ffn_dim,
            "patch_size": self.patch_size,
            "locality_sigma": self.locality_sigma,
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**{k: data[k] for k in cls().to_dict() if k in data})


@dataclass
class DetectionSet:
    """Per-query outputs of one stream for one image."""

    probs: Tensor  # (N,) for binary heads, (N, C) for detector heads
    boxes: Tensor  # (N, 4) normalized cxcywh
    stream: str = POSITIVE_STREAM


@dataclass
class EncodedImage:
    """Encoder memory for one batch of images; reused across decoder streams."""

    memory: Tensor  # (B, HW, dim)
    pos: Tensor  # (1, HW, dim)
    grid: tuple[int, int]  # (h, w) of the token grid


def sine_position_encoding(h: int, w: int, dim: int) -> Tensor:
    """2-D sine/cosine positional features, shape (h*w, dim)."""
    if dim % 4 != 0:
        raise ConfigInvalidError("position encoding needs dim divisible by 4")
    quarter = dim // 4
    freqs = torch.exp(
        torch.arange(quarter, dtype=torch.float32) * (-math.log(10000.0) / max(quarter - 1, 1))
    )
    ys = torch.arange(h, dtype=torch.float32).unsqueeze(1) * freqs
    xs = torch.arange(w, dtype=torch.float32).unsqueeze(1) * freqs
    y_enc = torch.cat([ys.sin(), ys.cos()], dim=1)  # (h, dim/2)
    x_enc = torch.cat([xs.sin(), xs.cos()], dim=1)  # (w, dim/2)
    grid = torch.cat(
        [
            y_enc.unsqueeze(1).expand(h, w, dim // 2),
            x_enc.unsqueeze(0).expand(h, w, dim // 2),
        ],
        dim=2,
    )
    return grid.reshape(h * w, dim)


def locality_bias(anchor_centers: Tensor, h: int, w: int, sigma: float) -> Tensor:
    """Additive attention bias -d^2/(2 sigma^2) between each query's anchor
    center (N, 2 in [0,1], xy order) and each token cell center; (N, h*w)."""
    ys = (torch.arange(h, dtype=anchor_centers.dtype) + 0.5) / h
    xs = (torch.arange(w, dtype=anchor_centers.dtype) + 0.5) / w
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    grid_x = gx.flatten()
    grid_y = gy.flatten()
    d2 = (anchor_centers[:, None, 0] - grid_x[None, :]) ** 2 + (
        anchor_centers[:, None, 1] - grid_y[None, :]
    ) ** 2
    return -d2 / (2.0 * sigma * sigma)


def grid_anchor_logits(n_queries: int) -> Tensor:
    """Initial anchors: centers on a jig of sqrt(N) x sqrt(N) cells (in logit
    space) with a small prior extent."""
    side = int(math.ceil(math.sqrt(n_queries)))
    idx = torch.arange(n_queries, dtype=torch.float32)
    xs = ((idx % side) + 0.5) / side
    ys = (torch.div(idx, side, rounding_mode="floor") + 0.5) / side
    centers = torch.stack([xs, ys], dim=1).clamp(0.02, 0.98)
    center_logits = torch.log(centers / (1.0 - centers))
    extent_logits = torch.full((n_queries, 2), -2.0)
    return torch.cat([center_logits, extent_logits], dim=1)


class _EncoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.ReLU(), nn.Linear(ffn_dim, dim))

    def forward(self, x: Tensor, pos: Tensor) -> Tensor:
        q = k = x + pos
        x = self.norm1(x + self.attn(q, k, x, need_weights=False)[0])
        return self.norm2(x + self.ffn(x))


class _DecoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.cross_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.norm3 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.ReLU(), nn.Linear(ffn_dim, dim))

    def forward(
        self, tgt: Tensor, queries: Tensor, memory: Tensor, pos: Tensor, bias: Tensor
    ) -> Tensor:
        q = k = tgt + queries
        tgt = self.norm1(tgt + self.self_attn(q, k, tgt, need_weights=False)[0])
        tgt = self.norm2(
            tgt
            + self.cross_attn(
                tgt + queries, memory + pos, memory, need_weights=False, attn_mask=bias
            )[0]
        )
        return self.norm3(tgt + self.ffn(tgt))


class SetPredictionNet(nn.Module):
    """Backbone + encoder + query-conditioned decoder + prediction heads."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.backbone_channels
        dim = cfg.query_dim

        def block(cin, cout, stride):
            return nn.Sequential(
                nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
                nn.GroupNorm(8, cout),
                nn.ReLU(),
            )

        # stride-4 backbone phi; small objects need fine token grids
        self.backbone = nn.Sequential(
            block(3, c // 4, 2), block(c // 4, c // 2, 2), block(c // 2, c, 1)
        )
        self.input_proj = nn.Conv2d(c, dim, 1)
        # W in the patch-embedding map; bias-free so zero features embed to
        # zero, scaled down so sum-pooled embeddings start near query scale
        self.patch_proj = nn.Linear(c, dim, bias=False)
        n_cells = max((cfg.patch_size // BACKBONE_STRIDE) ** 2, 1)
        nn.init.normal_(self.patch_proj.weight, std=0.16 / n_cells)
        self.query_embed = nn.Embedding(cfg.n_queries, dim)
        self.query_anchor = nn.Embedding(cfg.n_queries, 4)
        self.encoder_layers = nn.ModuleList(
            _EncoderLayer(dim, cfg.n_heads, cfg.ffn_dim) for _ in range(cfg.n_encoder_layers)
        )
        self.decoder_layers = nn.ModuleList(
            _DecoderLayer(dim, cfg.n_heads, cfg.ffn_dim) for _ in range(cfg.n_decoder_layers)
        )
        self.class_head = nn.Linear(dim, cfg.n_classes)
        self.similarity_proj = nn.Linear(dim, dim, bias=False)
        self.box_head = nn.Sequential(nn.Linear(dim, dim), nn.ReLU(), nn.Linear(dim, 4))
        # priors: background scores, grid anchors, inert deltas and similarity
        nn.init.constant_(self.class_head.bias, -4.0)
        nn.init.zeros_(self.box_head[-1].weight)
        nn.init.zeros_(self.box_head[-1].bias)
        nn.init.zeros_(self.similarity_proj.weight)
        with torch.no_grad():
            self.query_anchor.weight.copy_(grid_anchor_logits(cfg.n_queries))

    def backbone_features(self, images: Tensor) -> Tensor:
        """phi(images): (B, 3, H, W) -> (B, C, H/4, W/4)."""
        return self.backbone(images)

    def embed_patches(self, patches: Tensor) -> Tensor:
        """Patch embedding: sum-pool phi over space, project C -> dim, then
        average the batch of patches into a single embedding."""
        if patches.ndim != 4 or patches.shape[1] != 3:
            raise DimensionMismatchError(
                f"expected (K, 3, H, W) patches, got {tuple(patches.shape)}"
            )
        feats = self.backbone_features(patches)  # (K, C, h, w)
        pooled = feats.sum(dim=(2, 3))  # (K, C)
        embedded = self.patch_proj(pooled)  # (K, dim)
        return embedded.mean(dim=0)

    def encode(self, images: Tensor) -> EncodedImage:
        """Run backbone + encoder once per image."""
        feats = self.input_proj(self.backbone_features(images))  # (B, dim, h, w)
        b, dim, h, w = feats.shape
        tokens = feats.flatten(2).transpose(1, 2)  # (B, hw, dim)
        pos = sine_position_encoding(h, w, dim).to(tokens.dtype).unsqueeze(0)
        x = tokens
        for layer in self.encoder_layers:
            x = layer(x, pos)
        return EncodedImage(memory=x, pos=pos, grid=(h, w))

    def augment_queries(self, patch_embedding: Tensor | None, batch: int) -> Tensor:
        """q_hat_i = q_i + p (broadcast add; p=None or 0 leaves queries unchanged)."""
        queries = self.query_embed.weight.unsqueeze(0).expand(batch, -1, -1)
        if patch_embedding is None:
            return queries
        if patch_embedding.shape[-1] != queries.shape[-1]:
            raise DimensionMismatchError(
                f"patch embedding dim {patch_embedding.shape[-1]} != query dim {queries.shape[-1]}"
            )
        if patch_embedding.ndim == 1:
            patch_embedding = patch_embedding.unsqueeze(0).expand(batch, -1)
        return queries + patch_embedding.unsqueeze(1)

    def decode(
        self, encoded: EncodedImage, patch_embedding: Tensor | None
    ) -> tuple[Tensor, Tensor]:
        """One decoder pass; returns (probs (B, N, n_classes), boxes (B, N, 4))."""
        b = encoded.memory.shape[0]
        queries = self.augment_queries(patch_embedding, b)
        tgt = queries  # conditioned queries seed the content stream
        h, w = encoded.grid
        anchors = self.query_anchor.weight
        bias = locality_bias(
            torch.sigmoid(anchors[:, :2]), h, w, self.cfg.locality_sigma
        ).to(encoded.memory.dtype)
        for layer in self.decoder_layers:
            tgt = layer(tgt, queries, encoded.memory, encoded.pos, bias)
        logits = self.class_head(tgt)
        if patch_embedding is not None:
            p = patch_embedding
            if p.ndim == 1:
                p = p.unsqueeze(0).expand(b, -1)
            p_unit = p / (p.norm(dim=-1, keepdim=True) + 1e-6)
            similarity = torch.einsum("bnd,bd->bn", self.similarity_proj(tgt), p_unit)
            logits = logits + similarity.unsqueeze(-1)
        probs = torch.sigmoid(logits)
        boxes = torch.sigmoid(anchors.unsqueeze(0) + self.box_head(tgt))
        return probs, boxes


class CompleterModel:
    """Binary patch-conditioned completer: a SetPredictionNet plus config."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        if cfg.n_classes != 1:
            cfg = replace(cfg, n_classes=1)
        self.cfg = cfg
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.net = SetPredictionNet(cfg)
        self._initialized = True

    def require_initialized(self):
        if not getattr(self, "_initialized", False):
            raise UninitializedModelError("model weights not initialized")

    def set_backbone_frozen(self, frozen: bool):
        for p in self.net.backbone.parameters():
            p.requires_grad_(not frozen)

    def forward(
        self, images: Tensor, batch: QueryPatchBatch
    ) -> tuple[list[DetectionSet], list[DetectionSet] | None]:
        """Encode each image once; decode once per stream.

        Returns per-image DetectionSets for the positive stream and, when
        negative patches exist, for the negative stream.
        """
        self.require_initialized()
        if not batch.positives:
            raise DimensionMismatchError("forward requires at least one positive patch")
        p_pos = self.net.embed_patches(torch.stack(batch.positives))
        p_neg = (
            self.net.embed_patches(torch.stack(batch.negatives)) if batch.negatives else None
        )
        encoded = self.net.encode(images)
        probs_p, boxes_p = self.net.decode(encoded, p_pos)
        positive = [
            DetectionSet(probs_p[i, :, 0], boxes_p[i], POSITIVE_STREAM)
            for i in range(images.shape[0])
        ]
        negative = None
        if p_neg is not None:
            probs_n, boxes_n = self.net.decode(encoded, p_neg)
            negative = [
                DetectionSet(probs_n[i, :, 0], boxes_n[i], NEGATIVE_STREAM)
                for i in range(images.shape[0])
            ]
        return positive, negative


@dataclass(frozen=True)
class StepParams:
    """Everything a training step needs besides the data."""

    loss_weights: LossWeights = LossWeights()
    focal: FocalParams = FocalParams()
    soft_sampling: SoftSamplingParams = SoftSamplingParams()
    n_pos: int = 4
    n_neg: int = 4
    augment: AugmentConfig = AugmentConfig()


def augment_scene(
    image: Tensor, record: ImageRecord, generator: torch.Generator
) -> tuple[Tensor, ImageRecord]:
    """Training-time scene augmentation: random horizontal/vertical flips
    (boxes transformed accordingly) plus brightness/contrast jitter."""
    flip_h = bool(torch.rand(1, generator=generator) < 0.5)
    flip_v = bool(torch.rand(1, generator=generator) < 0.5)
    dims = []
    if flip_h:
        dims.append(2)
    if flip_v:
        dims.append(1)
    if dims:
        image = torch.flip(image, dims=dims)
        anns = []
        for a in record.annotations:
            x, y, w, h = a.bbox
            if flip_h:
                x = record.width - x - w
            if flip_v:
                y = record.height - y - h
            anns.append(
                Annotation(
                    a.annotation_id, a.image_id, a.category_id, (x, y, w, h),
                    a.score, a.source, dict(a.extra),
                )
            )
        record = ImageRecord(
            record.image_id, record.file_path, record.width, record.height,
            tuple(anns), dict(record.extra),
        )
    brightness = 1.0 + (float(torch.rand(1, generator=generator)) - 0.5) * 0.4
    shift = (float(torch.rand(1, generator=generator)) - 0.5) * 0.1
    image = (image * brightness + shift).clamp(0.0, 1.0)
    return image, record


def class_gt_boxes(record: ImageRecord, category_id: int | None = None) -> Tensor:
    """Normalized cxcywh boxes of the record, optionally one class only."""
    anns: list[Annotation] = [
        a
        for a in record.annotations
        if category_id is None or a.category_id == category_id
    ]
    if not anns:
        return torch.zeros((0, 4))
    rows = []
    for a in anns:
        box = abs_xywh_to_norm_cxcywh(a.bbox, record.width, record.height)
        rows.append([box.cx, box.cy, box.w, box.h])
    return torch.tensor(rows, dtype=torch.float32)


def train_step(
    model: CompleterModel,
    record: ImageRecord,
    image: Tensor,
    pool: QueryPool,
    params: StepParams,
    optimizer: torch.optim.Optimizer,
    generator: torch.Generator,
) -> float:
    """One optimizer update on one image.

    Samples a target class uniformly among the classes annotated in the
    image, builds the query-patch batch, runs both streams, and applies the
    composite loss: target-class boxes supervise the positive stream
    (labeled 1), the negative stream is supervised as all-background.
    Returns the pre-update loss.
    """
    model.require_initialized()
    classes = sorted({a.category_id for a in record.annotations})
    if not classes:
        raise NoAnnotationsError(f"image {record.image_id} has no annotations")
    target = classes[int(torch.randint(0, len(classes), (1,), generator=generator))]
    batch = sample_query_patches(
        pool,
        target,
        params.n_pos,
        params.n_neg,
        model.cfg.patch_size,
        generator,
        augment=True,
        aug=params.augment,
    )
    positive, negative = model.forward(image.unsqueeze(0), batch)
    gts = class_gt_boxes(record, target)
    all_boxes = class_gt_boxes(record)
    loss, _ = completr_loss(
        positive[0].probs,
        positive[0].boxes,
        gts,
        params.loss_weights,
        params.focal,
        params.soft_sampling,
        overlap_boxes=all_boxes,
    )
    if negative is not None:
        neg_loss, _ = completr_loss(
            negative[0].probs,
            negative[0].boxes,
            torch.zeros((0, 4)),
            params.loss_weights,
            params.focal,
            sp=None,
        )
        loss = loss + neg_loss
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())
