"""Pluggable downstream detectors.

Any detector that implements ``train``/``predict`` over the shared dataset
types can consume completed annotations. The built-in ``toy_detr`` plugin
is a single-stream multi-class version of the same set-prediction network
(no query conditioning).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import torch
from torch import Tensor

from .checkpoint import Checkpoint, generator_state_bytes, pack_model
from .data import Annotation, Dataset, ImageStore
from .errors import (
    EmptyDetectionsError,
    IncompatibleCheckpointError,
    UnknownPluginError,
)
from .geometry import norm_cxcywh_to_abs_xywh, Box, pairwise_giou, pairwise_iou, elementwise_giou
from .losses import FocalParams, LossWeights, PROB_EPS, SoftSamplingParams, soft_sampling_weight
from .matching import hungarian_match
from .model import ModelConfig, SetPredictionNet, augment_scene, class_gt_boxes
from .patches import to_tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectorTrainConfig:
    epochs: int = 10
    lr: float = 5e-4  # small rate; large ones overfit to missing annotations
    weight_decay: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_decay_at: float = 0.8
    seed: int = 0
    scene_augment: bool = True
    loss_weights: LossWeights = field(default_factory=LossWeights)
    focal: FocalParams = field(default_factory=FocalParams)
    soft_sampling: SoftSamplingParams | None = None  # optional mitigation


@runtime_checkable
class DetectorPlugin(Protocol):
    name: str

    def train(self, ds: Dataset, store: ImageStore, cfg: DetectorTrainConfig) -> Checkpoint:
        ...

    def predict(
        self, ds: Dataset, store: ImageStore, ckpt: Checkpoint
    ) -> dict[int, list[tuple[int, float, tuple[float, float, float, float]]]]:
        ...


_REGISTRY: dict[str, DetectorPlugin] = {}


def register_detector(plugin: DetectorPlugin) -> DetectorPlugin:
    _REGISTRY[plugin.name] = plugin
    return plugin


def get_detector(name: str) -> DetectorPlugin:
    if name not in _REGISTRY:
        raise UnknownPluginError(
            f"no detector plugin {name!r}; registered: {sorted(_REGISTRY)}"
        )
    return _REGISTRY[name]


def registered_detectors() -> list[str]:
    return sorted(_REGISTRY)


def multiclass_detection_loss(
    probs: Tensor,
    boxes: Tensor,
    gt_classes: Tensor,
    gt_boxes: Tensor,
    lw: LossWeights,
    fp: FocalParams,
    sp: SoftSamplingParams | None = None,
) -> Tensor:
    """Hungarian-matched multi-class focal + L1 + GIoU loss for one image.

    ``probs`` is (N, C) per-class probabilities; ``gt_classes`` holds 0-based
    class indices. Unmatched detections are supervised as all-background,
    optionally down-weighted by overlap like the completer loss.
    """
    n = probs.shape[0]
    if n == 0:
        raise EmptyDetectionsError("loss requires at least one detection")
    m = gt_boxes.shape[0]
    if m > 0:
        with torch.no_grad():
            p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
            pos = fp.alpha * (1.0 - p) ** fp.gamma * (-torch.log(p))
            neg = (1.0 - fp.alpha) * p**fp.gamma * (-torch.log(1.0 - p))
            cls_cost = (pos - neg)[:, gt_classes]
            l1_cost = torch.cdist(boxes, gt_boxes, p=1)
            giou_cost = 1.0 - pairwise_giou(boxes, gt_boxes)
            cost = lw.lambda_cls * cls_cost + lw.lambda_l1 * l1_cost + lw.lambda_giou * giou_cost
        assignment = hungarian_match(cost)
    else:
        assignment = {}

    targets = torch.zeros_like(probs)
    for det_i, gt_j in assignment.items():
        targets[det_i, int(gt_classes[gt_j])] = 1.0

    p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    focal_pos = -fp.alpha * (1.0 - p) ** fp.gamma * torch.log(p)
    focal_neg = -(1.0 - fp.alpha) * p**fp.gamma * torch.log(1.0 - p)
    per_entry = targets * focal_pos + (1.0 - targets) * focal_neg

    weights = torch.ones(n, dtype=probs.dtype)
    if sp is not None and m > 0:
        with torch.no_grad():
            overlaps = pairwise_iou(boxes, gt_boxes).max(dim=1).values
        weights = soft_sampling_weight(overlaps, sp).to(probs.dtype)
        for det_i in assignment:
            weights[det_i] = 1.0
    cls_loss = (weights[:, None] * per_entry).sum()

    if assignment:
        det_idx = sorted(assignment)
        det_sel = boxes[det_idx]
        gt_sel = gt_boxes[[assignment[i] for i in det_idx]]
        l1 = torch.abs(det_sel - gt_sel).sum()
        giou_loss = (1.0 - elementwise_giou(det_sel, gt_sel)).sum()
        box_loss = lw.lambda_l1 * l1 + lw.lambda_giou * giou_loss
    else:
        box_loss = torch.zeros((), dtype=probs.dtype)
    return lw.lambda_cls * cls_loss + lw.lambda_box * box_loss


class ToyDetrPlugin:
    """Single-stream set-prediction detector with a multi-class focal head."""

    name = "toy_detr"

    def __init__(self, model_cfg: ModelConfig | None = None):
        self.model_cfg = model_cfg

    def _make_net(self, n_classes: int, cfg_dict: dict | None, seed: int) -> SetPredictionNet:
        base = self.model_cfg or ModelConfig()
        if cfg_dict is not None:
            base = ModelConfig.from_dict(cfg_dict)
        model_cfg = ModelConfig(
            n_queries=base.n_queries,
            query_dim=base.query_dim,
            backbone_channels=base.backbone_channels,
            n_encoder_layers=base.n_encoder_layers,
            n_decoder_layers=base.n_decoder_layers,
            n_heads=base.n_heads,
            ffn_dim=base.ffn_dim,
            patch_size=base.patch_size,
            n_classes=n_classes,
        )
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            net = SetPredictionNet(model_cfg)
        return net

    def train(self, ds: Dataset, store: ImageStore, cfg: DetectorTrainConfig) -> Checkpoint:
        class_ids = sorted(ds.categories)
        class_to_slot = {cid: i for i, cid in enumerate(class_ids)}
        net = self._make_net(len(class_ids), self.model_cfg.to_dict() if self.model_cfg else None, cfg.seed)
        optimizer = torch.optim.AdamW(net.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
        generator = torch.Generator().manual_seed(cfg.seed)
        records = [img for img in ds.images if img.annotations]
        decay_epoch = int(cfg.epochs * cfg.lr_decay_at)
        for epoch in range(cfg.epochs):
            if cfg.epochs > 1 and epoch == decay_epoch and cfg.lr_decay_factor != 1.0:
                for group in optimizer.param_groups:
                    group["lr"] *= cfg.lr_decay_factor
            order = torch.randperm(len(records), generator=generator).tolist()
            for idx in order:
                record = records[idx]
                image = to_tensor(store.pixels(record))
                if cfg.scene_augment:
                    image, record = augment_scene(image, record, generator)
                image = image.unsqueeze(0)
                encoded = net.encode(image)
                probs, boxes = net.decode(encoded, None)
                gt_boxes = class_gt_boxes(record)
                gt_classes = torch.tensor(
                    [class_to_slot[a.category_id] for a in record.annotations],
                    dtype=torch.long,
                )
                loss = multiclass_detection_loss(
                    probs[0], boxes[0], gt_classes, gt_boxes,
                    cfg.loss_weights, cfg.focal, cfg.soft_sampling,
                )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
        tensors = pack_model(net)
        return Checkpoint(
            config={
                "model": net.cfg.to_dict(),
                "classes": class_ids,
            },
            meta={"plugin": self.name, "seed": cfg.seed, "epochs": cfg.epochs},
            tensors=tensors,
            rng_state=generator_state_bytes(generator),
        )

    def predict(
        self, ds: Dataset, store: ImageStore, ckpt: Checkpoint
    ) -> dict[int, list[tuple[int, float, tuple[float, float, float, float]]]]:
        if ckpt.meta.get("plugin") != self.name:
            raise IncompatibleCheckpointError(
                f"checkpoint was produced by {ckpt.meta.get('plugin')!r}, not {self.name!r}"
            )
        class_ids = [int(c) for c in ckpt.config["classes"]]
        net = self._make_net(len(class_ids), ckpt.config.get("model"), seed=0)
        net.load_state_dict(ckpt.model_state())
        net.eval()
        out: dict[int, list[tuple[int, float, tuple[float, float, float, float]]]] = {}
        with torch.no_grad():
            for record in ds.images:
                image = to_tensor(store.pixels(record)).unsqueeze(0)
                encoded = net.encode(image)
                probs, boxes = net.decode(encoded, None)
                scores, slots = probs[0].max(dim=1)
                dets = []
                for q in range(scores.shape[0]):
                    box = Box(*boxes[0, q].tolist())
                    bbox = norm_cxcywh_to_abs_xywh(box, record.width, record.height)
                    if bbox[2] <= 0 or bbox[3] <= 0:
                        continue
                    dets.append((class_ids[int(slots[q])], float(scores[q]), bbox))
                dets.sort(key=lambda d: (-d[1], d[0]))
                out[record.image_id] = dets
        return out


register_detector(ToyDetrPlugin())
