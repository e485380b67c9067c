"""Seeded training loop for the completer and checkpoint glue."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import torch

from .checkpoint import (
    Checkpoint,
    generator_state_bytes,
    pack_model,
    pack_optimizer,
)
from .data import Dataset, ImageStore
from .errors import IncompatibleCheckpointError
from .model import CompleterModel, ModelConfig, StepParams, augment_scene, train_step
from .patches import QueryPool, build_query_pool, to_tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr_transformer: float = 2e-4
    lr_backbone: float = 2e-5
    weight_decay: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_decay_at: float = 0.8  # fraction of total epochs
    seed: int = 0
    freeze_backbone: bool = False
    scene_augment: bool = True  # random flips + photometric jitter
    step: StepParams = field(default_factory=StepParams)


def make_optimizer(model: CompleterModel, cfg: TrainConfig) -> torch.optim.Optimizer:
    backbone_ids = {id(p) for p in model.net.backbone.parameters()}
    backbone = [p for p in model.net.parameters() if id(p) in backbone_ids]
    rest = [p for p in model.net.parameters() if id(p) not in backbone_ids]
    return torch.optim.AdamW(
        [
            {"params": rest, "lr": cfg.lr_transformer},
            {"params": backbone, "lr": cfg.lr_backbone},
        ],
        weight_decay=cfg.weight_decay,
    )


def train_completer(
    model: CompleterModel,
    ds: Dataset,
    store: ImageStore,
    cfg: TrainConfig,
    pool: QueryPool | None = None,
) -> list[float]:
    """Run the per-image training loop; returns the per-step loss history."""
    model.set_backbone_frozen(cfg.freeze_backbone)
    if pool is None:
        pool = build_query_pool(ds, store)
    optimizer = make_optimizer(model, cfg)
    generator = torch.Generator().manual_seed(cfg.seed)
    records = [img for img in ds.images if img.annotations]
    if not records:
        return []
    decay_epoch = int(cfg.epochs * cfg.lr_decay_at)
    history: list[float] = []
    for epoch in range(cfg.epochs):
        if cfg.epochs > 1 and epoch == decay_epoch and cfg.lr_decay_factor != 1.0:
            for group in optimizer.param_groups:
                group["lr"] *= cfg.lr_decay_factor
        order = torch.randperm(len(records), generator=generator).tolist()
        epoch_loss = 0.0
        for idx in order:
            record = records[idx]
            image = to_tensor(store.pixels(record))
            if cfg.scene_augment:
                image, record = augment_scene(image, record, generator)
            loss = train_step(model, record, image, pool, cfg.step, optimizer, generator)
            history.append(loss)
            epoch_loss += loss
        logger.debug("epoch %d: mean loss %.4f", epoch, epoch_loss / len(records))
    return history


def completer_checkpoint(
    model: CompleterModel,
    meta: dict,
    optimizer: torch.optim.Optimizer | None = None,
    generator: torch.Generator | None = None,
) -> tuple[dict[str, torch.Tensor], dict, dict, list | None, bytes | None]:
    """Assemble the (tensors, config, meta, groups, rng) tuple for saving."""
    tensors = pack_model(model.net)
    groups = None
    if optimizer is not None:
        opt_tensors, groups = pack_optimizer(optimizer)
        tensors.update(opt_tensors)
    rng = generator_state_bytes(generator) if generator is not None else None
    return tensors, {"model": model.cfg.to_dict()}, meta, groups, rng


def model_from_checkpoint(ckpt: Checkpoint) -> CompleterModel:
    if "model" not in ckpt.config:
        raise IncompatibleCheckpointError("checkpoint lacks a model config")
    cfg = ModelConfig.from_dict(ckpt.config["model"])
    model = CompleterModel(cfg, seed=int(ckpt.meta.get("init_seed", 0)))
    state = ckpt.model_state()
    try:
        model.net.load_state_dict(state)
    except RuntimeError as exc:
        raise IncompatibleCheckpointError(f"weights do not fit the model config: {exc}") from exc
    return model
