"""The decoupled five-stage workflow: pretrain -> fine-tune -> complete ->
train detector -> optional pseudo-labeling, plus sampling and reporting.

Every stage is a pure function of (inputs, config, seed); artifacts are
persisted per stage so any stage can be rerun from disk reproducibly.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import torch

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    Annotation,
    Dataset,
    ImageRecord,
    ImageStore,
    dataset_stats,
    load_dataset,
    save_dataset,
)
from .detector import DetectorTrainConfig, get_detector
from .errors import (
    ConfigInvalidError,
    EmptyPartialDatasetError,
    StageError,
)
from .evaluation import completion_quality, score_cdf
from .geometry import Box, iou, norm_cxcywh_to_abs_xywh
from .losses import FocalParams, LossWeights, SoftSamplingParams
from .model import CompleterModel, ModelConfig, StepParams
from .patches import QueryPool, build_query_pool, preprocess_patch, to_tensor
from .sampling import (
    PARTIAL_ANNOTATIONS,
    PARTIAL_IMAGES,
    SamplingSpec,
    sample_partial_annotations,
    sample_partial_images,
)
from .training import (
    TrainConfig,
    completer_checkpoint,
    model_from_checkpoint,
    train_completer,
)

REPORT_SCHEMA_VERSION = 1
STAGES = ("sample", "pretrain", "finetune", "complete", "train-detector", "pseudo-label")

# detection candidates below this score are never kept
MIN_CANDIDATE_SCORE = 0.01


@dataclass(frozen=True)
class StageEpochs:
    pretrain: int = 10
    finetune: int = 10
    detector: int = 10


@dataclass(frozen=True)
class PipelineConfig:
    image_root: str = "."
    work_dir: str | None = None
    full_annotations: str | None = None
    partial_annotations: str | None = None
    stages: tuple[str, ...] = ("pretrain", "finetune", "complete", "train-detector")
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: StageEpochs = field(default_factory=StageEpochs)
    lr_transformer: float = 2e-4
    lr_backbone: float = 2e-5
    lr_detector: float = 5e-4
    completion_threshold: float = 0.3
    pseudo_threshold: float = 0.7
    merge_iou: float = 0.5
    detector_spec: str = "toy_detr"
    loss_weights: LossWeights = field(default_factory=LossWeights)
    focal: FocalParams = field(default_factory=FocalParams)
    soft_sampling: SoftSamplingParams = field(default_factory=SoftSamplingParams)
    n_pos: int = 1
    n_neg: int = 1
    pool_embed_cap: int = 64  # patches averaged per class at inference
    sample_mode: str = PARTIAL_ANNOTATIONS
    sample_fraction: float = 0.1

    def __post_init__(self):
        for name in ("completion_threshold", "pseudo_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigInvalidError(f"{name} {v} outside (0, 1)")
        if not 0.0 < self.merge_iou <= 1.0:
            raise ConfigInvalidError(f"merge_iou {self.merge_iou} outside (0, 1]")
        unknown = set(self.stages) - set(STAGES)
        if unknown:
            raise ConfigInvalidError(f"unknown stages: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {
            "image_root": self.image_root,
            "work_dir": self.work_dir,
            "full_annotations": self.full_annotations,
            "partial_annotations": self.partial_annotations,
            "stages": list(self.stages),
            "seed": self.seed,
            "model": self.model.to_dict(),
            "epochs": {
                "pretrain": self.epochs.pretrain,
                "finetune": self.epochs.finetune,
                "detector": self.epochs.detector,
            },
            "lr_transformer": self.lr_transformer,
            "lr_backbone": self.lr_backbone,
            "lr_detector": self.lr_detector,
            "completion_threshold": self.completion_threshold,
            "pseudo_threshold": self.pseudo_threshold,
            "merge_iou": self.merge_iou,
            "detector_spec": self.detector_spec,
            "loss_weights": vars(self.loss_weights),
            "focal": vars(self.focal),
            "soft_sampling": vars(self.soft_sampling),
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "pool_embed_cap": self.pool_embed_cap,
            "sample_mode": self.sample_mode,
            "sample_fraction": self.sample_fraction,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        kwargs = dict(data)
        if "model" in kwargs:
            kwargs["model"] = ModelConfig.from_dict(kwargs["model"])
        if "epochs" in kwargs:
            kwargs["epochs"] = StageEpochs(**kwargs["epochs"])
        if "stages" in kwargs:
            kwargs["stages"] = tuple(kwargs["stages"])
        if "loss_weights" in kwargs:
            kwargs["loss_weights"] = LossWeights(**kwargs["loss_weights"])
        if "focal" in kwargs:
            kwargs["focal"] = FocalParams(**kwargs["focal"])
        if "soft_sampling" in kwargs:
            kwargs["soft_sampling"] = SoftSamplingParams(**kwargs["soft_sampling"])
        valid = set(cls().to_dict())
        unknown = set(kwargs) - valid
        if unknown:
            raise ConfigInvalidError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kwargs)


def resolve_work_dir(cfg: PipelineConfig) -> str:
    cache = os.environ.get("COMPLETR_CACHE")
    work = cfg.work_dir
    if work is None:
        work = cache or os.path.join(".", "completr_cache")
    elif not os.path.isabs(work) and cache:
        work = os.path.join(cache, work)
    os.makedirs(work, exist_ok=True)
    return work


def _step_params(cfg: PipelineConfig) -> StepParams:
    return StepParams(
        loss_weights=cfg.loss_weights,
        focal=cfg.focal,
        soft_sampling=cfg.soft_sampling,
        n_pos=cfg.n_pos,
        n_neg=cfg.n_neg,
    )


def _train_config(cfg: PipelineConfig, epochs: int, freeze_backbone: bool) -> TrainConfig:
    return TrainConfig(
        epochs=epochs,
        lr_transformer=cfg.lr_transformer,
        lr_backbone=cfg.lr_backbone,
        seed=cfg.seed,
        freeze_backbone=freeze_backbone,
        step=_step_params(cfg),
    )


def pretrain(cfg: PipelineConfig, full_ds: Dataset, store: ImageStore) -> Checkpoint:
    """Stage 1: learn the completion task on a fully annotated dataset with
    the backbone frozen. Done once; reusable across target datasets."""
    model = CompleterModel(cfg.model, seed=cfg.seed)
    history = train_completer(
        model, full_ds, store, _train_config(cfg, cfg.epochs.pretrain, freeze_backbone=True)
    )
    tensors, config, meta, groups, rng = completer_checkpoint(
        model,
        meta={
            "stage": "pretrain",
            "init_seed": cfg.seed,
            "epochs": cfg.epochs.pretrain,
            "n_steps": len(history),
            "final_loss": history[-1] if history else None,
        },
    )
    return Checkpoint(config=config, meta=meta, tensors=tensors, optimizer_groups=groups, rng_state=rng)


def finetune(
    cfg: PipelineConfig, partial_ds: Dataset, store: ImageStore, ckpt: Checkpoint
) -> Checkpoint:
    """Stage 2: unfreeze the backbone and adapt to the partial target data."""
    if partial_ds.n_annotations == 0:
        raise EmptyPartialDatasetError("fine-tuning needs a nonempty partial dataset")
    model = model_from_checkpoint(ckpt)
    history = train_completer(
        model, partial_ds, store, _train_config(cfg, cfg.epochs.finetune, freeze_backbone=False)
    )
    tensors, config, meta, groups, rng = completer_checkpoint(
        model,
        meta={
            "stage": "finetune",
            "init_seed": int(ckpt.meta.get("init_seed", cfg.seed)),
            "epochs": cfg.epochs.finetune,
            "n_steps": len(history),
            "final_loss": history[-1] if history else None,
        },
    )
    return Checkpoint(config=config, meta=meta, tensors=tensors, optimizer_groups=groups, rng_state=rng)


def class_pool_embeddings(
    model: CompleterModel, pool: QueryPool, cfg: PipelineConfig
) -> dict[int, torch.Tensor]:
    """Mean patch embedding per class over (up to a cap of) the pool's crops.

    Inference-side conditioning: no augmentation, seeded subsampling, so the
    embeddings are a deterministic function of (pool, config, seed)."""
    generator = torch.Generator().manual_seed(cfg.seed)
    out: dict[int, torch.Tensor] = {}
    with torch.no_grad():
        for category_id in pool.classes():
            patches = pool.patches_by_class[category_id]
            if len(patches) > cfg.pool_embed_cap:
                idx = torch.randperm(len(patches), generator=generator)[: cfg.pool_embed_cap]
                patches = [patches[int(i)] for i in sorted(idx.tolist())]
            tensors = torch.stack(
                [
                    preprocess_patch(p, model.cfg.patch_size, augment=False)
                    for p in patches
                ]
            )
            out[category_id] = model.net.embed_patches(tensors)
    return out


def predict_completions(
    ckpt: Checkpoint, partial_ds: Dataset, store: ImageStore, cfg: PipelineConfig
) -> dict[int, list[tuple[int, float, tuple[float, float, float, float]]]]:
    """Run class-conditioned inference per image; returns raw scored
    candidates (category_id, score, absolute xywh) above a minimal score."""
    if partial_ds.n_annotations == 0:
        raise EmptyPartialDatasetError("completion needs a nonempty partial dataset")
    model = model_from_checkpoint(ckpt)
    model.net.eval()
    pool = build_query_pool(partial_ds, store)
    embeddings = class_pool_embeddings(model, pool, cfg)
    candidates: dict[int, list] = {}
    with torch.no_grad():
        for record in partial_ds.images:
            classes = sorted({a.category_id for a in record.annotations})
            if not classes:
                continue
            image = torch.stack([_image_tensor(store, record)])
            encoded = model.net.encode(image)
            dets: list[tuple[int, float, tuple]] = []
            for category_id in classes:
                probs, boxes = model.net.decode(encoded, embeddings[category_id])
                scores = probs[0, :, 0]
                for q in range(scores.shape[0]):
                    score = float(scores[q])
                    if score < MIN_CANDIDATE_SCORE:
                        continue
                    bbox = norm_cxcywh_to_abs_xywh(
                        Box(*boxes[0, q].tolist()), record.width, record.height
                    )
                    if bbox[2] <= 0 or bbox[3] <= 0:
                        continue
                    dets.append((category_id, score, bbox))
            candidates[record.image_id] = dets
    return candidates


def merge_detections(
    ds: Dataset,
    candidates: dict[int, list[tuple[int, float, tuple[float, float, float, float]]]],
    threshold: float,
    merge_iou: float,
    source: str,
) -> Dataset:
    """Filter candidates by score, drop those overlapping a same-class
    existing annotation at >= merge_iou, apply per-class NMS among the
    survivors, and append them with the given provenance. Existing
    annotations are never mutated."""
    next_id = ds.max_annotation_id() + 1
    new_images: list[ImageRecord] = []
    for record in ds.images:
        dets = [d for d in candidates.get(record.image_id, []) if d[1] >= threshold]
        dets.sort(key=lambda d: (-d[1], d[0], d[2]))
        existing = [
            (a.category_id, _to_box(a.bbox)) for a in record.annotations
        ]
        accepted: list[tuple[int, float, tuple]] = []
        for category_id, score, bbox in dets:
            box = _to_box(bbox)
            if any(
                cid == category_id and iou(box, other) >= merge_iou
                for cid, other in existing
            ):
                continue
            if any(
                cid == category_id and iou(box, _to_box(b)) >= merge_iou
                for cid, _s, b in accepted
            ):
                continue
            accepted.append((category_id, score, bbox))
        annotations = list(record.annotations)
        for category_id, score, bbox in accepted:
            annotations.append(
                Annotation(
                    annotation_id=next_id,
                    image_id=record.image_id,
                    category_id=category_id,
                    bbox=tuple(float(v) for v in bbox),
                    score=score,
                    source=source,
                )
            )
            next_id += 1
        new_images.append(
            ImageRecord(
                image_id=record.image_id,
                file_path=record.file_path,
                width=record.width,
                height=record.height,
                annotations=tuple(annotations),
                extra=dict(record.extra),
            )
        )
    note = f"{source} threshold={threshold} merge_iou={merge_iou}"
    provenance = f"{ds.provenance} | {note}" if ds.provenance else note
    return Dataset(tuple(new_images), dict(ds.categories), provenance, dict(ds.extra))


def complete_annotations(
    ckpt: Checkpoint, partial_ds: Dataset, store: ImageStore, cfg: PipelineConfig
) -> Dataset:
    """Stage 3: predict missing boxes and merge them into the partial set."""
    candidates = predict_completions(ckpt, partial_ds, store, cfg)
    return merge_detections(
        partial_ds, candidates, cfg.completion_threshold, cfg.merge_iou, "completed"
    )


def train_detector(
    plugin_name: str, ds: Dataset, store: ImageStore, cfg: PipelineConfig
) -> Checkpoint:
    """Stage 4: train the configured off-the-shelf detector on the dataset."""
    plugin = get_detector(plugin_name)
    det_cfg = DetectorTrainConfig(
        epochs=cfg.epochs.detector,
        lr=cfg.lr_detector,
        seed=cfg.seed,
        loss_weights=cfg.loss_weights,
        focal=cfg.focal,
    )
    return plugin.train(ds, store, det_cfg)


def pseudo_label(
    det_ckpt: Checkpoint, ds: Dataset, store: ImageStore, cfg: PipelineConfig
) -> Dataset:
    """Stage 5: merge the detector's confident predictions as pseudo labels."""
    plugin = get_detector(str(det_ckpt.meta.get("plugin", cfg.detector_spec)))
    predictions = plugin.predict(ds, store, det_ckpt)
    return merge_detections(ds, predictions, cfg.pseudo_threshold, cfg.merge_iou, "pseudo")


def _to_box(bbox: tuple[float, float, float, float]) -> Box:
    x, y, w, h = bbox
    return Box(x + w / 2, y + h / 2, w, h)


def _image_tensor(store: ImageStore, record: ImageRecord) -> torch.Tensor:
    return to_tensor(store.pixels(record))


def _stats_dict(ds: Dataset) -> dict:
    stats = dataset_stats(ds)
    return {
        "n_images": stats.n_images,
        "n_annotations": stats.n_annotations,
        "avg_per_image": stats.avg_per_image,
        "dense": stats.dense,
        "per_class": {str(k): v for k, v in sorted(stats.per_class_counts.items())},
    }


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Execute the configured stages in order, persisting every artifact and
    a JSON report. Stage failures are annotated with the stage name."""
    work = resolve_work_dir(cfg)
    store = ImageStore(cfg.image_root)
    report: dict = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "stages": {},
        "timestamps": {"started": time.time()},
    }
    full_ds = load_dataset(cfg.full_annotations) if cfg.full_annotations else None
    partial_ds = (
        load_dataset(cfg.partial_annotations) if cfg.partial_annotations else None
    )
    completer_ckpt: Checkpoint | None = None
    detector_ckpt: Checkpoint | None = None
    current_ds = partial_ds

    for stage in cfg.stages:
        try:
            if stage == "sample":
                if full_ds is None:
                    raise ConfigInvalidError("sample stage needs full_annotations")
                spec = SamplingSpec(cfg.sample_fraction, cfg.seed, cfg.sample_mode)
                if cfg.sample_mode == PARTIAL_IMAGES:
                    sampled, unlabeled = sample_partial_images(full_ds, spec)
                    unlabeled_path = os.path.join(work, "unlabeled.json")
                    save_dataset(unlabeled, unlabeled_path)
                else:
                    sampled = sample_partial_annotations(full_ds, spec)
                partial_path = os.path.join(work, "partial.json")
                save_dataset(sampled, partial_path)
                partial_ds = current_ds = sampled
                report["stages"]["sample"] = {
                    "mode": cfg.sample_mode,
                    "fraction": cfg.sample_fraction,
                    "kept_annotations": sampled.n_annotations,
                    "kept_images": sampled.n_images,
                    "source_annotations": full_ds.n_annotations,
                    "stats": _stats_dict(sampled),
                    "path": partial_path,
                }
            elif stage == "pretrain":
                if full_ds is None:
                    raise ConfigInvalidError("pretrain stage needs full_annotations")
                completer_ckpt = pretrain(cfg, full_ds, store)
                path = os.path.join(work, "pretrained.ckpt")
                _save(completer_ckpt, path)
                report["stages"]["pretrain"] = {
                    "epochs": cfg.epochs.pretrain,
                    "final_loss": completer_ckpt.meta.get("final_loss"),
                    "path": path,
                }
            elif stage == "finetune":
                if partial_ds is None:
                    raise ConfigInvalidError("finetune stage needs partial_annotations")
                if completer_ckpt is None:
                    completer_ckpt = load_checkpoint(os.path.join(work, "pretrained.ckpt"))
                completer_ckpt = finetune(cfg, partial_ds, store, completer_ckpt)
                path = os.path.join(work, "finetuned.ckpt")
                _save(completer_ckpt, path)
                report["stages"]["finetune"] = {
                    "epochs": cfg.epochs.finetune,
                    "final_loss": completer_ckpt.meta.get("final_loss"),
                    "path": path,
                }
            elif stage == "complete":
                if partial_ds is None:
                    raise ConfigInvalidError("complete stage needs partial_annotations")
                if completer_ckpt is None:
                    completer_ckpt = load_checkpoint(os.path.join(work, "finetuned.ckpt"))
                candidates = predict_completions(completer_ckpt, partial_ds, store, cfg)
                completed = merge_detections(
                    partial_ds, candidates,
                    cfg.completion_threshold, cfg.merge_iou, "completed",
                )
                path = os.path.join(work, "completed.json")
                save_dataset(completed, path)
                current_ds = completed
                scores = [
                    score for dets in candidates.values() for _, score, _ in dets
                ]
                stage_report = {
                    "threshold": cfg.completion_threshold,
                    "merge_iou": cfg.merge_iou,
                    "n_original": partial_ds.n_annotations,
                    "n_completed": completed.n_annotations - partial_ds.n_annotations,
                    "stats": _stats_dict(completed),
                    "path": path,
                }
                if scores:
                    stage_report["score_cdf"] = score_cdf(scores)
                if full_ds is not None:
                    gt = full_ds.subset_images({i.image_id for i in completed.images})
                    stage_report["completion_quality_ap50"] = completion_quality(completed, gt)
                    stage_report["partial_quality_ap50"] = completion_quality(partial_ds, gt)
                report["stages"]["complete"] = stage_report
            elif stage == "train-detector":
                if current_ds is None:
                    raise ConfigInvalidError("train-detector stage needs a dataset")
                detector_ckpt = train_detector(cfg.detector_spec, current_ds, store, cfg)
                path = os.path.join(work, "detector.ckpt")
                _save(detector_ckpt, path)
                report["stages"]["train-detector"] = {
                    "plugin": cfg.detector_spec,
                    "epochs": cfg.epochs.detector,
                    "trained_on": current_ds.provenance,
                    "path": path,
                }
            elif stage == "pseudo-label":
                if current_ds is None:
                    raise ConfigInvalidError("pseudo-label stage needs a dataset")
                if detector_ckpt is None:
                    detector_ckpt = load_checkpoint(os.path.join(work, "detector.ckpt"))
                pseudo = pseudo_label(detector_ckpt, current_ds, store, cfg)
                path = os.path.join(work, "pseudo.json")
                save_dataset(pseudo, path)
                report["stages"]["pseudo-label"] = {
                    "threshold": cfg.pseudo_threshold,
                    "n_before": current_ds.n_annotations,
                    "n_after": pseudo.n_annotations,
                    "stats": _stats_dict(pseudo),
                    "path": path,
                }
                current_ds = pseudo
        except Exception as exc:
            raise StageError(stage, exc) from exc

    report["timestamps"]["finished"] = time.time()
    report_path = os.path.join(work, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return report


def _save(ckpt: Checkpoint, path: str) -> None:
    save_checkpoint(
        path,
        ckpt.tensors,
        ckpt.config,
        ckpt.meta,
        optimizer_groups=ckpt.optimizer_groups,
        rng_state=ckpt.rng_state,
    )
