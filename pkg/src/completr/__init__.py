"""completr: annotation completion for partially annotated dense-scene
detection datasets, plus the downstream detector-training workflow."""

from .data import (
    Annotation,
    Dataset,
    DatasetStats,
    ImageRecord,
    ImageStore,
    QueryPatch,
    crop_patch,
    dataset_stats,
    load_dataset,
    save_dataset,
)
from .evaluation import ApReport, PRCurve, ap50, completion_quality, score_cdf
from .geometry import Box, giou, iou
from .losses import (
    FocalParams,
    LossWeights,
    MatchResult,
    SoftSamplingParams,
    completr_loss,
    focal_binary_loss,
    match_cost,
    soft_sampling_weight,
)
from .matching import hungarian_match
from .model import CompleterModel, DetectionSet, ModelConfig
from .pipeline import (
    PipelineConfig,
    complete_annotations,
    finetune,
    pretrain,
    pseudo_label,
    run_pipeline,
    train_detector,
)
from .sampling import SamplingSpec, sample_partial_annotations, sample_partial_images
from .synthetic import SynthConfig, generate_synthetic_dense

__version__ = "0.1.0"
