"""Confidence-weighted, boundary-aware semi-supervised semantic segmentation.

A desk-scale teacher-student pipeline: the teacher pseudo-labels unlabeled
images with per-pixel confidences, a logistic threshold driven by batch mean
confidence filters them, kept pixels are weighted by confidence in the
student's loss, low-confidence pixels decay over epochs, and a Sobel-derived
boundary term sharpens object edges. Pure numpy/scipy throughout.
"""

from .augment import AugmentConfig, StrongAugmentConfig, augment
from .boundary import boundary_from_labels, boundary_mask, gradient_magnitude, sobel_gradients
from .core import IGNORE_INDEX, ConfigError, SegBatch, SegSample, TrainingAbort
from .data import (
    DatasetSpec,
    SplitSpec,
    generate_synthetic_dataset,
    load_segmentation_dataset,
    make_splits,
)
from .losses import LossConfig, LossReport, boundary_loss, confidence_weighted_ce, labeled_ce
from .metrics import ConfusionMatrix, EvalResult, evaluate, mean_iou, per_class_iou
from .model import ReferenceModel, SegmentationModel, SGD
from .pseudo import (
    DecayConfig,
    PseudoLabelState,
    ThresholdState,
    apply_confidence_decay,
    batch_mean_confidence,
    generate_pseudo_labels,
    retain_mask,
    update_threshold,
)
from .train import (
    ModelPair,
    TrainConfig,
    Trainer,
    TrainResult,
    poly_lr,
    run_training,
    train_stage1,
    train_stage2,
    update_teacher,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "StrongAugmentConfig", "augment",
    "boundary_from_labels", "boundary_mask", "gradient_magnitude", "sobel_gradients",
    "IGNORE_INDEX", "ConfigError", "SegBatch", "SegSample", "TrainingAbort",
    "DatasetSpec", "SplitSpec", "generate_synthetic_dataset",
    "load_segmentation_dataset", "make_splits",
    "LossConfig", "LossReport", "boundary_loss", "confidence_weighted_ce", "labeled_ce",
    "ConfusionMatrix", "EvalResult", "evaluate", "mean_iou", "per_class_iou",
    "ReferenceModel", "SegmentationModel", "SGD",
    "DecayConfig", "PseudoLabelState", "ThresholdState", "apply_confidence_decay",
    "batch_mean_confidence", "generate_pseudo_labels", "retain_mask", "update_threshold",
    "ModelPair", "TrainConfig", "Trainer", "TrainResult", "poly_lr",
    "run_training", "train_stage1", "train_stage2", "update_teacher",
    "__version__",
]
