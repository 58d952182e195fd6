"""Segmentation evaluation: confusion matrices and mean IoU.

Conventions:
- confusion[i, j] counts pixels whose ground truth is class i and whose
  prediction is class j; ignored pixels never enter the matrix;
- per-class IoU = diag / (row_sum + col_sum - diag);
- classes with zero union (never in ground truth, never predicted) are
  excluded from the mean rather than counted as 0 or 1;
- accumulation is a plain integer sum, so sharding the dataset and summing
  per-shard matrices gives the same result in any order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .core import IGNORE_INDEX, SegSample, argmax_labels


@dataclass
class ConfusionMatrix:
    num_classes: int
    counts: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (self.num_classes, self.num_classes):
                raise ValueError(f"counts shape {self.counts.shape} does not match num_classes")

    def update(self, truth: np.ndarray, pred: np.ndarray, ignore_index: int = IGNORE_INDEX):
        """Accumulate one image pair. Ignored ground-truth pixels are skipped."""
        truth = np.asarray(truth)
        pred = np.asarray(pred)
        if truth.shape != pred.shape:
            raise ValueError(f"shape mismatch: truth {truth.shape} vs pred {pred.shape}")
        keep = truth != ignore_index
        t = truth[keep].astype(np.int64)
        p = pred[keep].astype(np.int64)
        if t.size and (t.min() < 0 or t.max() >= self.num_classes):
            raise ValueError("ground-truth label outside [0, num_classes)")
        if p.size and (p.min() < 0 or p.max() >= self.num_classes):
            raise ValueError("predicted label outside [0, num_classes)")
        # bincount over flattened (truth, pred) pairs
        flat = t * self.num_classes + p
        self.counts += np.bincount(flat, minlength=self.num_classes**2).reshape(
            self.num_classes, self.num_classes
        )
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """New matrix with summed counts; neither operand is modified.

        Commutative and associative, so shards may be combined in any order.
        """
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices with different class counts")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)


def per_class_iou(matrix: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray]:
    """(iou, valid) arrays of length num_classes.

    iou[c] is NaN where valid[c] is false (class absent from both truth and
    prediction); such classes must not enter the mean.
    """
    counts = matrix.counts.astype(np.float64)
    diag = np.diag(counts)
    union = counts.sum(axis=0) + counts.sum(axis=1) - diag
    valid = union > 0
    iou = np.full(matrix.num_classes, np.nan)
    iou[valid] = diag[valid] / union[valid]
    return iou, valid


def mean_iou(matrix: ConfusionMatrix) -> float:
    """Mean of per-class IoU over classes with nonzero union.

    Returns NaN (with a warning) if every class has zero union, which only
    happens when nothing was accumulated.
    """
    iou, valid = per_class_iou(matrix)
    if not valid.any():
        warnings.warn("mean IoU undefined: all classes have zero union", RuntimeWarning)
        return float("nan")
    return float(iou[valid].mean())


def pixel_accuracy(matrix: ConfusionMatrix) -> float:
    total = matrix.counts.sum()
    if total == 0:
        warnings.warn("pixel accuracy undefined: no pixels accumulated", RuntimeWarning)
        return float("nan")
    return float(np.diag(matrix.counts).sum() / total)


@dataclass(frozen=True)
class EvalResult:
    mean_iou: float
    pixel_accuracy: float
    per_class_iou: np.ndarray
    valid_classes: np.ndarray
    confusion: ConfusionMatrix

    def to_dict(self) -> dict:
        return {
            "mean_iou": self.mean_iou,
            "pixel_accuracy": self.pixel_accuracy,
            "per_class_iou": [None if not v else float(x) for x, v in
                              zip(self.per_class_iou, self.valid_classes)],
        }


def evaluate(
    forward: Callable[[np.ndarray], np.ndarray],
    samples: Iterable[SegSample],
    num_classes: int,
    batch_size: int = 16,
    ignore_index: int = IGNORE_INDEX,
) -> EvalResult:
    """Run inference over labeled samples and report mIoU and pixel accuracy.

    forward maps [N, C, H, W] images to [N, K, H, W] logits. Samples without
    ground truth are rejected. Evaluation never augments.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    matrix = ConfusionMatrix(num_classes)
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        for s in chunk:
            if s.label is None:
                raise ValueError(f"sample {s.id!r} has no ground-truth mask")
        images = np.stack([s.image for s in chunk]).astype(np.float32)
        logits = np.asarray(forward(images))
        preds = argmax_labels(logits)
        for s, p in zip(chunk, preds):
            matrix.update(s.label, p, ignore_index=ignore_index)
    iou, valid = per_class_iou(matrix)
    return EvalResult(
        mean_iou=mean_iou(matrix),
        pixel_accuracy=pixel_accuracy(matrix),
        per_class_iou=iou,
        valid_classes=valid,
        confusion=matrix,
    )


def format_report(result: EvalResult, class_names: list[str] | None = None) -> str:
    """Human-readable evaluation summary, one line per class plus totals."""
    k = result.confusion.num_classes
    names = class_names if class_names is not None else [f"class_{c}" for c in range(k)]
    if len(names) != k:
        raise ValueError("class_names length does not match num_classes")
    width = max(len(n) for n in names)
    lines = []
    for c in range(k):
        if result.valid_classes[c]:
            lines.append(f"  {names[c]:<{width}}  IoU {100 * result.per_class_iou[c]:6.2f}")
        else:
            lines.append(f"  {names[c]:<{width}}  IoU    n/a (absent)")
    lines.append(f"mean IoU {100 * result.mean_iou:.2f}  pixel acc {100 * result.pixel_accuracy:.2f}")
    return "\n".join(lines)
