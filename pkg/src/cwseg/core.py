"""Shared tensor conventions and elementary per-pixel transforms.

Array conventions used throughout the package:

- images are float arrays of shape [C, H, W], values in [0, 1]
- logit maps are float arrays of shape [K, H, W], K >= 2 classes
- probability maps are float arrays of shape [K, H, W], per-pixel sums == 1
- confidence maps are float arrays of shape [H, W], values in [0, 1]
- label maps are integer arrays of shape [H, W] with values in
  {0..K-1} or IGNORE_INDEX

Channel-first layout is binding for every module in this package.
Pixels labeled IGNORE_INDEX are excluded from all losses and metrics.

All functions here are pure and safe to call from concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Label value marking pixels excluded from losses and metrics.
IGNORE_INDEX = 255


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent with the data."""


class TrainingAbort(RuntimeError):
    """Raised when training state becomes non-finite; carries diagnostics."""

    def __init__(self, message: str, batch_ids: list[str] | None = None,
                 diagnostics: dict | None = None):
        super().__init__(message)
        self.batch_ids = batch_ids or []
        self.diagnostics = diagnostics or {}


@dataclass
class SegSample:
    """One image with an optional ground-truth label map.

    image: [C, H, W] float, values in [0, 1]
    label: [H, W] int in {0..num_classes-1} | IGNORE_INDEX, or None
    """

    id: str
    image: np.ndarray
    label: np.ndarray | None = None

    def validate(self, num_classes: int, ignore_index: int = IGNORE_INDEX) -> None:
        if self.image.ndim != 3:
            raise ValueError(f"sample {self.id}: image must be [C, H, W], got shape {self.image.shape}")
        if self.label is not None:
            if self.label.shape != self.image.shape[1:]:
                raise ValueError(
                    f"sample {self.id}: label shape {self.label.shape} does not match "
                    f"image spatial dims {self.image.shape[1:]}"
                )
            vals = self.label[self.label != ignore_index]
            if vals.size and (vals.min() < 0 or vals.max() >= num_classes):
                raise ValueError(
                    f"sample {self.id}: label values outside 0..{num_classes - 1} | {ignore_index}"
                )


@dataclass
class SegBatch:
    """Ordered, shape-homogeneous collection of samples."""

    samples: list[SegSample] = field(default_factory=list)

    def __post_init__(self):
        if not self.samples:
            raise ValueError("batch must contain at least one sample")
        shape = self.samples[0].image.shape
        for s in self.samples[1:]:
            if s.image.shape != shape:
                raise ValueError(
                    f"heterogeneous batch: {s.id} has shape {s.image.shape}, expected {shape}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def stack_images(self) -> np.ndarray:
        """Stack to [N, C, H, W]."""
        return np.stack([s.image for s in self.samples])


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Per-pixel softmax over the class axis of a [K, H, W] (or [N, K, H, W]) map.

    Uses max-subtraction, so arbitrarily large logit magnitudes do not overflow.
    """
    logits = np.asarray(logits)
    if not np.isfinite(logits).all():
        raise ValueError("logits contain non-finite values")
    axis = logits.ndim - 3
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def argmax_labels(logits: np.ndarray) -> np.ndarray:
    """Per-pixel most likely class of a [K, H, W] (or [N, K, H, W]) map.

    Ties break toward the lowest class index, so output is deterministic.
    """
    logits = np.asarray(logits)
    if not np.isfinite(logits).all():
        raise ValueError("logits contain non-finite values")
    axis = logits.ndim - 3
    return logits.argmax(axis=axis).astype(np.int64)


def max_confidence(probs: np.ndarray) -> np.ndarray:
    """Per-pixel maximum class probability of a [K, H, W] (or [N, K, H, W]) map."""
    probs = np.asarray(probs)
    axis = probs.ndim - 3
    return probs.max(axis=axis)
