"""Pseudo-label generation, dynamic confidence thresholding, confidence decay.

The teacher's per-pixel max-softmax confidences drive two mechanisms:

- a logistic threshold T = T0 / (1 + exp(-beta * (p_mean - 0.5))), recomputed
  from each batch's mean confidence and clamped to a stability range;
- a per-epoch geometric decay that multiplies the stored confidence of every
  pixel currently below T by a factor alpha, progressively muting pixels that
  never clear the bar.

Stored pseudo-label state lives in canonical (un-augmented) image coordinates,
keyed by sample id, and persists across epochs. Confidences are kept in
float64 so that n consecutive decays equal alpha**n exactly to tight
tolerance.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, replace
from math import exp
from typing import Callable, Iterable

import numpy as np

from .core import SegBatch, SegSample, argmax_labels, max_confidence, softmax_probs

PSEUDO_STATE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ThresholdState:
    """Current retention threshold plus the parameters that move it.

    The live threshold `value` always sits inside [clamp_low, clamp_high].
    With dynamic=False the threshold stays frozen at its initial value
    (static-threshold ablation; note that beta=0 is NOT static, it pins the
    logistic at t0/2).
    """

    t0: float = 0.6
    beta: float = 0.5
    clamp_low: float = 0.3
    clamp_high: float = 0.8
    dynamic: bool = True
    value: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if not 0.0 < self.t0 <= 1.0:
            raise ValueError(f"t0 must be in (0, 1], got {self.t0}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not 0.0 < self.clamp_low < self.clamp_high <= 1.0:
            raise ValueError(f"invalid clamp range [{self.clamp_low}, {self.clamp_high}]")
        if self.value is None:
            object.__setattr__(self, "value", _clamp(self.t0, self.clamp_low, self.clamp_high))
        elif not self.clamp_low <= self.value <= self.clamp_high:
            raise ValueError(f"threshold {self.value} outside clamp range")


@dataclass(frozen=True)
class DecayConfig:
    """Geometric decay settings for stored confidences.

    alpha in (0, 1]; alpha == 1.0 leaves confidences untouched (decay off).
    refresh_on_teacher_update: regenerate stored pseudo-labels from the
    teacher after each weight copy, resetting accumulated decay.
    """

    alpha: float = 0.9
    refresh_on_teacher_update: bool = True
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def update_threshold(state: ThresholdState, mean_conf: float) -> ThresholdState:
    """Recompute the threshold from a batch mean confidence.

    T_raw = t0 / (1 + exp(-beta * (mean_conf - 0.5))), monotone non-decreasing
    in mean_conf, then clamped into [clamp_low, clamp_high]. A non-dynamic
    state is returned unchanged.
    """
    if not 0.0 <= mean_conf <= 1.0:
        raise ValueError(f"mean confidence must be in [0, 1], got {mean_conf}")
    if not state.dynamic:
        return state
    t_raw = state.t0 / (1.0 + exp(-state.beta * (mean_conf - 0.5)))
    return replace(state, value=_clamp(t_raw, state.clamp_low, state.clamp_high))


def batch_mean_confidence(
    confs: Iterable[np.ndarray], valid_masks: Iterable[np.ndarray] | None = None
) -> float:
    """Mean over images of each image's own mean pixel confidence.

    The nested normalization matters: images are weighted equally regardless
    of size, which differs from pooling all pixels. Optional per-image masks
    restrict each inner mean to valid pixels.
    """
    confs = list(confs)
    if not confs:
        raise ValueError("cannot average an empty collection of confidence maps")
    masks = list(valid_masks) if valid_masks is not None else [None] * len(confs)
    if len(masks) != len(confs):
        raise ValueError("valid_masks length does not match confs")
    per_image = []
    for c, m in zip(confs, masks):
        c = np.asarray(c, dtype=np.float64)
        if m is None:
            per_image.append(float(c.mean()))
        else:
            m = np.asarray(m, dtype=bool)
            if not m.any():
                raise ValueError("confidence map has no valid pixels")
            per_image.append(float(c[m].mean()))
    return float(np.mean(per_image))


def retain_mask(conf: np.ndarray, threshold: float) -> np.ndarray:
    """Boolean map, true where confidence >= threshold (inclusive)."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    return np.asarray(conf) >= threshold


def generate_pseudo_labels(
    teacher_forward: Callable[[np.ndarray], np.ndarray], batch: SegBatch
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Run the teacher on a batch and derive (labels, confidences) per sample.

    teacher_forward maps stacked images [N, C, H, W] to logits [N, K, H, W];
    it must be side-effect free (inference only). Output is deterministic for
    fixed weights and inputs.
    """
    images = batch.stack_images()
    logits = np.asarray(teacher_forward(images))
    expected = (images.shape[0], images.shape[2], images.shape[3])
    if logits.ndim != 4 or (logits.shape[0],) + logits.shape[2:] != expected or logits.shape[1] < 2:
        raise ValueError(
            f"teacher output shape {logits.shape} does not match expected "
            f"[N={expected[0]}, K>=2, H={expected[1]}, W={expected[2]}]"
        )
    labels = argmax_labels(logits)
    confs = max_confidence(softmax_probs(logits))
    return [(labels[i], confs[i].astype(np.float64)) for i in range(len(batch))]


@dataclass
class PseudoRecord:
    """Stored teacher outputs for one unlabeled sample."""

    labels: np.ndarray  # [H, W] int64
    confidence: np.ndarray  # [H, W] float64
    retain: np.ndarray  # [H, W] bool


@dataclass
class PseudoLabelState:
    """Per-sample pseudo-labels, decayed confidences, and retain masks."""

    records: dict[str, PseudoRecord] = field(default_factory=dict)
    epoch_of_last_refresh: int = -1

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self.records

    def __len__(self) -> int:
        return len(self.records)

    def get(self, sample_id: str) -> PseudoRecord:
        if sample_id not in self.records:
            raise KeyError(f"no pseudo-label record for sample {sample_id!r}")
        return self.records[sample_id]


def apply_confidence_decay(
    state: PseudoLabelState, sample_id: str, threshold: float, cfg: DecayConfig
) -> PseudoLabelState:
    """One decay epoch for one sample, in place; returns the state.

    Pixels at or above the threshold keep their confidence; pixels below are
    multiplied by alpha. The retain mask is recomputed against the threshold
    afterward.
    """
    rec = state.get(sample_id)
    if cfg.enabled:
        below = rec.confidence < threshold
        rec.confidence = np.where(below, cfg.alpha * rec.confidence, rec.confidence)
    rec.retain = retain_mask(rec.confidence, threshold)
    return state


def decay_all(state: PseudoLabelState, threshold: float, cfg: DecayConfig) -> PseudoLabelState:
    """Apply one decay epoch to every stored sample."""
    for sample_id in state.records:
        apply_confidence_decay(state, sample_id, threshold, cfg)
    return state


def refresh_from_teacher(
    state: PseudoLabelState,
    teacher_forward: Callable[[np.ndarray], np.ndarray],
    samples: Iterable[SegSample],
    threshold: float,
    epoch: int = 0,
    batch_size: int = 16,
) -> PseudoLabelState:
    """Replace stored pseudo-labels and confidences with fresh teacher outputs.

    Accumulated decay is implicitly reset: the fresh confidence becomes the
    new stored value. Teacher weights must stay fixed for the duration.
    """
    samples = list(samples)
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        outputs = generate_pseudo_labels(teacher_forward, SegBatch(chunk))
        for sample, (labels, conf) in zip(chunk, outputs):
            state.records[sample.id] = PseudoRecord(
                labels=labels,
                confidence=conf,
                retain=retain_mask(conf, threshold),
            )
    state.epoch_of_last_refresh = epoch
    return state


def save_pseudo_state(path, state: PseudoLabelState) -> None:
    """Write the state as a versioned array archive (.npz).

    Layout: one `labels/<id>`, `conf/<id>`, `retain/<id>` triple per sample,
    plus a json `meta` entry holding the format version, the sample ids, and
    the last-refresh epoch.
    """
    arrays: dict[str, np.ndarray] = {}
    for sid, rec in state.records.items():
        arrays[f"labels/{sid}"] = rec.labels
        arrays[f"conf/{sid}"] = rec.confidence
        arrays[f"retain/{sid}"] = rec.retain
    meta = {
        "format_version": PSEUDO_STATE_FORMAT_VERSION,
        "ids": sorted(state.records),
        "epoch_of_last_refresh": state.epoch_of_last_refresh,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_pseudo_state(path) -> PseudoLabelState:
    """Inverse of save_pseudo_state."""
    with np.load(path) as data:
        meta = json.loads(io.BytesIO(data["meta"].tobytes()).getvalue().decode())
        if meta["format_version"] != PSEUDO_STATE_FORMAT_VERSION:
            raise ValueError(f"unsupported pseudo-state format version {meta['format_version']}")
        records = {
            sid: PseudoRecord(
                labels=data[f"labels/{sid}"],
                confidence=data[f"conf/{sid}"],
                retain=data[f"retain/{sid}"],
            )
            for sid in meta["ids"]
        }
    return PseudoLabelState(records=records, epoch_of_last_refresh=meta["epoch_of_last_refresh"])
