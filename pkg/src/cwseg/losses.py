"""Training objectives: labeled CE, confidence-weighted CE, boundary CE, totals.

Cross-entropy is always computed from logits through a max-subtracted
log-sum-exp, never by taking the log of a probability map. All internal loss
math runs in float64; gradients are returned with respect to the logits and
match the analytic derivative softmax(z) - onehot(target) scaled by each
pixel's weight.

Normalization conventions (binding, covered by tests):

- labeled CE averages over all non-ignored pixels pooled across the batch;
- the confidence-weighted and boundary losses are per-image and divide by the
  image's total pixel count H*W. Filtered-out pixels contribute nothing to
  the numerator but still count in the denominator, so the retention rate
  directly modulates the effective loss scale. Per-image losses are averaged
  uniformly when composed over a batch.

Pixels that are not retained, off-boundary, or labeled IGNORE_INDEX have
exactly zero gradient contribution.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import IGNORE_INDEX


@dataclass
class LossConfig:
    """Scalar knobs of the combined objective.

    gamma: confidence exponent; 0 treats every retained pixel equally.
    lambda_unsup: weight of the confidence-weighted term in the total.
    boundary_coeff: weight of the boundary term in the final loss (0.5 default).
    """

    gamma: float = 1.0
    lambda_unsup: float = 1.0
    boundary_coeff: float = 0.5

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.lambda_unsup < 0:
            raise ValueError(f"lambda_unsup must be >= 0, got {self.lambda_unsup}")


@dataclass
class LossReport:
    """Per-step loss breakdown. total is recomputable from the parts."""

    labeled: float = 0.0
    weighted: float = 0.0
    boundary: float = 0.0
    total: float = 0.0
    pixel_counts: dict[str, int] = field(default_factory=dict)
    no_labeled_pixels: bool = False

    def to_dict(self) -> dict:
        return {
            "loss_labeled": self.labeled,
            "loss_weighted": self.weighted,
            "loss_boundary": self.boundary,
            "loss_total": self.total,
            "pixel_counts": dict(self.pixel_counts),
        }


def _ce_and_probs(logits: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel CE of `targets` under [K, H, W] logits, plus softmax probs.

    targets must be valid class indices (callers mask ignore beforehand).
    Returns (ce [H, W], probs [K, H, W]), both float64.
    """
    z = logits.astype(np.float64, copy=False)
    zmax = z.max(axis=0)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=0)
    lse = np.log(sez) + zmax
    taken = np.take_along_axis(z, targets[None], axis=0)[0]
    return lse - taken, ez / sez


def labeled_ce(logits: np.ndarray, labels: np.ndarray, ignore_index: int = IGNORE_INDEX) -> float:
    """Mean CE over all non-ignored pixels of a labeled batch.

    logits: [N, K, H, W] (or [K, H, W] for a single image)
    labels: [N, H, W] matching spatial dims
    Returns 0 with a warning if every pixel is ignored.
    """
    return labeled_ce_with_grad(logits, labels, ignore_index)[0]


def labeled_ce_with_grad(
    logits: np.ndarray, labels: np.ndarray, ignore_index: int = IGNORE_INDEX
) -> tuple[float, np.ndarray, int]:
    """labeled_ce plus d(loss)/d(logits) and the non-ignored pixel count."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim == 3:
        logits = logits[None]
        labels = labels[None]
    if logits.shape[0] != labels.shape[0] or logits.shape[2:] != labels.shape[1:]:
        raise ValueError(f"shape mismatch: logits {logits.shape} vs labels {labels.shape}")

    grad = np.zeros(logits.shape, dtype=np.float64)
    valid = labels != ignore_index
    n_valid = int(valid.sum())
    if n_valid == 0:
        warnings.warn("labeled_ce: no non-ignored pixels in batch, returning 0", RuntimeWarning)
        return 0.0, grad, 0

    total = 0.0
    for i in range(logits.shape[0]):
        v = valid[i]
        if not v.any():
            continue
        tgt = np.where(v, labels[i], 0)
        ce, probs = _ce_and_probs(logits[i], tgt)
        total += float(ce[v].sum())
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, tgt[None], 1.0, axis=0)
        grad[i] = np.where(v[None], probs - onehot, 0.0)
    grad /= n_valid
    return total / n_valid, grad, n_valid


def confidence_weighted_ce(
    logits: np.ndarray,
    pseudo: np.ndarray,
    conf: np.ndarray,
    retain: np.ndarray,
    gamma: float,
    ignore_index: int = IGNORE_INDEX,
) -> float:
    """Confidence-weighted CE of one image against its pseudo-labels.

    Each retained pixel contributes conf**gamma * CE; non-retained and
    ignore pixels contribute 0. The sum is divided by the image's total
    pixel count, not the retained count.
    """
    return confidence_weighted_ce_with_grad(logits, pseudo, conf, retain, gamma, ignore_index)[0]


def confidence_weighted_ce_with_grad(
    logits: np.ndarray,
    pseudo: np.ndarray,
    conf: np.ndarray,
    retain: np.ndarray,
    gamma: float,
    ignore_index: int = IGNORE_INDEX,
) -> tuple[float, np.ndarray]:
    """confidence_weighted_ce plus d(loss)/d(logits).

    Confidence weights are constants with respect to the logits: no gradient
    flows through conf.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    logits, pseudo = np.asarray(logits), np.asarray(pseudo)
    conf, retain = np.asarray(conf), np.asarray(retain)
    _check_image_shapes(logits, pseudo, conf=conf, retain=retain)

    valid = retain & (pseudo != ignore_index)
    weights = np.where(valid, conf.astype(np.float64) ** gamma, 0.0)
    return _weighted_pixel_ce(logits, pseudo, weights, valid)


def boundary_loss(
    logits: np.ndarray,
    pseudo: np.ndarray,
    mask: np.ndarray,
    ignore_index: int = IGNORE_INDEX,
) -> float:
    """CE of one image against pseudo-labels, restricted to boundary pixels.

    Off-boundary pixels contribute 0; the sum is divided by the image's total
    pixel count. An all-false mask gives exactly 0.
    """
    return boundary_loss_with_grad(logits, pseudo, mask, ignore_index)[0]


def boundary_loss_with_grad(
    logits: np.ndarray,
    pseudo: np.ndarray,
    mask: np.ndarray,
    ignore_index: int = IGNORE_INDEX,
) -> tuple[float, np.ndarray]:
    """boundary_loss plus d(loss)/d(logits)."""
    logits, pseudo, mask = np.asarray(logits), np.asarray(pseudo), np.asarray(mask)
    _check_image_shapes(logits, pseudo, mask=mask)

    valid = mask.astype(bool) & (pseudo != ignore_index)
    weights = valid.astype(np.float64)
    return _weighted_pixel_ce(logits, pseudo, weights, valid)


def _weighted_pixel_ce(
    logits: np.ndarray, pseudo: np.ndarray, weights: np.ndarray, valid: np.ndarray
) -> tuple[float, np.ndarray]:
    """sum(weights * CE) / (H*W) with the matching logit gradient."""
    n_pixels = pseudo.size
    if not valid.any():
        return 0.0, np.zeros(logits.shape, dtype=np.float64)
    tgt = np.where(valid, pseudo, 0)
    ce, probs = _ce_and_probs(logits, tgt)
    loss = float((weights * ce).sum()) / n_pixels
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, tgt[None], 1.0, axis=0)
    grad = weights[None] * (probs - onehot) / n_pixels
    return loss, grad


def batch_confidence_weighted_ce_with_grad(
    logits: np.ndarray,
    pseudo: np.ndarray,
    conf: np.ndarray,
    retain: np.ndarray,
    gamma: float,
    ignore_index: int = IGNORE_INDEX,
) -> tuple[float, np.ndarray]:
    """Uniform mean of the per-image weighted CE over a [N, K, H, W] batch."""
    logits = np.asarray(logits)
    if logits.ndim != 4:
        raise ValueError(f"expected [N, K, H, W] logits, got shape {logits.shape}")
    n = logits.shape[0]
    grad = np.empty(logits.shape, dtype=np.float64)
    total = 0.0
    for i in range(n):
        loss_i, grad_i = confidence_weighted_ce_with_grad(
            logits[i], pseudo[i], conf[i], retain[i], gamma, ignore_index
        )
        total += loss_i
        grad[i] = grad_i
    return total / n, grad / n


def batch_boundary_loss_with_grad(
    logits: np.ndarray,
    pseudo: np.ndarray,
    mask: np.ndarray,
    ignore_index: int = IGNORE_INDEX,
) -> tuple[float, np.ndarray]:
    """Uniform mean of the per-image boundary CE over a [N, K, H, W] batch."""
    logits = np.asarray(logits)
    if logits.ndim != 4:
        raise ValueError(f"expected [N, K, H, W] logits, got shape {logits.shape}")
    n = logits.shape[0]
    grad = np.empty(logits.shape, dtype=np.float64)
    total = 0.0
    for i in range(n):
        loss_i, grad_i = boundary_loss_with_grad(logits[i], pseudo[i], mask[i], ignore_index)
        total += loss_i
        grad[i] = grad_i
    return total / n, grad / n


def _check_image_shapes(logits: np.ndarray, pseudo: np.ndarray, **maps: np.ndarray) -> None:
    if logits.ndim != 3:
        raise ValueError(f"expected [K, H, W] logits for a single image, got shape {logits.shape}")
    hw = logits.shape[1:]
    if pseudo.shape != hw:
        raise ValueError(f"pseudo-label shape {pseudo.shape} does not match logits {logits.shape}")
    for name, m in maps.items():
        if m.shape != hw:
            raise ValueError(f"{name} shape {m.shape} does not match logits {logits.shape}")


def total_stage1_loss(labeled: float, weighted: float, lambda_unsup: float) -> float:
    """Supervised term plus lambda-scaled confidence-weighted term."""
    return labeled + lambda_unsup * weighted


def final_loss(labeled: float, weighted: float, boundary: float, cfg: LossConfig) -> float:
    """Combined objective: labeled + lambda * weighted + boundary_coeff * boundary."""
    return labeled + cfg.lambda_unsup * weighted + cfg.boundary_coeff * boundary
