"""Figure emission: prediction triptychs, boundary overlays, metric curves.

All output is written to files (no interactive backends). Label colors come
from a fixed palette so the same class is always the same color across runs;
ignore pixels render mid-gray.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .core import IGNORE_INDEX

# fixed palette, first entry is class 0 (background)
_PALETTE = np.array([
    [40, 40, 40], [214, 69, 65], [68, 152, 211], [84, 188, 110],
    [243, 156, 18], [142, 68, 173], [26, 188, 156], [241, 196, 15],
    [52, 73, 94], [230, 126, 34], [155, 89, 182], [46, 204, 113],
], dtype=np.uint8)

IGNORE_GRAY = (128, 128, 128)


def label_to_rgb(label: np.ndarray, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """[H, W] class indices -> [H, W, 3] uint8 colors."""
    label = np.asarray(label)
    rgb = np.empty((*label.shape, 3), dtype=np.uint8)
    ignore = label == ignore_index
    safe = np.where(ignore, 0, label) % len(_PALETTE)
    rgb[:] = _PALETTE[safe]
    rgb[ignore] = IGNORE_GRAY
    return rgb


def image_to_rgb(image: np.ndarray) -> np.ndarray:
    """[C, H, W] float in [0, 1] -> [H, W, 3] uint8."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    if arr.ndim != 3:
        raise ValueError(f"expected [C, H, W], got {arr.shape}")
    if arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    return (arr[:3].transpose(1, 2, 0) * 255.0).round().astype(np.uint8)


def save_triptych(image, gt_label, pred_label, out_path,
                  ignore_index: int = IGNORE_INDEX) -> Path:
    """Input | ground truth | prediction, side by side with separators."""
    panels = [image_to_rgb(image), label_to_rgb(gt_label, ignore_index),
              label_to_rgb(pred_label, ignore_index)]
    h = panels[0].shape[0]
    sep = np.full((h, 2, 3), 255, dtype=np.uint8)
    strip = np.concatenate([panels[0], sep, panels[1], sep, panels[2]], axis=1)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(strip, mode="RGB").save(out_path)
    return out_path


def save_boundary_overlay(image, boundary_mask, out_path,
                          color=(255, 40, 40)) -> Path:
    """Image with boundary pixels painted; an empty mask paints nothing."""
    rgb = image_to_rgb(image).copy()
    mask = np.asarray(boundary_mask, dtype=bool)
    if mask.shape != rgb.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {rgb.shape[:2]}")
    rgb[mask] = color
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb, mode="RGB").save(out_path)
    return out_path


_CURVE_KEYS = ("loss_labeled", "loss_weighted", "loss_boundary", "loss_total",
               "lr", "mean_confidence", "threshold", "retention_fraction",
               "boundary_fraction")


def plot_metric_curves(records: list[dict], out_path) -> Path:
    """One subplot per metrics column, x axis = step; None entries are gaps."""
    if not records:
        raise ValueError("empty metrics stream")
    cols = 3
    rows = (len(_CURVE_KEYS) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 2.6 * rows))
    axes = np.atleast_2d(axes)
    for k, key in enumerate(_CURVE_KEYS):
        ax = axes[k // cols][k % cols]
        xs = [r["step"] for r in records if r.get(key) is not None]
        ys = [r[key] for r in records if r.get(key) is not None]
        if xs:
            ax.plot(xs, ys, linewidth=1.0)
        ax.set_title(key, fontsize=9)
        ax.tick_params(labelsize=7)
        ax.grid(True, alpha=0.3)
    for k in range(len(_CURVE_KEYS), rows * cols):
        axes[k // cols][k % cols].axis("off")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path
