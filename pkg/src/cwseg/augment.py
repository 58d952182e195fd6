"""Deterministic, replayable data augmentation.

Parameters are sampled once per (sample, step) into an AugmentParams record;
applying the record is a pure function. That split lets the stored pseudo-label
and confidence maps of an unlabeled image be warped with exactly the geometry
that was applied to the image itself.

Geometric order: scale -> horizontal flip -> pad (bottom/right) -> crop.
Images are resampled bilinearly, labels and confidence maps nearest-neighbor.
Padding fills: per-channel image mean for images, the ignore index for labels,
0.0 for confidence maps (padded pixels can never be retained).

Photometric "strong" operations (channel jitter, grayscale, blur, cutout) are
sampled only when requested; they apply to the image after cropping and leave
label geometry untouched. They are off by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import IGNORE_INDEX, SegSample


@dataclass(frozen=True)
class StrongAugmentConfig:
    enabled: bool = False
    channel_jitter: float = 0.4  # multiplicative range half-width
    channel_shift: float = 0.1  # additive range half-width
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5
    blur_sigma_range: tuple[float, float] = (0.1, 1.5)
    cutout_prob: float = 0.5
    cutout_frac: float = 0.3  # box side as fraction of crop side

    def __post_init__(self):
        for name in ("grayscale_prob", "blur_prob", "cutout_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if not 0.0 < self.cutout_frac <= 1.0:
            raise ValueError(f"cutout_frac must be in (0, 1], got {self.cutout_frac}")


@dataclass(frozen=True)
class AugmentConfig:
    crop_size: tuple[int, int] = (48, 48)
    scale_range: tuple[float, float] = (0.75, 1.25)
    flip_prob: float = 0.5
    strong: StrongAugmentConfig = field(default_factory=StrongAugmentConfig)

    def __post_init__(self):
        if self.crop_size[0] < 1 or self.crop_size[1] < 1:
            raise ValueError(f"crop_size must be positive, got {self.crop_size}")
        lo, hi = self.scale_range
        if not 0.0 < lo <= hi:
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob must be in [0, 1], got {self.flip_prob}")


@dataclass(frozen=True)
class StrongParams:
    channel_scale: tuple[float, ...]
    channel_shift: tuple[float, ...]
    to_gray: bool
    blur_sigma: float | None
    cutout_box: tuple[int, int, int, int] | None  # top, left, height, width


@dataclass(frozen=True)
class AugmentParams:
    scale: float
    flip: bool
    crop_top: int
    crop_left: int
    crop_size: tuple[int, int]
    strong: StrongParams | None = None


def nearest_index_map(n_in: int, n_out: int) -> np.ndarray:
    """Source index per output position for nearest-neighbor resampling."""
    idx = np.floor((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64)
    return np.clip(idx, 0, n_in - 1)


_RESIZE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense [n_out, n_in] bilinear resampling matrix, half-pixel centers."""
    key = (n_in, n_out)
    if key not in _RESIZE_CACHE:
        m = np.zeros((n_out, n_in))
        for o in range(n_out):
            src = min(max((o + 0.5) * n_in / n_out - 0.5, 0.0), n_in - 1.0)
            i0 = int(np.floor(src))
            i1 = min(i0 + 1, n_in - 1)
            f = src - i0
            m[o, i0] += 1.0 - f
            m[o, i1] += f
        _RESIZE_CACHE[key] = m
    return _RESIZE_CACHE[key]


def _scaled_size(h: int, w: int, scale: float) -> tuple[int, int]:
    return max(1, round(h * scale)), max(1, round(w * scale))


def sample_augment_params(
    image_hw: tuple[int, int], cfg: AugmentConfig, rng: np.random.Generator,
    strong: bool = False,
) -> AugmentParams:
    """Draw one set of parameters. Fixed draw order keeps streams reproducible."""
    lo, hi = cfg.scale_range
    scale = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    flip = bool(rng.uniform() < cfg.flip_prob)
    sh, sw = _scaled_size(image_hw[0], image_hw[1], scale)
    ch, cw = cfg.crop_size
    ph, pw = max(sh, ch), max(sw, cw)
    crop_top = int(rng.integers(0, ph - ch + 1))
    crop_left = int(rng.integers(0, pw - cw + 1))
    strong_params = None
    if strong and cfg.strong.enabled:
        strong_params = _sample_strong(cfg.strong, (ch, cw), rng)
    return AugmentParams(scale, flip, crop_top, crop_left, (ch, cw), strong_params)


def identity_params(image_hw: tuple[int, int]) -> AugmentParams:
    """No scale, no flip, full-frame crop: apply_to_image == input."""
    return AugmentParams(1.0, False, 0, 0, (image_hw[0], image_hw[1]))


def _sample_strong(cfg: StrongAugmentConfig, crop_hw, rng) -> StrongParams:
    cscale = tuple(float(v) for v in rng.uniform(1 - cfg.channel_jitter, 1 + cfg.channel_jitter, 3))
    cshift = tuple(float(v) for v in rng.uniform(-cfg.channel_shift, cfg.channel_shift, 3))
    to_gray = bool(rng.uniform() < cfg.grayscale_prob)
    blur_sigma = None
    if rng.uniform() < cfg.blur_prob:
        blur_sigma = float(rng.uniform(*cfg.blur_sigma_range))
    cutout_box = None
    if rng.uniform() < cfg.cutout_prob:
        bh = max(1, int(round(cfg.cutout_frac * crop_hw[0])))
        bw = max(1, int(round(cfg.cutout_frac * crop_hw[1])))
        top = int(rng.integers(0, crop_hw[0] - bh + 1))
        left = int(rng.integers(0, crop_hw[1] - bw + 1))
        cutout_box = (top, left, bh, bw)
    return StrongParams(cscale, cshift, to_gray, blur_sigma, cutout_box)


def _geometry(arr_hw: tuple[int, int], params: AugmentParams):
    """Validate that the crop window fits after scaling and padding."""
    sh, sw = _scaled_size(arr_hw[0], arr_hw[1], params.scale)
    ch, cw = params.crop_size
    ph, pw = max(sh, ch), max(sw, cw)
    if params.crop_top + ch > ph or params.crop_left + cw > pw:
        raise RuntimeError(
            f"crop window ({params.crop_top},{params.crop_left})+{params.crop_size} "
            f"exceeds padded size ({ph},{pw})"
        )
    return sh, sw, ph, pw


def apply_to_image(image: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Warp a [C, H, W] float image; bilinear scaling, mean-padding, strong ops."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"expected [C, H, W] image, got shape {image.shape}")
    c, h, w = image.shape
    sh, sw, ph, pw = _geometry((h, w), params)
    out = image.astype(np.float32)
    if (sh, sw) != (h, w):
        mh = _resize_matrix(h, sh).astype(np.float32)
        mw = _resize_matrix(w, sw).astype(np.float32)
        out = np.tensordot(out, mh, axes=([1], [1]))  # [C, W, sH]
        out = np.tensordot(out, mw, axes=([1], [1]))  # [C, sH, sW]
    if params.flip:
        out = out[:, :, ::-1]
    if (ph, pw) != (sh, sw):
        fill = out.mean(axis=(1, 2))
        padded = np.empty((c, ph, pw), dtype=out.dtype)
        padded[:] = fill[:, None, None]
        padded[:, :sh, :sw] = out
        out = padded
    ch, cw = params.crop_size
    out = np.ascontiguousarray(out[:, params.crop_top : params.crop_top + ch,
                                   params.crop_left : params.crop_left + cw])
    if params.strong is not None:
        out = _apply_strong(out, params.strong)
    return out


def _apply_strong(image: np.ndarray, sp: StrongParams) -> np.ndarray:
    out = image
    scale = np.asarray(sp.channel_scale, dtype=out.dtype)[:, None, None]
    shift = np.asarray(sp.channel_shift, dtype=out.dtype)[:, None, None]
    out = np.clip(out * scale + shift, 0.0, 1.0)
    if sp.to_gray and out.shape[0] == 3:
        luma = 0.299 * out[0] + 0.587 * out[1] + 0.114 * out[2]
        out = np.broadcast_to(luma, out.shape).copy()
    if sp.blur_sigma is not None:
        out = np.stack([ndimage.gaussian_filter(ch, sp.blur_sigma, mode="nearest")
                        for ch in out])
    if sp.cutout_box is not None:
        t, l, bh, bw = sp.cutout_box
        fill = out.mean(axis=(1, 2))
        out[:, t : t + bh, l : l + bw] = fill[:, None, None]
    return out.astype(np.float32)


def apply_to_map(arr: np.ndarray, params: AugmentParams, fill) -> np.ndarray:
    """Nearest-neighbor warp of a [H, W] map (labels, confidences)."""
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"expected [H, W] map, got shape {arr.shape}")
    h, w = arr.shape
    sh, sw, ph, pw = _geometry((h, w), params)
    out = arr
    if (sh, sw) != (h, w):
        out = out[np.ix_(nearest_index_map(h, sh), nearest_index_map(w, sw))]
    if params.flip:
        out = out[:, ::-1]
    if (ph, pw) != (sh, sw):
        padded = np.full((ph, pw), fill, dtype=arr.dtype)
        padded[:sh, :sw] = out
        out = padded
    ch, cw = params.crop_size
    return np.ascontiguousarray(out[params.crop_top : params.crop_top + ch,
                                    params.crop_left : params.crop_left + cw])


def apply_to_label(label: np.ndarray, params: AugmentParams,
                   fill: int = IGNORE_INDEX) -> np.ndarray:
    return apply_to_map(label, params, fill)


def apply_to_confidence(conf: np.ndarray, params: AugmentParams) -> np.ndarray:
    return apply_to_map(conf, params, 0.0)


def augment(sample: SegSample, cfg: AugmentConfig, rng: np.random.Generator,
            strong: bool = False) -> SegSample:
    """Sample parameters and warp one sample; label stays aligned with image."""
    params = sample_augment_params(sample.image.shape[1:], cfg, rng, strong=strong)
    label = None if sample.label is None else apply_to_label(sample.label, params)
    return SegSample(id=sample.id, image=apply_to_image(sample.image, params), label=label)
