"""Datasets: synthetic shape scenes, directory loaders, labeled/unlabeled splits.

Synthetic scenes are the desk-scale stand-in for real benchmarks: colored
geometric shapes (rectangle, circle, triangle) over textured backgrounds,
where the class is the shape KIND. Each class draws its fill color from its
own hue band; neighboring bands overlap, so color is a strong but imperfect
cue and the outline disambiguates. Rasterization is analytic at integer
pixel centers, making ground truth exact and testable against brute-force
membership.

On-disk layout (all kinds):
    root/images/<id>.png   8-bit RGB
    root/masks/<id>.png    8-bit single-channel (or palette) class indices
    root/manifest          one sample id per line
    root/meta.json         generation parameters (synthetic only)
    root/splits/*.txt      optional explicit id lists

Cityscapes-layout masks carry raw ids that are remapped to 19 train ids via
the packaged table cityscapes_remap.txt; unlisted raw ids become the ignore
index.
"""

from __future__ import annotations

import colorsys
import json
import warnings
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .core import IGNORE_INDEX, ConfigError, SegSample

DATASET_KINDS = ("synthetic", "voc-layout", "cityscapes-layout")
SHAPE_KINDS = ("rectangle", "circle", "triangle")  # class ids 1, 2, 3


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    root: Path
    num_classes: int
    ignore_index: int = IGNORE_INDEX

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}, expected one of {DATASET_KINDS}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        object.__setattr__(self, "root", Path(self.root))


@dataclass(frozen=True)
class SplitSpec:
    labeled_fraction: Fraction
    seed: int = 0
    explicit_list: Path | None = None

    def __post_init__(self):
        frac = Fraction(self.labeled_fraction)
        if not 0 < frac < 1:
            raise ConfigError(f"labeled_fraction must be in (0, 1), got {frac}")
        object.__setattr__(self, "labeled_fraction", frac)


# ---------------------------------------------------------------------------
# Analytic rasterization. Pixel (r, c) is the point (r, c) in the plane.


def rasterize_rectangle(h, w, top, left, height, width):
    """Axis-aligned box; rows top..top+height-1, cols left..left+width-1."""
    rr, cc = np.mgrid[0:h, 0:w]
    return (rr >= top) & (rr < top + height) & (cc >= left) & (cc < left + width)


def rasterize_circle(h, w, cy, cx, radius):
    """Disc membership (r-cy)^2 + (c-cx)^2 <= radius^2, boundary inclusive."""
    rr, cc = np.mgrid[0:h, 0:w]
    return (rr - cy) ** 2 + (cc - cx) ** 2 <= radius**2


def rasterize_triangle(h, w, v0, v1, v2):
    """Triangle membership via half-plane sign tests, edges inclusive.

    Vertices are (row, col) pairs in either winding order.
    """
    rr, cc = np.mgrid[0:h, 0:w]

    def cross(a, b):
        return (b[0] - a[0]) * (cc - a[1]) - (b[1] - a[1]) * (rr - a[0])

    s0, s1, s2 = cross(v0, v1), cross(v1, v2), cross(v2, v0)
    return ((s0 >= 0) & (s1 >= 0) & (s2 >= 0)) | ((s0 <= 0) & (s1 <= 0) & (s2 <= 0))


@dataclass(frozen=True)
class ShapeInstance:
    kind: str  # element of SHAPE_KINDS
    color: tuple[float, float, float]
    geometry: tuple  # kind-specific parameters, see rasterize()

    def class_id(self) -> int:
        return SHAPE_KINDS.index(self.kind) + 1

    def rasterize(self, h: int, w: int) -> np.ndarray:
        if self.kind == "rectangle":
            return rasterize_rectangle(h, w, *self.geometry)
        if self.kind == "circle":
            return rasterize_circle(h, w, *self.geometry)
        if self.kind == "triangle":
            return rasterize_triangle(h, w, *self.geometry)
        raise ValueError(f"unknown shape kind {self.kind!r}")


def render_scene(size, background, texture, shapes, noise):
    """Compose one scene; later shapes overwrite earlier ones.

    background: base RGB tuple; texture/noise: [3, H, W] additive fields.
    Returns (image [3, H, W] float32 in [0, 1], label [H, W] uint8).
    """
    h, w = size
    image = np.empty((3, h, w), dtype=np.float64)
    image[:] = np.asarray(background)[:, None, None]
    image += texture
    label = np.zeros((h, w), dtype=np.uint8)
    for shape in shapes:
        mask = shape.rasterize(h, w)
        image[:, mask] = np.asarray(shape.color)[:, None]
        label[mask] = shape.class_id()
    image += noise
    return np.clip(image, 0.0, 1.0).astype(np.float32), label


def _sample_shape(kind, h, w, rng) -> tuple:
    """Geometry parameters for one shape, sized 20-45% of the short side."""
    short = min(h, w)
    lo, hi = max(3, int(0.20 * short)), max(4, int(0.45 * short))
    if kind == "rectangle":
        bh = int(rng.integers(lo, hi + 1))
        bw = int(rng.integers(lo, hi + 1))
        top = int(rng.integers(0, h - bh + 1))
        left = int(rng.integers(0, w - bw + 1))
        return (top, left, bh, bw)
    if kind == "circle":
        radius = int(rng.integers(max(2, lo // 2), max(3, hi // 2) + 1))
        cy = int(rng.integers(radius, h - radius))
        cx = int(rng.integers(radius, w - radius))
        return (cy, cx, radius)
    if kind == "triangle":
        # resample until the triangle is fat enough to be recognizable;
        # area >= 0.15*box^2 accepts ~14% of uniform draws, so 1000 tries
        # cannot realistically fail
        for _ in range(1000):
            box = int(rng.integers(lo, hi + 1))
            top = int(rng.integers(0, h - box))
            left = int(rng.integers(0, w - box))
            pts = rng.integers(0, box + 1, size=(3, 2)) + np.array([top, left])
            area = 0.5 * abs(
                (pts[1][0] - pts[0][0]) * (pts[2][1] - pts[0][1])
                - (pts[2][0] - pts[0][0]) * (pts[1][1] - pts[0][1])
            )
            if area >= 0.15 * box * box:
                return tuple((int(r), int(c)) for r, c in pts)
        raise RuntimeError("failed to sample a non-degenerate triangle")
    raise ValueError(f"unknown shape kind {kind!r}")


# Hue band centers per shape class (fractions of the color wheel). Bands are
# _HUE_SPREAD wide on each side, so neighboring classes overlap: inside the
# overlap zones color alone cannot identify the class and only the shape
# outline can. That keeps per-pixel color a strong but deliberately imperfect
# cue, which is what makes the segmentation task labeled-data-bound instead
# of trivially color-separable.
_HUE_CENTERS = {1: 0.0, 2: 1.0 / 3.0, 3: 2.0 / 3.0}
_HUE_SPREAD = 0.20


def _sample_color(rng, avoid, min_dist, class_id):
    """Saturated RGB from the class's hue band, min_dist away from `avoid`."""
    for _ in range(200):
        hue = (_HUE_CENTERS[class_id] + rng.uniform(-_HUE_SPREAD, _HUE_SPREAD)) % 1.0
        sat = rng.uniform(0.55, 1.0)
        val = rng.uniform(0.5, 1.0)
        color = colorsys.hsv_to_rgb(hue, sat, val)
        if np.linalg.norm(np.asarray(color) - np.asarray(avoid)) >= min_dist:
            return tuple(float(c) for c in color)
    raise RuntimeError("failed to sample a contrasting color")


def generate_synthetic_dataset(
    n_images: int,
    size: tuple[int, int],
    num_classes: int,
    seed: int,
    root,
    *,
    texture_amp: float = 0.22,
    noise_sigma: float = 0.05,
    min_contrast: float = 0.45,
    max_shapes: int = 3,
    background_only_prob: float = 0.04,
) -> DatasetSpec:
    """Write a deterministic synthetic dataset to `root` and return its spec.

    num_classes selects the shape vocabulary: 2 -> rectangles only, 3 -> plus
    circles, 4 -> plus triangles. More than 4 classes has no shape kind to
    represent it and is rejected.
    """
    h, w = size
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    if num_classes > 1 + len(SHAPE_KINDS):
        raise ConfigError(
            f"num_classes {num_classes} exceeds shape vocabulary ({1 + len(SHAPE_KINDS)} max)"
        )
    if min(h, w) < 16:
        raise ConfigError(f"size {size} too small to place a shape (min side 16)")
    if n_images < 1:
        raise ConfigError(f"n_images must be >= 1, got {n_images}")
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    kinds = SHAPE_KINDS[: num_classes - 1]
    streams = np.random.SeedSequence(seed).spawn(n_images)
    ids = []
    for i, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        background = tuple(float(c) for c in rng.uniform(0.25, 0.75, 3))
        coarse = rng.uniform(-texture_amp, texture_amp, (3, 8, 8))
        texture = np.stack(
            [ndimage.zoom(ch, (h / 8, w / 8), order=1, mode="nearest", grid_mode=True)
             for ch in coarse]
        )
        shapes = []
        if rng.uniform() >= background_only_prob:
            for _ in range(int(rng.integers(1, max_shapes + 1))):
                kind = kinds[int(rng.integers(0, len(kinds)))]
                class_id = SHAPE_KINDS.index(kind) + 1
                shapes.append(ShapeInstance(
                    kind=kind,
                    color=_sample_color(rng, background, min_contrast, class_id),
                    geometry=_sample_shape(kind, h, w, rng),
                ))
        noise = rng.normal(0.0, noise_sigma, (3, h, w))
        image, label = render_scene((h, w), background, texture, shapes, noise)
        sample_id = f"img_{i:05d}"
        ids.append(sample_id)
        Image.fromarray(
            (image * 255.0).round().astype(np.uint8).transpose(1, 2, 0), mode="RGB"
        ).save(root / "images" / f"{sample_id}.png")
        Image.fromarray(label, mode="L").save(root / "masks" / f"{sample_id}.png")
    (root / "manifest").write_text("".join(f"{sid}\n" for sid in ids))
    meta = {
        "kind": "synthetic",
        "n_images": n_images,
        "size": [h, w],
        "num_classes": num_classes,
        "seed": seed,
        "format_version": 1,
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return DatasetSpec(kind="synthetic", root=root, num_classes=num_classes)


# ---------------------------------------------------------------------------
# Loading


@dataclass
class SegDataset:
    spec: DatasetSpec
    samples: list[SegSample]
    unusable_ids: frozenset[str]  # masks that are entirely ignore_index

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def by_id(self, sample_id: str) -> SegSample:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(f"no sample with id {sample_id!r}")

    def subset(self, ids) -> list[SegSample]:
        wanted = set(ids)
        found = [s for s in self.samples if s.id in wanted]
        if len(found) != len(wanted):
            missing = wanted - {s.id for s in found}
            raise KeyError(f"ids not in dataset: {sorted(missing)}")
        return found


def as_unlabeled(sample: SegSample) -> SegSample:
    """Copy with ground truth hidden, for the unlabeled side of a split."""
    return SegSample(id=sample.id, image=sample.image, label=None)


def load_cityscapes_remap(ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """256-entry raw-id -> train-id lookup from the packaged table."""
    table = np.full(256, ignore_index, dtype=np.int64)
    text = (resources.files("cwseg") / "cityscapes_remap.txt").read_text()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        raw, train = (int(tok) for tok in line.split())
        table[raw] = train
    return table


def _read_ids(root: Path) -> list[str]:
    manifest = root / "manifest"
    if manifest.exists():
        ids = [ln.strip() for ln in manifest.read_text().splitlines() if ln.strip()]
    else:
        ids = sorted(p.stem for p in (root / "images").glob("*.png"))
    if not ids:
        raise ConfigError(f"no samples found under {root}")
    return ids


def load_segmentation_dataset(spec: DatasetSpec) -> SegDataset:
    """Eagerly load a dataset directory into memory.

    Masks are read as palette or integer images. For cityscapes-layout the
    packaged remap table converts raw ids to train ids. Out-of-range class
    values elsewhere are mapped to ignore_index with a warning.
    """
    root = spec.root
    if not (root / "images").is_dir() or not (root / "masks").is_dir():
        raise ConfigError(f"dataset root {root} lacks images/ and masks/ directories")
    ids = _read_ids(root)
    missing = [sid for sid in ids if not (root / "masks" / f"{sid}.png").exists()]
    if missing:
        raise ConfigError(f"masks missing for ids: {missing}")
    remap = load_cityscapes_remap(spec.ignore_index) if spec.kind == "cityscapes-layout" else None
    samples, unusable = [], set()
    for sid in ids:
        with Image.open(root / "images" / f"{sid}.png") as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
        image = np.ascontiguousarray(rgb.transpose(2, 0, 1))
        with Image.open(root / "masks" / f"{sid}.png") as msk:
            if msk.mode not in ("L", "P", "I", "I;16"):
                msk = msk.convert("L")
            label = np.asarray(msk, dtype=np.int64)
        if remap is not None:
            label = remap[np.clip(label, 0, 255)]
        else:
            bad = (label >= spec.num_classes) & (label != spec.ignore_index)
            if bad.any():
                warnings.warn(
                    f"sample {sid!r}: {int(bad.sum())} pixels outside "
                    f"[0, {spec.num_classes}) mapped to ignore_index"
                )
                label = np.where(bad, spec.ignore_index, label)
        if (label == spec.ignore_index).all():
            unusable.add(sid)
        samples.append(SegSample(id=sid, image=image, label=label))
    return SegDataset(spec=spec, samples=samples, unusable_ids=frozenset(unusable))


# ---------------------------------------------------------------------------
# Splits


def make_splits(dataset: SegDataset, split: SplitSpec) -> tuple[list[str], list[str]]:
    """Deterministic labeled/unlabeled id partition, disjoint and exhaustive.

    Labeled count = round(fraction * N). An explicit id list file overrides
    the sampled split entirely.
    """
    ids = [s.id for s in dataset.samples]
    if split.explicit_list is not None:
        listed = [ln.strip() for ln in Path(split.explicit_list).read_text().splitlines()
                  if ln.strip()]
        unknown = set(listed) - set(ids)
        if unknown:
            raise ConfigError(f"explicit split lists unknown ids: {sorted(unknown)}")
        if not listed:
            raise ConfigError("explicit split list is empty")
        labeled = sorted(set(listed))
        unlabeled = sorted(set(ids) - set(listed))
        return labeled, unlabeled
    n = len(ids)
    n_labeled = round(float(split.labeled_fraction) * n)
    if n_labeled == 0:
        raise ConfigError(
            f"labeled fraction {split.labeled_fraction} of {n} samples rounds to zero"
        )
    if n_labeled >= n:
        raise ConfigError(
            f"labeled fraction {split.labeled_fraction} of {n} samples leaves none unlabeled"
        )
    order = np.random.default_rng(split.seed).permutation(n)
    labeled = sorted(ids[i] for i in order[:n_labeled])
    unlabeled = sorted(ids[i] for i in order[n_labeled:])
    return labeled, unlabeled


def write_split_file(path, ids) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(f"{sid}\n" for sid in ids))
