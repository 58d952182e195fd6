#! /usr/bin/env python3
"""Generate a small synthetic shapes dataset and look at what is in it.

Images are textured backgrounds with 0 to 3 shapes drawn on top. Each shape
kind is its own class (1 rectangle, 2 circle, 3 triangle) and draws its fill
color from a hue band that overlaps its neighbors, so color alone cannot
always identify the class.
"""

from fractions import Fraction
from pathlib import Path

import numpy as np

from cwseg.data import (
    SplitSpec,
    generate_synthetic_dataset,
    load_segmentation_dataset,
    make_splits,
)
from cwseg.visualize import image_to_rgb, label_to_rgb

OUT = Path(__file__).parent / "out" / "01_synthetic_data"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    root = OUT / "dataset"

    spec = generate_synthetic_dataset(24, (64, 64), num_classes=4, seed=7, root=root)
    print(f"wrote {root}")
    for p in sorted(root.rglob("*"))[:6]:
        print("  ", p.relative_to(root))
    print("   ...")

    ds = load_segmentation_dataset(spec)
    print(f"\nloaded {len(ds.samples)} samples, {ds.spec.num_classes} classes")

    counts = np.zeros(4, dtype=np.int64)
    for s in ds.samples:
        for k in range(4):
            counts[k] += int((s.label == k).sum())
    total = counts.sum()
    print("pixel share per class:")
    for k, name in enumerate(["background", "rectangle", "circle", "triangle"]):
        print(f"  {k} {name:10s} {100 * counts[k] / total:5.1f}%")

    # deterministic split: an eighth of the ids become the labeled subset
    labeled, unlabeled = make_splits(ds, SplitSpec(labeled_fraction=Fraction(1, 8), seed=0))
    print(f"\nsplit 1/8: {len(labeled)} labeled, {len(unlabeled)} unlabeled")
    print("labeled ids:", labeled)

    # montage of the first 6 image/label pairs
    from PIL import Image

    tiles = []
    for s in ds.samples[:6]:
        tiles.append(np.concatenate([image_to_rgb(s.image), label_to_rgb(s.label)], axis=0))
    montage = np.concatenate(tiles, axis=1)
    Image.fromarray(montage).save(OUT / "montage.png")
    print(f"\nmontage (top row images, bottom row labels): {OUT / 'montage.png'}")


if __name__ == "__main__":
    main()
