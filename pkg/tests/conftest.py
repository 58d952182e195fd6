"""Shared fixtures: tiny random inputs and a toy dataset on disk."""

from __future__ import annotations

from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from cwseg.data import (
    SplitSpec,
    generate_synthetic_dataset,
    load_segmentation_dataset,
    make_splits,
)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_logits(rng, k=3, h=5, w=5, scale=3.0):
    return rng.normal(0.0, scale, (k, h, w))


def random_labels(rng, k=3, h=5, w=5, ignore_frac=0.0, ignore_index=255):
    labels = rng.integers(0, k, (h, w)).astype(np.int64)
    if ignore_frac > 0:
        mask = rng.random((h, w)) < ignore_frac
        labels[mask] = ignore_index
    return labels


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """24 images, 64x64, K=4, loaded once for loader/trainer tests."""
    root = tmp_path_factory.mktemp("data") / "tiny"
    spec = generate_synthetic_dataset(24, (64, 64), 4, seed=3, root=root)
    return load_segmentation_dataset(spec)


@pytest.fixture(scope="session")
def tiny_split(tiny_dataset):
    lab, unl = make_splits(tiny_dataset, SplitSpec(Fraction(1, 4), seed=0))
    return tiny_dataset.subset(lab), tiny_dataset.subset(unl)
