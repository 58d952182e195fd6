"""Dataset tests: rasterization oracles, generator determinism, loaders, splits."""

import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from cwseg.core import IGNORE_INDEX, ConfigError, SegSample
from cwseg.data import (
    DatasetSpec,
    SegDataset,
    ShapeInstance,
    SplitSpec,
    as_unlabeled,
    generate_synthetic_dataset,
    load_cityscapes_remap,
    load_segmentation_dataset,
    make_splits,
    rasterize_circle,
    rasterize_rectangle,
    rasterize_triangle,
    render_scene,
    write_split_file,
)


# --- independent membership oracles (pure-python ints, no broadcasting) ----


def in_circle(r, c, cy, cx, radius):
    return (r - cy) ** 2 + (c - cx) ** 2 <= radius * radius


def in_triangle(p, v0, v1, v2):
    # point is inside iff, for each edge, it lies on the same side as the
    # remaining vertex (boundary counts as inside)
    for a, b, other in ((v0, v1, v2), (v1, v2, v0), (v2, v0, v1)):
        def side(q):
            return (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0])

        so, sp = side(other), side(p)
        if so > 0 and sp < 0:
            return False
        if so < 0 and sp > 0:
            return False
    return True


def test_rectangle_rasterization_exact():
    mask = rasterize_rectangle(8, 10, 2, 3, 4, 5)
    expect = np.zeros((8, 10), dtype=bool)
    expect[2:6, 3:8] = True
    assert np.array_equal(mask, expect)


def test_circle_pixel_count_hand_derived():
    # integer points with dr^2 + dc^2 <= 4: center, four at distance 1,
    # four at sqrt(2), four at distance 2 -> 13 pixels
    mask = rasterize_circle(9, 9, 4, 4, 2)
    assert mask.sum() == 13
    assert mask[4, 4] and mask[4, 6] and mask[2, 4]
    assert not mask[2, 2]  # dr^2+dc^2 = 8 > 4


def test_circle_matches_membership_oracle(rng):
    for _ in range(20):
        h, w = 12, 15
        radius = int(rng.integers(1, 5))
        cy = int(rng.integers(0, h))
        cx = int(rng.integers(0, w))
        mask = rasterize_circle(h, w, cy, cx, radius)
        for r in range(h):
            for c in range(w):
                assert mask[r, c] == in_circle(r, c, cy, cx, radius)


def test_triangle_matches_membership_oracle(rng):
    for _ in range(30):
        verts = [tuple(int(v) for v in rng.integers(0, 10, 2)) for _ in range(3)]
        mask = rasterize_triangle(10, 10, *verts)
        for r in range(10):
            for c in range(10):
                assert mask[r, c] == in_triangle((r, c), *verts), (verts, r, c)


def test_triangle_winding_order_irrelevant(rng):
    for _ in range(10):
        v0, v1, v2 = (tuple(int(v) for v in rng.integers(0, 12, 2)) for _ in range(3))
        assert np.array_equal(
            rasterize_triangle(12, 12, v0, v1, v2), rasterize_triangle(12, 12, v2, v1, v0)
        )


def test_render_scene_later_shapes_overwrite():
    quiet = np.zeros((3, 8, 8))
    rect = ShapeInstance("rectangle", (1.0, 0.0, 0.0), (1, 1, 4, 4))
    circ = ShapeInstance("circle", (0.0, 1.0, 0.0), (3, 3, 2))
    _, lab_rc = render_scene((8, 8), (0.5, 0.5, 0.5), quiet, [rect, circ], quiet)
    _, lab_cr = render_scene((8, 8), (0.5, 0.5, 0.5), quiet, [circ, rect], quiet)
    overlap = rect.rasterize(8, 8) & circ.rasterize(8, 8)
    assert overlap.any()
    assert (lab_rc[overlap] == 2).all()  # circle drawn last wins
    assert (lab_cr[overlap] == 1).all()


def test_render_scene_no_shapes_is_all_background():
    quiet = np.zeros((3, 6, 6))
    image, label = render_scene((6, 6), (0.3, 0.6, 0.2), quiet, [], quiet)
    assert (label == 0).all()
    assert np.allclose(image, np.array([0.3, 0.6, 0.2])[:, None, None], atol=1e-6)


def test_rendered_circle_label_equals_analytic_membership():
    quiet = np.zeros((3, 16, 16))
    circ = ShapeInstance("circle", (0.9, 0.1, 0.1), (7, 8, 4))
    _, label = render_scene((16, 16), (0.4, 0.4, 0.4), quiet, [circ], quiet)
    for r in range(16):
        for c in range(16):
            assert (label[r, c] == 2) == in_circle(r, c, 7, 8, 4)


# --- generator ---------------------------------------------------------------


@pytest.fixture(scope="module")
def gen_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("gen")
    spec = generate_synthetic_dataset(40, (24, 24), 4, seed=1, root=root)
    return spec


def test_generation_is_deterministic(tmp_path):
    a = generate_synthetic_dataset(6, (24, 24), 4, seed=5, root=tmp_path / "a")
    b = generate_synthetic_dataset(6, (24, 24), 4, seed=5, root=tmp_path / "b")
    for rel in sorted(p.relative_to(a.root) for p in a.root.rglob("*") if p.is_file()):
        assert (a.root / rel).read_bytes() == (b.root / rel).read_bytes(), rel


def test_generated_dataset_layout(gen_root):
    root = gen_root.root
    ids = [ln for ln in (root / "manifest").read_text().splitlines() if ln]
    assert len(ids) == 40
    for sid in ids:
        assert (root / "images" / f"{sid}.png").exists()
        assert (root / "masks" / f"{sid}.png").exists()


def test_generated_labels_and_images(gen_root):
    ds = load_segmentation_dataset(gen_root)
    assert len(ds) == 40
    seen = set()
    n_background_only = 0
    for s in ds:
        assert s.image.shape == (3, 24, 24) and s.image.dtype == np.float32
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert s.label.shape == (24, 24)
        seen.update(np.unique(s.label).tolist())
        if (s.label == 0).all():
            n_background_only += 1
    assert seen == {0, 1, 2, 3}
    assert n_background_only >= 1  # background-only scenes do occur
    assert ds.unusable_ids == frozenset()


def test_generator_rejects_bad_parameters(tmp_path):
    with pytest.raises(ConfigError, match="too small"):
        generate_synthetic_dataset(2, (8, 8), 4, seed=0, root=tmp_path / "x")
    with pytest.raises(ConfigError, match="num_classes"):
        generate_synthetic_dataset(2, (24, 24), 1, seed=0, root=tmp_path / "y")
    with pytest.raises(ConfigError, match="num_classes"):
        generate_synthetic_dataset(2, (24, 24), 9, seed=0, root=tmp_path / "z")
    with pytest.raises(ConfigError, match="n_images"):
        generate_synthetic_dataset(0, (24, 24), 4, seed=0, root=tmp_path / "w")


def test_num_classes_limits_shape_vocabulary(tmp_path):
    spec = generate_synthetic_dataset(12, (24, 24), 2, seed=3, root=tmp_path / "k2")
    ds = load_segmentation_dataset(spec)
    values = set(np.unique(np.concatenate([s.label.ravel() for s in ds])).tolist())
    assert values <= {0, 1}  # rectangles only


# --- loader ------------------------------------------------------------------


def write_rgb(path, h=8, w=8):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.zeros((h, w, 3), dtype=np.uint8), mode="RGB").save(path)


def write_mask(path, arr):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="L").save(path)


def test_loader_round_trips_mask_values(gen_root):
    ds = load_segmentation_dataset(gen_root)
    sid = ds.samples[0].id
    with Image.open(gen_root.root / "masks" / f"{sid}.png") as m:
        raw = np.asarray(m, dtype=np.int64)
    assert np.array_equal(ds.by_id(sid).label, raw)


def test_loader_missing_mask_lists_ids(tmp_path):
    write_rgb(tmp_path / "images" / "a.png")
    write_rgb(tmp_path / "images" / "b.png")
    write_mask(tmp_path / "masks" / "a.png", np.zeros((8, 8)))
    spec = DatasetSpec(kind="synthetic", root=tmp_path, num_classes=4)
    with pytest.raises(ConfigError, match="b"):
        load_segmentation_dataset(spec)


def test_loader_flags_all_ignore_masks_unusable(tmp_path):
    write_rgb(tmp_path / "images" / "a.png")
    write_rgb(tmp_path / "images" / "b.png")
    write_mask(tmp_path / "masks" / "a.png", np.full((8, 8), IGNORE_INDEX))
    write_mask(tmp_path / "masks" / "b.png", np.zeros((8, 8)))
    spec = DatasetSpec(kind="synthetic", root=tmp_path, num_classes=4)
    ds = load_segmentation_dataset(spec)
    assert ds.unusable_ids == frozenset({"a"})
    assert (ds.by_id("a").label == IGNORE_INDEX).all()


def test_loader_warns_and_ignores_out_of_range_classes(tmp_path):
    write_rgb(tmp_path / "images" / "a.png")
    mask = np.zeros((8, 8))
    mask[0, :3] = 9  # >= num_classes and not the ignore index
    write_mask(tmp_path / "masks" / "a.png", mask)
    spec = DatasetSpec(kind="synthetic", root=tmp_path, num_classes=4)
    with pytest.warns(UserWarning, match="ignore_index"):
        ds = load_segmentation_dataset(spec)
    assert (ds.by_id("a").label[0, :3] == IGNORE_INDEX).all()
    assert (ds.by_id("a").label[1:] == 0).all()


def test_loader_decodes_palette_masks_by_index(tmp_path):
    write_rgb(tmp_path / "images" / "a.png")
    idx = np.zeros((8, 8), dtype=np.uint8)
    idx[2:5, 2:5] = 3
    img = Image.fromarray(idx, mode="P")
    img.putpalette([0, 0, 0, 255, 0, 0, 0, 255, 0, 0, 0, 255] + [0] * 756)
    (tmp_path / "masks").mkdir()
    img.save(tmp_path / "masks" / "a.png")
    spec = DatasetSpec(kind="synthetic", root=tmp_path, num_classes=4)
    ds = load_segmentation_dataset(spec)
    assert np.array_equal(ds.by_id("a").label, idx.astype(np.int64))


def test_loader_without_manifest_uses_sorted_stems(tmp_path):
    for sid in ("zebra", "apple"):
        write_rgb(tmp_path / "images" / f"{sid}.png")
        write_mask(tmp_path / "masks" / f"{sid}.png", np.zeros((8, 8)))
    spec = DatasetSpec(kind="synthetic", root=tmp_path, num_classes=4)
    ds = load_segmentation_dataset(spec)
    assert [s.id for s in ds] == ["apple", "zebra"]


def test_loader_requires_layout(tmp_path):
    with pytest.raises(ConfigError, match="images/"):
        load_segmentation_dataset(DatasetSpec(kind="synthetic", root=tmp_path, num_classes=4))


# --- cityscapes remap --------------------------------------------------------


def test_remap_table_matches_shipped_file():
    # independently parse the packaged table and compare entry by entry
    from importlib import resources

    text = (resources.files("cwseg") / "cityscapes_remap.txt").read_text()
    pairs = {}
    for line in text.splitlines():
        body = line.split("#", 1)[0].strip()
        if body:
            raw, train = body.split()
            pairs[int(raw)] = int(train)
    table = load_cityscapes_remap()
    for raw in range(256):
        assert table[raw] == pairs.get(raw, IGNORE_INDEX)
    assert sorted(pairs.values()) == list(range(19))  # 19 train classes, each once


def test_remap_known_pairs():
    table = load_cityscapes_remap()
    assert table[7] == 0  # road
    assert table[26] == 13  # car
    assert table[33] == 18  # bicycle
    assert table[0] == IGNORE_INDEX  # unlisted raw id


def test_cityscapes_layout_applies_remap(tmp_path):
    write_rgb(tmp_path / "images" / "a.png")
    mask = np.full((8, 8), 7, dtype=np.uint8)  # road everywhere
    mask[0] = 26  # one row of cars
    mask[1] = 5  # unlisted raw id
    write_mask(tmp_path / "masks" / "a.png", mask)
    spec = DatasetSpec(kind="cityscapes-layout", root=tmp_path, num_classes=19)
    ds = load_segmentation_dataset(spec)
    lab = ds.by_id("a").label
    assert (lab[0] == 13).all()
    assert (lab[1] == IGNORE_INDEX).all()
    assert (lab[2:] == 0).all()


# --- splits ------------------------------------------------------------------


def fake_dataset(n, tmp_path):
    image = np.zeros((3, 8, 8), dtype=np.float32)
    samples = [SegSample(f"s{i:04d}", image) for i in range(n)]
    spec = DatasetSpec(kind="synthetic", root=tmp_path, num_classes=4)
    return SegDataset(spec=spec, samples=samples, unusable_ids=frozenset())


def test_split_half_of_ten(tmp_path):
    ds = fake_dataset(10, tmp_path)
    lab, unl = make_splits(ds, SplitSpec(Fraction(1, 2), seed=0))
    assert len(lab) == 5 and len(unl) == 5
    assert set(lab) | set(unl) == {s.id for s in ds.samples}
    assert set(lab) & set(unl) == set()


def test_split_deterministic_per_seed(tmp_path):
    ds = fake_dataset(60, tmp_path)
    a = make_splits(ds, SplitSpec(Fraction(1, 4), seed=9))
    b = make_splits(ds, SplitSpec(Fraction(1, 4), seed=9))
    c = make_splits(ds, SplitSpec(Fraction(1, 4), seed=10))
    assert a == b
    assert a != c


def test_split_one_thirtieth_of_3000_gives_100_labeled(tmp_path):
    ds = fake_dataset(3000, tmp_path)
    lab, unl = make_splits(ds, SplitSpec(Fraction(1, 30), seed=0))
    assert len(lab) == 100
    assert len(unl) == 2900


def test_split_rejects_degenerate_counts(tmp_path):
    with pytest.raises(ConfigError, match="zero"):
        make_splits(fake_dataset(10, tmp_path), SplitSpec(Fraction(1, 100), seed=0))
    with pytest.raises(ConfigError, match="none unlabeled"):
        make_splits(fake_dataset(2, tmp_path), SplitSpec(Fraction(9, 10), seed=0))
    with pytest.raises(ConfigError):
        SplitSpec(Fraction(3, 2))
    with pytest.raises(ConfigError):
        SplitSpec(Fraction(0, 1))


def test_split_explicit_list_overrides(tmp_path):
    ds = fake_dataset(8, tmp_path)
    listing = tmp_path / "split.txt"
    write_split_file(listing, ["s0003", "s0005"])
    lab, unl = make_splits(ds, SplitSpec(Fraction(1, 2), seed=0, explicit_list=listing))
    assert lab == ["s0003", "s0005"]
    assert len(unl) == 6 and not set(lab) & set(unl)


def test_split_explicit_list_unknown_id(tmp_path):
    ds = fake_dataset(4, tmp_path)
    listing = tmp_path / "split.txt"
    write_split_file(listing, ["nope"])
    with pytest.raises(ConfigError, match="unknown ids"):
        make_splits(ds, SplitSpec(Fraction(1, 2), seed=0, explicit_list=listing))


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(min_value=2, max_value=50),
    num=st.integers(min_value=1, max_value=9),
    den=st.integers(min_value=2, max_value=10),
    seed=st.integers(min_value=0, max_value=3),
)
def test_split_partition_property(n, num, den, seed, tmp_path_factory):
    if num >= den:
        return
    frac = Fraction(num, den)
    n_lab = round(float(frac) * n)
    ds = fake_dataset(n, tmp_path_factory.mktemp("prop"))
    if n_lab == 0 or n_lab >= n:
        with pytest.raises(ConfigError):
            make_splits(ds, SplitSpec(frac, seed=seed))
        return
    lab, unl = make_splits(ds, SplitSpec(frac, seed=seed))
    assert len(lab) == n_lab
    assert sorted(lab + unl) == [s.id for s in ds.samples]
    assert not set(lab) & set(unl)


def test_as_unlabeled_hides_ground_truth():
    s = SegSample("x", np.zeros((3, 8, 8), dtype=np.float32), np.zeros((8, 8), dtype=np.int64))
    u = as_unlabeled(s)
    assert u.label is None and u.id == "x"
    assert u.image is s.image
