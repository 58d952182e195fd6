"""Pseudo-label machinery: thresholding, retention, decay, persistence."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cwseg.core import SegBatch, SegSample, argmax_labels, max_confidence, softmax_probs
from cwseg.pseudo import (
    DecayConfig,
    PseudoLabelState,
    PseudoRecord,
    ThresholdState,
    apply_confidence_decay,
    batch_mean_confidence,
    decay_all,
    generate_pseudo_labels,
    load_pseudo_state,
    refresh_from_teacher,
    retain_mask,
    save_pseudo_state,
    update_threshold,
)


def oracle_threshold(t0, beta, mean_conf, lo, hi):
    raw = t0 / (1.0 + math.exp(-beta * (mean_conf - 0.5)))
    return min(max(raw, lo), hi)


class ConstantLogitModel:
    """Forward stub: fixed per-class logits at every pixel."""

    def __init__(self, class_logits):
        self.class_logits = np.asarray(class_logits, dtype=np.float64)

    def __call__(self, images):
        n, _, h, w = images.shape
        k = self.class_logits.size
        return np.tile(self.class_logits.reshape(1, k, 1, 1), (n, 1, h, w))


# ---------------------------------------------------------------- threshold


def test_threshold_state_defaults_and_clamping():
    st8 = ThresholdState()
    assert st8.t0 == 0.6 and st8.beta == 0.5
    assert st8.clamp_low == 0.3 and st8.clamp_high == 0.8
    assert st8.value == 0.6
    low_start = ThresholdState(t0=0.1)
    assert low_start.value == 0.3


def test_threshold_state_validation():
    with pytest.raises(ValueError):
        ThresholdState(clamp_low=0.0)
    with pytest.raises(ValueError):
        ThresholdState(clamp_low=0.9, clamp_high=0.3)
    with pytest.raises(ValueError):
        ThresholdState(t0=-0.5)


def test_update_threshold_midpoint_gives_half_t0():
    state = update_threshold(ThresholdState(), 0.5)
    assert state.value == pytest.approx(0.30, abs=1e-12)


def test_update_threshold_full_confidence_value():
    state = update_threshold(ThresholdState(), 1.0)
    expected = 0.6 / (1.0 + math.exp(-0.25))
    assert state.value == pytest.approx(expected, abs=1e-12)
    assert abs(state.value - 0.3374) < 2e-4


def test_update_threshold_zero_beta_constant():
    for conf in (0.0, 0.3, 0.9, 1.0):
        state = update_threshold(ThresholdState(beta=0.0), conf)
        assert state.value == pytest.approx(0.30, abs=1e-12)


def test_update_threshold_matches_scalar_oracle(rng):
    for _ in range(50):
        t0 = float(rng.uniform(0.2, 1.0))
        beta = float(rng.uniform(0.0, 4.0))
        conf = float(rng.uniform(0.0, 1.0))
        state = ThresholdState(t0=t0, beta=beta)
        got = update_threshold(state, conf).value
        assert got == pytest.approx(oracle_threshold(t0, beta, conf, 0.3, 0.8), rel=1e-12)


def test_update_threshold_static_mode_never_moves():
    state = ThresholdState(dynamic=False)
    for conf in (0.0, 0.5, 1.0):
        assert update_threshold(state, conf).value == 0.6


def test_update_threshold_rejects_out_of_range():
    with pytest.raises(ValueError):
        update_threshold(ThresholdState(), 1.5)


@settings(max_examples=50)
@given(st.floats(0, 1), st.floats(0, 1))
def test_threshold_monotone_in_mean_confidence(a, b):
    lo, hi = min(a, b), max(a, b)
    state = ThresholdState(beta=2.0)
    assert update_threshold(state, lo).value <= update_threshold(state, hi).value + 1e-15


@settings(max_examples=50)
@given(st.floats(0, 1), st.floats(0.2, 1.0), st.floats(0, 5))
def test_threshold_always_inside_clamp_band(conf, t0, beta):
    state = update_threshold(ThresholdState(t0=t0, beta=beta), conf)
    assert 0.3 <= state.value <= 0.8


# ------------------------------------------------------ batch mean confidence


def test_batch_mean_is_mean_of_per_image_means():
    a = np.full((2, 2), 0.4)
    b = np.full((3, 3), 0.8)
    assert batch_mean_confidence([a, b]) == pytest.approx(0.6, abs=1e-12)


def test_batch_mean_not_pooled_pixel_mean():
    big = np.ones((4, 4))
    small = np.zeros((2, 2))
    got = batch_mean_confidence([big, small])
    assert got == pytest.approx(0.5, abs=1e-12)
    pooled = np.concatenate([big.ravel(), small.ravel()]).mean()
    assert pooled == pytest.approx(0.8)
    assert got != pytest.approx(pooled)


def test_batch_mean_single_image(rng):
    conf = rng.random((5, 5))
    assert batch_mean_confidence([conf]) == pytest.approx(conf.mean(), rel=1e-12)


def test_batch_mean_respects_valid_masks():
    conf = np.array([[1.0, 0.0], [0.0, 0.0]])
    valid = np.array([[True, False], [False, False]])
    assert batch_mean_confidence([conf], [valid]) == pytest.approx(1.0)


def test_batch_mean_empty_inputs_rejected():
    with pytest.raises(ValueError):
        batch_mean_confidence([])
    conf = np.ones((2, 2))
    with pytest.raises(ValueError):
        batch_mean_confidence([conf], [np.zeros((2, 2), dtype=bool)])


def test_batch_mean_matches_loop_oracle(rng):
    confs = [rng.random((rng.integers(2, 5), rng.integers(2, 5))) for _ in range(4)]
    want = sum(float(c.mean()) for c in confs) / len(confs)
    assert batch_mean_confidence(confs) == pytest.approx(want, rel=1e-12)


# ------------------------------------------------------------------ retention


def test_retain_mask_inclusive_at_threshold():
    conf = np.array([[0.8, 0.79999], [0.80001, 1.0]])
    got = retain_mask(conf, 0.8)
    assert np.array_equal(got, [[True, False], [True, True]])


def test_retain_mask_all_and_none():
    conf = np.ones((3, 3))
    assert retain_mask(conf, 0.8).all()
    assert not retain_mask(np.zeros((3, 3)), 0.1).any()
    assert retain_mask(np.zeros((3, 3)), 0.0).all()


def test_retain_mask_matches_elementwise_scan(rng):
    conf = rng.random((6, 6))
    t = float(rng.uniform(0.2, 0.8))
    got = retain_mask(conf, t)
    for r in range(6):
        for c in range(6):
            assert got[r, c] == (conf[r, c] >= t)


# ------------------------------------------------------- pseudo-label output


def image_batch(n, h=8, w=8):
    return SegBatch([SegSample(f"s{i}", np.zeros((3, h, w), dtype=np.float32)) for i in range(n)])


def test_generate_pseudo_labels_constant_teacher():
    model = ConstantLogitModel([0.0, 0.0, 5.0, 0.0])
    out = generate_pseudo_labels(model, image_batch(2))
    assert len(out) == 2
    for labels, conf in out:
        assert (labels == 2).all()
        e5 = math.exp(5.0)
        assert np.allclose(conf, e5 / (e5 + 3.0))


def test_generate_pseudo_labels_matches_componentwise(rng):
    logits = rng.normal(size=(2, 4, 8, 8))

    def model(images):
        return logits

    out = generate_pseudo_labels(model, image_batch(2))
    for i, (labels, conf) in enumerate(out):
        assert np.array_equal(labels, argmax_labels(logits[i]))
        assert np.allclose(conf, max_confidence(softmax_probs(logits[i])))
        assert conf.dtype == np.float64


def test_generate_pseudo_labels_deterministic(rng):
    logits = rng.normal(size=(1, 3, 8, 8))
    model = lambda images: logits  # noqa: E731
    a = generate_pseudo_labels(model, image_batch(1))
    b = generate_pseudo_labels(model, image_batch(1))
    assert np.array_equal(a[0][0], b[0][0])
    assert np.array_equal(a[0][1], b[0][1])


def test_generate_pseudo_labels_rejects_bad_shapes():
    with pytest.raises(ValueError):
        generate_pseudo_labels(lambda x: np.zeros((2, 1, 8, 8)), image_batch(2))
    with pytest.raises(ValueError):
        generate_pseudo_labels(lambda x: np.zeros((1, 4, 8, 8)), image_batch(2))


# ---------------------------------------------------------------------- decay


def make_state(conf, threshold=0.3):
    labels = np.zeros(conf.shape, dtype=np.int64)
    rec = PseudoRecord(labels, conf.astype(np.float64), retain_mask(conf, threshold))
    return PseudoLabelState(records={"s": rec})


def test_decay_above_threshold_unchanged():
    state = make_state(np.full((2, 2), 0.9))
    out = apply_confidence_decay(state, "s", 0.3, DecayConfig(alpha=0.9))
    assert np.allclose(out.get("s").confidence, 0.9)


def test_decay_below_threshold_single_step():
    state = make_state(np.full((2, 2), 0.2))
    out = apply_confidence_decay(state, "s", 0.3, DecayConfig(alpha=0.9))
    assert np.allclose(out.get("s").confidence, 0.18)
    assert not out.get("s").retain.any()


def test_decay_five_consecutive_epochs():
    state = make_state(np.full((1, 1), 0.2))
    for _ in range(5):
        state = apply_confidence_decay(state, "s", 0.3, DecayConfig(alpha=0.9))
    assert state.get("s").confidence[0, 0] == pytest.approx(0.2 * 0.9**5, rel=1e-12)


def test_decay_geometric_law_exact():
    for alpha in (0.85, 0.9):
        for n in range(1, 21):
            state = make_state(np.full((1, 1), 0.25))
            for _ in range(n):
                state = apply_confidence_decay(state, "s", 0.3, DecayConfig(alpha=alpha))
            got = state.get("s").confidence[0, 0]
            assert got == pytest.approx(0.25 * alpha**n, rel=1e-12)


def test_decay_mixed_pixels_and_retention_recompute():
    conf = np.array([[0.9, 0.2], [0.31, 0.29]])
    state = make_state(conf, threshold=0.3)
    out = apply_confidence_decay(state, "s", 0.3, DecayConfig(alpha=0.5))
    rec = out.get("s")
    assert np.allclose(rec.confidence, [[0.9, 0.1], [0.31, 0.145]])
    assert np.array_equal(rec.retain, [[True, False], [True, False]])


def test_decay_disabled_only_recomputes_retention():
    conf = np.array([[0.2, 0.9]])
    state = make_state(conf, threshold=0.3)
    out = apply_confidence_decay(state, "s", 0.5, DecayConfig(enabled=False))
    rec = out.get("s")
    assert np.allclose(rec.confidence, [[0.2, 0.9]])
    assert np.array_equal(rec.retain, [[False, True]])


def test_decay_alpha_one_is_identity_on_confidence():
    conf = np.array([[0.2, 0.9]])
    state = make_state(conf)
    out = apply_confidence_decay(state, "s", 0.3, DecayConfig(alpha=1.0))
    assert np.allclose(out.get("s").confidence, conf)


def test_decay_unknown_sample_raises():
    state = make_state(np.full((1, 1), 0.5))
    with pytest.raises(KeyError):
        apply_confidence_decay(state, "nope", 0.3, DecayConfig())


def test_decay_all_touches_every_record(rng):
    recs = {}
    originals = {}
    for i in range(3):
        conf = rng.random((2, 2))
        originals[f"s{i}"] = conf.copy()
        recs[f"s{i}"] = PseudoRecord(
            np.zeros((2, 2), dtype=np.int64), conf, retain_mask(conf, 0.5)
        )
    state = PseudoLabelState(records=recs)
    out = decay_all(state, 0.5, DecayConfig(alpha=0.8))
    for sid, conf in originals.items():
        expected = np.where(conf < 0.5, conf * 0.8, conf)
        assert np.allclose(out.get(sid).confidence, expected)


def test_decay_config_validation():
    with pytest.raises(ValueError):
        DecayConfig(alpha=0.0)
    with pytest.raises(ValueError):
        DecayConfig(alpha=1.2)
    DecayConfig(alpha=1.0)


@settings(max_examples=40)
@given(st.floats(0.01, 1.0), st.floats(0.5, 1.0), st.integers(1, 10))
def test_decay_never_increases_confidence(p0, alpha, n):
    state = make_state(np.full((1, 1), p0))
    values = [p0]
    for _ in range(n):
        state = apply_confidence_decay(state, "s", 0.99, DecayConfig(alpha=alpha))
        values.append(float(state.get("s").confidence[0, 0]))
    for earlier, later in zip(values, values[1:]):
        assert later <= earlier + 1e-15
        assert 0.0 <= later <= 1.0


# ------------------------------------------------------------------- refresh


def test_refresh_overwrites_with_fresh_teacher_outputs(rng):
    images = rng.random((3, 3, 8, 8)).astype(np.float32)
    samples = [SegSample(sid, images[i]) for i, sid in enumerate("abc")]
    model = ConstantLogitModel([3.0, 0.0, 0.0])

    stale = PseudoLabelState(
        records={
            s.id: PseudoRecord(
                np.full((8, 8), 2, dtype=np.int64),
                np.full((8, 8), 0.01),
                np.zeros((8, 8), dtype=bool),
            )
            for s in samples
        }
    )
    fresh = refresh_from_teacher(stale, model, samples, threshold=0.3, epoch=4)
    expected = generate_pseudo_labels(model, SegBatch(samples))
    for i, s in enumerate(samples):
        rec = fresh.get(s.id)
        assert np.array_equal(rec.labels, expected[i][0])
        assert np.allclose(rec.confidence, expected[i][1])
        assert rec.retain.all()
    assert fresh.epoch_of_last_refresh == 4


def test_refresh_idempotent_for_fixed_teacher(rng):
    images = rng.random((2, 3, 8, 8)).astype(np.float32)
    samples = [SegSample(sid, images[i]) for i, sid in enumerate("ab")]
    model = ConstantLogitModel([0.0, 1.0])
    state = PseudoLabelState(records={})
    once = refresh_from_teacher(state, model, samples, threshold=0.3)
    first = {sid: (once.get(sid).labels.copy(), once.get(sid).confidence.copy()) for sid in "ab"}
    twice = refresh_from_teacher(once, model, samples, threshold=0.3)
    for sid in ("a", "b"):
        assert np.array_equal(first[sid][0], twice.get(sid).labels)
        assert np.array_equal(first[sid][1], twice.get(sid).confidence)


# --------------------------------------------------------------- persistence


def test_pseudo_state_roundtrip(tmp_path, rng):
    recs = {}
    for i in range(3):
        conf = rng.random((4, 4))
        recs[f"img_{i:03d}"] = PseudoRecord(
            rng.integers(0, 4, (4, 4)).astype(np.int64), conf, retain_mask(conf, 0.4)
        )
    state = PseudoLabelState(records=recs, epoch_of_last_refresh=7)
    path = tmp_path / "pseudo.npz"
    save_pseudo_state(path, state)
    loaded = load_pseudo_state(path)
    assert loaded.epoch_of_last_refresh == 7
    assert set(loaded.records) == set(recs)
    for sid, rec in recs.items():
        got = loaded.get(sid)
        assert np.array_equal(got.labels, rec.labels)
        assert np.array_equal(got.confidence, rec.confidence)
        assert np.array_equal(got.retain, rec.retain)
