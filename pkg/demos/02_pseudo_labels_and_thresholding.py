#! /usr/bin/env python3
"""Pseudo-labels, the dynamic retention threshold, and confidence decay.

A briefly trained teacher predicts on unlabeled images. Every pixel gets a
pseudo-label (argmax) and a confidence (max softmax). Pixels whose confidence
clears the current threshold are retained for the student's loss. The
threshold itself is a logistic function of the batch mean confidence, clamped
to [0.3, 0.8], so it rises as the teacher grows confident. Pixels that stay
below it have their stored confidence multiplied by alpha each epoch.
"""

from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image

from cwseg.data import (
    SplitSpec,
    as_unlabeled,
    generate_synthetic_dataset,
    load_segmentation_dataset,
    make_splits,
)
from cwseg.pseudo import (
    DecayConfig,
    PseudoLabelState,
    ThresholdState,
    batch_mean_confidence,
    decay_all,
    generate_pseudo_labels,
    refresh_from_teacher,
    retain_mask,
    update_threshold,
)
from cwseg.train import TrainConfig, Trainer
from cwseg.visualize import label_to_rgb

OUT = Path(__file__).parent / "out" / "02_pseudo_labels"


def main():
    OUT.mkdir(parents=True, exist_ok=True)

    # the threshold law on its own
    state = ThresholdState(t0=0.6, beta=0.5, dynamic=True)
    print("threshold as a function of batch mean confidence (t0=0.6, beta=0.5):")
    for mc in (0.0, 0.25, 0.5, 0.75, 1.0):
        print(f"  mean conf {mc:4.2f} -> threshold {update_threshold(state, mc).value:.4f}")

    # a quick teacher: one training stage on a small labeled subset
    spec = generate_synthetic_dataset(40, (48, 48), num_classes=4, seed=3, root=OUT / "data")
    ds = load_segmentation_dataset(spec)
    lab, unl = make_splits(ds, SplitSpec(labeled_fraction=Fraction(1, 4), seed=0))
    cfg = TrainConfig(num_classes=4, seed=0, stage1_epochs=2, stage2_epochs=0,
                      batch_size_labeled=8, batch_size_unlabeled=8,
                      crop_size=(40, 40), lr_initial=0.02)
    unlabeled = [as_unlabeled(s) for s in ds.subset(unl)]
    trainer = Trainer(ds.subset(lab), unlabeled, cfg)
    trainer.run()
    print(f"\ntrained a teacher for {cfg.stage1_epochs} epochs "
          f"on {len(lab)} labeled images")

    # pseudo-labels for a few unlabeled samples
    from cwseg.core import SegBatch

    batch = SegBatch(unlabeled[:4])
    outputs = generate_pseudo_labels(trainer.pair.teacher.predict, batch)
    confs = [conf for _, conf in outputs]
    mc = batch_mean_confidence(confs)
    state = update_threshold(state, mc)
    print(f"batch mean confidence {mc:.3f} -> threshold {state.value:.4f}")

    static = ThresholdState(t0=0.6, beta=0.5, dynamic=False)
    print(f"retention, dynamic threshold {state.value:.3f} vs static {static.value:.2f}:")
    for sample, (labels, conf) in zip(batch.samples, outputs):
        kept_dyn = retain_mask(conf, state.value)
        kept_static = retain_mask(conf, static.value)
        print(f"  {sample.id}: {100 * kept_dyn.mean():6.2f}% vs "
              f"{100 * kept_static.mean():6.2f}%, mean conf {conf.mean():.3f}")

    # side by side: pseudo-labels, confidence, retention under the static cut
    sample, (labels, conf) = batch.samples[0], outputs[0]
    conf_img = np.repeat((255 * conf[..., None]).astype(np.uint8), 3, axis=2)
    kept_img = np.repeat(
        (255 * retain_mask(conf, static.value)[..., None]).astype(np.uint8), 3, axis=2)
    panel = np.concatenate([label_to_rgb(labels), conf_img, kept_img], axis=1)
    Image.fromarray(panel).save(OUT / "pseudo_conf_retain.png")
    print(f"panel (pseudo-labels | confidence | retained at {static.value:.2f}): "
          f"{OUT / 'pseudo_conf_retain.png'}")

    # decay: pixels that keep missing the threshold fade geometrically. The
    # stored confidence of a pixel below the cut is multiplied by alpha once
    # per epoch, so a persistently unsure pixel contributes less and less.
    pstate = PseudoLabelState()
    refresh_from_teacher(pstate, trainer.pair.teacher.predict, unlabeled[:4], static.value)
    sid = unlabeled[0].id
    rec = pstate.get(sid)
    below = rec.confidence < static.value
    if not below.any():
        raise SystemExit("teacher too confident for the decay illustration")
    low0 = float(rec.confidence[below].mean())
    print(f"\nconfidence decay, alpha=0.9, threshold {static.value:.2f}, "
          f"{100 * below.mean():.2f}% of {sid}'s pixels below it:")
    for epoch in range(1, 4):
        decay_all(pstate, static.value, DecayConfig(enabled=True, alpha=0.9))
        low = pstate.get(sid).confidence[below]
        print(f"  after epoch {epoch}: mean confidence of those pixels "
              f"{float(low.mean()):.4f} (started at {low0:.4f})")


if __name__ == "__main__":
    main()
