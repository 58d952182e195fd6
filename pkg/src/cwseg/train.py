"""Dual-stage semi-supervised training driver.

Stage 1 trains the teacher on labeled data while, batch by batch, generating
pseudo-labels and confidences on augmented unlabeled images, moving the
dynamic threshold from the batch mean confidence, and training the student on
labeled CE plus the confidence-weighted pseudo-label term. At the end of
stage 1 the teacher's predictions over the whole unlabeled set are stored in
canonical (un-augmented) coordinates.

Stage 2, per epoch: stored confidences below the current threshold decay
geometrically; boundary masks are recomputed from the stored pseudo-labels;
the student trains on labeled CE + weighted CE + boundary CE (stored maps are
warped per batch with each sample's augmentation geometry); the teacher takes
a direct weight copy of the student on a fixed epoch cadence, optionally
followed by a pseudo-label refresh that resets accumulated decay.

Determinism contract: fixed seed => bit-identical metrics streams. Model
init, stage-1 data order, and stage-2 data order use separate child seeds, so
ablations that skip parts of the pipeline still share initializations. All
mutable state (weights, optimizer velocity, threshold, pseudo-labels, data
cursors, RNG states) round-trips through a single checkpoint file, so a
resumed run reproduces the uninterrupted one step for step.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import (
    AugmentConfig,
    StrongAugmentConfig,
    apply_to_confidence,
    apply_to_image,
    apply_to_label,
    apply_to_map,
    sample_augment_params,
)
from .boundary import boundary_from_labels
from .core import (
    IGNORE_INDEX,
    ConfigError,
    SegSample,
    TrainingAbort,
    argmax_labels,
    max_confidence,
    softmax_probs,
)
from .data import as_unlabeled
from .losses import (
    LossConfig,
    LossReport,
    batch_boundary_loss_with_grad,
    batch_confidence_weighted_ce_with_grad,
    labeled_ce,
    labeled_ce_with_grad,
)
from .model import ReferenceModel, SGD
from .pseudo import (
    DecayConfig,
    PseudoLabelState,
    ThresholdState,
    batch_mean_confidence,
    decay_all,
    refresh_from_teacher,
    retain_mask,
    update_threshold,
)

CHECKPOINT_FORMAT_VERSION = 1

METRIC_KEYS = (
    "step", "epoch", "stage", "lr", "loss_labeled", "loss_weighted",
    "loss_boundary", "loss_total", "mean_confidence", "threshold",
    "retention_fraction", "boundary_fraction",
)


def poly_lr(iteration: int, total_iters: int, lr_initial: float, power: float = 0.9) -> float:
    """Polynomial decay: lr_initial * (1 - iteration/total_iters) ** power."""
    if total_iters == 0:
        raise ConfigError("total_iters must be positive")
    if not 0 <= iteration <= total_iters:
        raise ValueError(f"iteration {iteration} outside [0, {total_iters}]")
    return lr_initial * (1.0 - iteration / total_iters) ** power


@dataclass(frozen=True)
class TrainConfig:
    num_classes: int = 4
    stage1_epochs: int = 5
    stage2_epochs: int = 15
    batch_size_labeled: int = 16
    batch_size_unlabeled: int = 16
    lr_initial: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    poly_power: float = 0.9
    crop_size: tuple[int, int] = (48, 48)
    scale_range: tuple[float, float] = (0.75, 1.25)
    flip_prob: float = 0.5
    seed: int = 0
    model_widths: tuple[int, int, int] = (12, 24, 48)
    loss: LossConfig = field(default_factory=LossConfig)
    threshold: ThresholdState = field(default_factory=ThresholdState)
    decay: DecayConfig = field(default_factory=DecayConfig)
    teacher_copy_every_epochs: int = 1
    # final objective includes the labeled term; False drops it in stage 2
    student_loss_includes_labeled: bool = True
    strong: StrongAugmentConfig = field(default_factory=StrongAugmentConfig)
    deterministic: bool = True  # serial data preparation (always serial here)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.stage1_epochs < 1:
            raise ConfigError(f"stage1_epochs must be >= 1, got {self.stage1_epochs}")
        if self.stage2_epochs < 0:
            raise ConfigError(f"stage2_epochs must be >= 0, got {self.stage2_epochs}")
        if self.batch_size_labeled < 1 or self.batch_size_unlabeled < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.lr_initial <= 0:
            raise ConfigError(f"lr_initial must be > 0, got {self.lr_initial}")
        if self.teacher_copy_every_epochs < 1:
            raise ConfigError("teacher_copy_every_epochs must be >= 1")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ConfigError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if not self.student_loss_includes_labeled and self.loss.lambda_unsup == 0 \
                and self.loss.boundary_coeff == 0:
            raise ConfigError("objective is empty: labeled term dropped and no unlabeled terms")

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(crop_size=self.crop_size, scale_range=self.scale_range,
                             flip_prob=self.flip_prob, strong=self.strong)


def train_config_to_dict(cfg: TrainConfig) -> dict:
    d = {
        "num_classes": cfg.num_classes,
        "stage1_epochs": cfg.stage1_epochs,
        "stage2_epochs": cfg.stage2_epochs,
        "batch_size_labeled": cfg.batch_size_labeled,
        "batch_size_unlabeled": cfg.batch_size_unlabeled,
        "lr_initial": cfg.lr_initial,
        "momentum": cfg.momentum,
        "weight_decay": cfg.weight_decay,
        "poly_power": cfg.poly_power,
        "crop_size": list(cfg.crop_size),
        "scale_range": list(cfg.scale_range),
        "flip_prob": cfg.flip_prob,
        "seed": cfg.seed,
        "model_widths": list(cfg.model_widths),
        "teacher_copy_every_epochs": cfg.teacher_copy_every_epochs,
        "student_loss_includes_labeled": cfg.student_loss_includes_labeled,
        "deterministic": cfg.deterministic,
        "loss": {"gamma": cfg.loss.gamma, "lambda_unsup": cfg.loss.lambda_unsup,
                 "boundary_coeff": cfg.loss.boundary_coeff},
        "threshold": {"t0": cfg.threshold.t0, "beta": cfg.threshold.beta,
                      "clamp_low": cfg.threshold.clamp_low,
                      "clamp_high": cfg.threshold.clamp_high,
                      "dynamic": cfg.threshold.dynamic},
        "decay": {"alpha": cfg.decay.alpha, "enabled": cfg.decay.enabled,
                  "refresh_on_teacher_update": cfg.decay.refresh_on_teacher_update},
        "strong": {
            "enabled": cfg.strong.enabled,
            "channel_jitter": cfg.strong.channel_jitter,
            "channel_shift": cfg.strong.channel_shift,
            "grayscale_prob": cfg.strong.grayscale_prob,
            "blur_prob": cfg.strong.blur_prob,
            "blur_sigma_range": list(cfg.strong.blur_sigma_range),
            "cutout_prob": cfg.strong.cutout_prob,
            "cutout_frac": cfg.strong.cutout_frac,
        },
    }
    return d


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    loss = LossConfig(**d.pop("loss"))
    threshold = ThresholdState(**d.pop("threshold"))
    decay = DecayConfig(**d.pop("decay"))
    strong_d = d.pop("strong")
    strong_d["blur_sigma_range"] = tuple(strong_d["blur_sigma_range"])
    strong = StrongAugmentConfig(**strong_d)
    for key in ("crop_size", "scale_range", "model_widths"):
        d[key] = tuple(d[key])
    return TrainConfig(loss=loss, threshold=threshold, decay=decay, strong=strong, **d)


@dataclass
class ModelPair:
    """Teacher and student of identical architecture.

    The teacher never receives gradients; its weights change only through
    explicit copy events.
    """

    teacher: ReferenceModel
    student: ReferenceModel

    def __post_init__(self):
        tshapes = {k: v.shape for k, v in self.teacher.params.items()}
        sshapes = {k: v.shape for k, v in self.student.params.items()}
        if tshapes != sshapes:
            raise ValueError("teacher and student parameter shapes differ")


def update_teacher(pair: ModelPair) -> ModelPair:
    """Direct weight copy student -> teacher; elementwise exact, no averaging."""
    pair.teacher.copy_weights_from(pair.student)
    return pair


class MetricsWriter:
    """Newline-delimited JSON metrics stream."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(record) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    return [json.loads(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]


@dataclass
class TrainResult:
    pair: ModelPair
    threshold: ThresholdState
    pseudo: PseudoLabelState
    records: list[dict]


class Trainer:
    """Owns all mutable training state; one object per run.

    The global step counter drives everything: the epoch, the stage, the LR
    schedule, and the epoch-boundary hooks, so a checkpoint taken at any step
    resumes bit-identically.
    """

    def __init__(self, labeled: list[SegSample], unlabeled: list[SegSample],
                 cfg: TrainConfig, writer: MetricsWriter | None = None):
        if not labeled:
            raise ConfigError("empty labeled set")
        for s in labeled:
            if s.label is None:
                raise ConfigError(f"labeled sample {s.id!r} has no ground truth")
        self.cfg = cfg
        self.labeled = list(labeled)
        self.unlabeled = [as_unlabeled(s) for s in unlabeled]
        self.writer = writer
        self.aug_cfg = cfg.augment_config()

        # which parts of the unlabeled machinery ever run
        self.unsup_stage1 = cfg.loss.lambda_unsup > 0
        self.unsup_stage2 = cfg.loss.lambda_unsup > 0 or cfg.loss.boundary_coeff > 0
        if (self.unsup_stage1 or self.unsup_stage2) and not self.unlabeled:
            raise ConfigError("unlabeled loss terms are enabled but no unlabeled data given")

        if self.unlabeled:
            self.steps_per_epoch = math.ceil(len(self.unlabeled) / cfg.batch_size_unlabeled)
        else:
            self.steps_per_epoch = math.ceil(len(self.labeled) / cfg.batch_size_labeled)
        self.total_epochs = cfg.stage1_epochs + cfg.stage2_epochs
        self.total_steps = self.total_epochs * self.steps_per_epoch

        init_t, init_s, data1, data2 = np.random.SeedSequence(cfg.seed).spawn(4)
        self.pair = ModelPair(
            teacher=ReferenceModel(cfg.num_classes, widths=cfg.model_widths,
                                   rng=np.random.default_rng(init_t)),
            student=ReferenceModel(cfg.num_classes, widths=cfg.model_widths,
                                   rng=np.random.default_rng(init_s)),
        )
        self.opt_teacher = SGD(cfg.momentum, cfg.weight_decay)
        self.opt_student = SGD(cfg.momentum, cfg.weight_decay)
        self._rngs = {1: np.random.default_rng(data1), 2: np.random.default_rng(data2)}
        self.threshold = cfg.threshold
        self.pseudo = PseudoLabelState()
        self._boundary_masks: dict[str, np.ndarray] = {}
        self._perm = {"labeled": np.empty(0, dtype=np.int64),
                      "unlabeled": np.empty(0, dtype=np.int64)}
        self._cursor = {"labeled": 0, "unlabeled": 0}
        self.global_step = 0
        self.records: list[dict] = []

    # -- bookkeeping -------------------------------------------------------

    @property
    def epoch(self) -> int:
        return min(self.global_step // self.steps_per_epoch, self.total_epochs - 1)

    @property
    def stage(self) -> int:
        return 1 if self.epoch < self.cfg.stage1_epochs else 2

    def _rng(self) -> np.random.Generator:
        return self._rngs[self.stage]

    def _next_indices(self, side: str, batch_size: int) -> list[int]:
        pool = len(self.labeled) if side == "labeled" else len(self.unlabeled)
        rng = self._rng()
        out: list[int] = []
        while len(out) < batch_size:
            if self._cursor[side] >= len(self._perm[side]):
                self._perm[side] = rng.permutation(pool)
                self._cursor[side] = 0
            take = min(batch_size - len(out), len(self._perm[side]) - self._cursor[side])
            out.extend(int(i) for i in self._perm[side][self._cursor[side]:self._cursor[side] + take])
            self._cursor[side] += take
        return out

    # -- epoch hooks -------------------------------------------------------

    def _on_epoch_start(self, epoch: int) -> None:
        if self.stage == 2 and self.unsup_stage2:
            if len(self.pseudo) == 0:
                raise RuntimeError("stage 2 requires pseudo-label state from stage 1")
            decay_all(self.pseudo, self.threshold.value, self.cfg.decay)
            self._rebuild_boundary_masks()

    def _on_epoch_end(self, epoch: int) -> None:
        cfg = self.cfg
        if self.stage == 1 and epoch == cfg.stage1_epochs - 1 and self.unsup_stage2 \
                and cfg.stage2_epochs > 0:
            refresh_from_teacher(self.pseudo, self.pair.teacher.predict, self.unlabeled,
                                 self.threshold.value, epoch=epoch)
        if self.stage == 2:
            epoch_in_stage = epoch - cfg.stage1_epochs
            if (epoch_in_stage + 1) % cfg.teacher_copy_every_epochs == 0:
                update_teacher(self.pair)
                last_epoch = epoch == self.total_epochs - 1
                if cfg.decay.refresh_on_teacher_update and self.unsup_stage2 and not last_epoch:
                    refresh_from_teacher(self.pseudo, self.pair.teacher.predict,
                                         self.unlabeled, self.threshold.value, epoch=epoch)

    def _rebuild_boundary_masks(self) -> None:
        self._boundary_masks = {
            sid: boundary_from_labels(rec.labels)
            for sid, rec in self.pseudo.records.items()
        }

    # -- one optimizer step ------------------------------------------------

    def _labeled_batch(self):
        idx = self._next_indices("labeled", self.cfg.batch_size_labeled)
        rng = self._rng()
        images, labels, ids = [], [], []
        for i in idx:
            s = self.labeled[i]
            p = sample_augment_params(s.image.shape[1:], self.aug_cfg, rng, strong=False)
            images.append(apply_to_image(s.image, p))
            labels.append(apply_to_label(s.label, p))
            ids.append(s.id)
        return np.stack(images), np.stack(labels).astype(np.int64), ids

    def _unlabeled_batch(self):
        """Images plus per-batch pseudo supervision, stage-appropriate."""
        cfg = self.cfg
        idx = self._next_indices("unlabeled", cfg.batch_size_unlabeled)
        rng = self._rng()
        samples = [self.unlabeled[i] for i in idx]
        params = [
            sample_augment_params(s.image.shape[1:], self.aug_cfg, rng,
                                  strong=cfg.strong.enabled)
            for s in samples
        ]
        ids = [s.id for s in samples]
        if self.stage == 1:
            weak = np.stack([
                apply_to_image(s.image, replace(p, strong=None))
                for s, p in zip(samples, params)
            ])
            logits = self.pair.teacher.forward(weak)
            if not np.isfinite(logits).all():
                raise TrainingAbort("teacher produced non-finite logits", ids,
                                    {"step": self.global_step})
            pseudo = argmax_labels(logits)
            conf = max_confidence(softmax_probs(logits)).astype(np.float64)
            valid = np.ones(pseudo.shape, dtype=bool)
            boundary = None
            if cfg.strong.enabled:
                student_in = np.stack([apply_to_image(s.image, p)
                                       for s, p in zip(samples, params)])
            else:
                student_in = weak
        else:
            student_in = np.stack([apply_to_image(s.image, p)
                                   for s, p in zip(samples, params)])
            pseudo = np.stack([apply_to_label(self.pseudo.get(s.id).labels, p)
                               for s, p in zip(samples, params)])
            conf = np.stack([apply_to_confidence(self.pseudo.get(s.id).confidence, p)
                             for s, p in zip(samples, params)])
            boundary = np.stack([
                apply_to_map(self._boundary_masks[s.id].astype(np.uint8), p, 0)
                for s, p in zip(samples, params)
            ]).astype(bool)
            valid = pseudo != IGNORE_INDEX
        return student_in, pseudo, conf, valid, boundary, ids

    def training_step(self, lr: float | None = None) -> LossReport:
        """One student update (teacher too in stage 1); appends one metrics record.

        The threshold moves before retention is computed, so a batch is always
        filtered against the threshold its own mean confidence produced.
        """
        cfg = self.cfg
        stage = self.stage
        epoch = self.epoch
        if self.global_step % self.steps_per_epoch == 0:
            self._on_epoch_start(epoch)
        if lr is None:
            lr = poly_lr(self.global_step, self.total_steps, cfg.lr_initial, cfg.poly_power)

        x_l, y_l, labeled_ids = self._labeled_batch()
        unsup_now = self.unsup_stage1 if stage == 1 else self.unsup_stage2

        # the teacher exists for any consumer of pseudo-labels, including a
        # stage-2-only boundary term
        if stage == 1 and self.unsup_stage2:
            t_logits, t_cache = self.pair.teacher.forward(x_l, want_cache=True)
            t_loss, t_grad, _ = labeled_ce_with_grad(t_logits, y_l)
            if not math.isfinite(t_loss):
                raise TrainingAbort("teacher loss is non-finite", labeled_ids,
                                    {"step": self.global_step, "loss": t_loss, "lr": lr})
            self.opt_teacher.step(self.pair.teacher.params,
                                  self.pair.teacher.backward(t_cache, t_grad), lr)

        mean_conf = retention = boundary_frac = None
        w_loss = b_loss = 0.0
        grads: dict[str, np.ndarray] = {}
        include_labeled = cfg.student_loss_includes_labeled or stage == 1

        if include_labeled:
            l_logits, l_cache = self.pair.student.forward(x_l, want_cache=True)
            l_loss, l_grad, _ = labeled_ce_with_grad(l_logits, y_l)
            grads = self.pair.student.backward(l_cache, l_grad)
        else:
            l_loss = labeled_ce(self.pair.student.forward(x_l), y_l)

        retained_px = boundary_px = 0
        if unsup_now:
            x_u, pseudo, conf, valid, boundary, unlabeled_ids = self._unlabeled_batch()
            mean_conf = batch_mean_confidence(list(conf), list(valid))
            self.threshold = update_threshold(self.threshold, mean_conf)
            retain = retain_mask(conf, self.threshold.value) & valid
            retention = float(retain.mean())
            retained_px = int(retain.sum())
            u_logits, u_cache = self.pair.student.forward(x_u, want_cache=True)
            w_loss, w_grad = batch_confidence_weighted_ce_with_grad(
                u_logits, pseudo, conf, retain, cfg.loss.gamma)
            u_grad = cfg.loss.lambda_unsup * w_grad
            if stage == 2 and cfg.loss.boundary_coeff > 0:
                b_loss, b_grad = batch_boundary_loss_with_grad(u_logits, pseudo, boundary)
                u_grad = u_grad + cfg.loss.boundary_coeff * b_grad
                boundary_frac = float(boundary.mean())
                boundary_px = int(boundary.sum())
            for k, v in self.pair.student.backward(u_cache, u_grad).items():
                grads[k] = grads[k] + v if k in grads else v
        else:
            unlabeled_ids = []

        total = (l_loss if include_labeled else 0.0) \
            + cfg.loss.lambda_unsup * w_loss + cfg.loss.boundary_coeff * b_loss
        if not math.isfinite(total):
            raise TrainingAbort(
                "student loss is non-finite", labeled_ids + unlabeled_ids,
                {"step": self.global_step, "labeled": l_loss, "weighted": w_loss,
                 "boundary": b_loss, "lr": lr},
            )
        self.opt_student.step(self.pair.student.params, grads, lr)

        record = {
            "step": self.global_step, "epoch": epoch, "stage": stage, "lr": lr,
            "loss_labeled": l_loss, "loss_weighted": w_loss, "loss_boundary": b_loss,
            "loss_total": total, "mean_confidence": mean_conf,
            "threshold": self.threshold.value, "retention_fraction": retention,
            "boundary_fraction": boundary_frac,
        }
        self.records.append(record)
        if self.writer is not None:
            self.writer.write(record)

        if (self.global_step + 1) % self.steps_per_epoch == 0:
            self._on_epoch_end(epoch)
        self.global_step += 1
        return LossReport(
            labeled=l_loss, weighted=w_loss, boundary=b_loss, total=total,
            pixel_counts={"retained": retained_px, "boundary": boundary_px},
            no_labeled_pixels=False,
        )

    # -- driving -----------------------------------------------------------

    def run(self, until_step: int | None = None) -> TrainResult:
        stop = self.total_steps if until_step is None else min(until_step, self.total_steps)
        while self.global_step < stop:
            self.training_step()
        return TrainResult(self.pair, self.threshold, self.pseudo, self.records)

    # -- checkpointing -----------------------------------------------------

    def save_checkpoint(self, path) -> None:
        """All mutable state in one versioned .npz container."""
        arrays: dict[str, np.ndarray] = {}
        for prefix, model in (("teacher", self.pair.teacher), ("student", self.pair.student)):
            for k, v in model.params.items():
                arrays[f"{prefix}/{k}"] = v
        for prefix, opt in (("opt_t", self.opt_teacher), ("opt_s", self.opt_student)):
            for k, v in opt.velocity.items():
                arrays[f"{prefix}/{k}"] = v
        for sid, rec in self.pseudo.records.items():
            arrays[f"pl_labels/{sid}"] = rec.labels
            arrays[f"pl_conf/{sid}"] = rec.confidence
            arrays[f"pl_retain/{sid}"] = rec.retain
        arrays["perm/labeled"] = self._perm["labeled"]
        arrays["perm/unlabeled"] = self._perm["unlabeled"]
        meta = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": train_config_to_dict(self.cfg),
            "global_step": self.global_step,
            "threshold_value": self.threshold.value,
            "cursors": self._cursor,
            "rng_state": {str(k): g.bit_generator.state for k, g in self._rngs.items()},
            "pseudo_ids": sorted(self.pseudo.records),
            "pseudo_last_refresh": self.pseudo.epoch_of_last_refresh,
            "labeled_ids": [s.id for s in self.labeled],
            "unlabeled_ids": [s.id for s in self.unlabeled],
        }
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            np.savez_compressed(fh, **arrays)

    @classmethod
    def load_checkpoint(cls, path, labeled: list[SegSample], unlabeled: list[SegSample],
                        writer: MetricsWriter | None = None) -> "Trainer":
        """Rebuild a trainer that continues exactly where the saved one stood.

        The datasets are not stored in the checkpoint; the caller must pass
        the same samples (ids are validated).
        """
        with np.load(path) as data:
            meta = json.loads(io.BytesIO(data["meta"].tobytes()).getvalue().decode())
            if meta["format_version"] != CHECKPOINT_FORMAT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta['format_version']}")
            cfg = train_config_from_dict(meta["config"])
            trainer = cls(labeled, unlabeled, cfg, writer=writer)
            if [s.id for s in trainer.labeled] != meta["labeled_ids"] or \
                    [s.id for s in trainer.unlabeled] != meta["unlabeled_ids"]:
                raise ValueError("checkpoint was written for different sample ids")
            for prefix, model in (("teacher", trainer.pair.teacher),
                                  ("student", trainer.pair.student)):
                model.load_state_dict({
                    k[len(prefix) + 1:]: data[k] for k in data.files
                    if k.startswith(prefix + "/")
                })
            for prefix, opt in (("opt_t", trainer.opt_teacher), ("opt_s", trainer.opt_student)):
                opt.velocity = {
                    k[len(prefix) + 1:]: data[k].copy() for k in data.files
                    if k.startswith(prefix + "/")
                }
            from .pseudo import PseudoRecord

            for sid in meta["pseudo_ids"]:
                trainer.pseudo.records[sid] = PseudoRecord(
                    labels=data[f"pl_labels/{sid}"],
                    confidence=data[f"pl_conf/{sid}"],
                    retain=data[f"pl_retain/{sid}"],
                )
            trainer.pseudo.epoch_of_last_refresh = meta["pseudo_last_refresh"]
            trainer._perm["labeled"] = data["perm/labeled"].copy()
            trainer._perm["unlabeled"] = data["perm/unlabeled"].copy()
        trainer._cursor = {k: int(v) for k, v in meta["cursors"].items()}
        trainer.global_step = int(meta["global_step"])
        trainer.threshold = replace(cfg.threshold, value=meta["threshold_value"])
        for k, g in trainer._rngs.items():
            g.bit_generator.state = meta["rng_state"][str(k)]
        if trainer.pseudo.records:
            trainer._rebuild_boundary_masks()
        return trainer


def training_step(trainer: Trainer, lr: float | None = None) -> LossReport:
    """One optimizer step on the bundled state; see Trainer.training_step."""
    return trainer.training_step(lr=lr)


def load_model_from_checkpoint(path, which: str = "student") -> tuple[ReferenceModel, TrainConfig]:
    """Rebuild one model (weights only) from a checkpoint file."""
    if which not in ("student", "teacher"):
        raise ValueError(f"which must be 'student' or 'teacher', got {which!r}")
    with np.load(path) as data:
        meta = json.loads(io.BytesIO(data["meta"].tobytes()).getvalue().decode())
        if meta["format_version"] != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['format_version']}")
        cfg = train_config_from_dict(meta["config"])
        model = ReferenceModel(cfg.num_classes, widths=cfg.model_widths)
        model.load_state_dict({
            k[len(which) + 1:]: data[k] for k in data.files if k.startswith(which + "/")
        })
    return model, cfg


@dataclass
class Stage1Result:
    """Everything stage 2 needs to continue, plus the stage-1 metrics."""

    trainer: Trainer

    @property
    def pair(self) -> ModelPair:
        return self.trainer.pair

    @property
    def threshold(self) -> ThresholdState:
        return self.trainer.threshold

    @property
    def pseudo(self) -> PseudoLabelState:
        return self.trainer.pseudo

    @property
    def records(self) -> list[dict]:
        return self.trainer.records


def train_stage1(labeled, unlabeled, cfg: TrainConfig,
                 writer: MetricsWriter | None = None) -> Stage1Result:
    """Run stage 1 only (the LR schedule still spans both stages)."""
    trainer = Trainer(labeled, unlabeled, cfg, writer=writer)
    trainer.run(until_step=cfg.stage1_epochs * trainer.steps_per_epoch)
    return Stage1Result(trainer)


def train_stage2(stage1: Stage1Result | Trainer) -> TrainResult:
    """Continue a stage-1 result through stage 2 to completion."""
    trainer = stage1.trainer if isinstance(stage1, Stage1Result) else stage1
    if trainer.global_step < trainer.cfg.stage1_epochs * trainer.steps_per_epoch:
        raise RuntimeError("stage 1 has not finished; run train_stage1 first")
    if trainer.unsup_stage2 and len(trainer.pseudo) == 0 and trainer.cfg.stage2_epochs > 0:
        raise RuntimeError("stage 2 requires pseudo-label state from stage 1")
    return trainer.run()


def run_training(labeled, unlabeled, cfg: TrainConfig,
                 writer: MetricsWriter | None = None,
                 checkpoint_path=None, checkpoint_every_epochs: int | None = None) -> TrainResult:
    """Both stages end to end, optionally checkpointing on an epoch cadence."""
    trainer = Trainer(labeled, unlabeled, cfg, writer=writer)
    if checkpoint_path is None:
        return trainer.run()
    every = checkpoint_every_epochs or trainer.total_epochs
    for epoch in range(trainer.total_epochs):
        trainer.run(until_step=(epoch + 1) * trainer.steps_per_epoch)
        if (epoch + 1) % every == 0 or epoch == trainer.total_epochs - 1:
            trainer.save_checkpoint(checkpoint_path)
    return TrainResult(trainer.pair, trainer.threshold, trainer.pseudo, trainer.records)
