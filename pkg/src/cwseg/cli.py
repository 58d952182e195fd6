"""Command-line surface: generate / train / eval / visualize.

Every command is non-interactive, prints the resolved configuration before
doing work, and exits nonzero on failure (2 for configuration problems, 1 for
runtime failures). `train --show-config` prints the resolved config and stops.

Run outputs land under --out:
    config.resolved      the exact configuration the run used
    metrics.ndjson       one JSON record per optimizer step
    checkpoints/         versioned training state
    reports/             final evaluation report
    figures/             emitted images (visualize command)
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from .boundary import boundary_from_labels
from .config import PRESETS, dump_resolved, resolve_run_config
from .core import ConfigError, TrainingAbort, argmax_labels
from .data import (
    DatasetSpec,
    generate_synthetic_dataset,
    load_segmentation_dataset,
    make_splits,
)
from .metrics import evaluate, format_report
from .train import (
    MetricsWriter,
    Trainer,
    load_model_from_checkpoint,
    read_metrics,
)
from .visualize import plot_metric_curves, save_boundary_overlay, save_triptych

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError as exc:
        raise ConfigError(f"size must look like 64x64, got {text!r}") from exc


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cwseg",
        description="Confidence-weighted boundary-aware semi-supervised segmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic dataset")
    gen.add_argument("--n", type=int, required=True, help="number of images")
    gen.add_argument("--size", default="64x64", help="HxW, e.g. 64x64")
    gen.add_argument("--classes", type=int, default=4)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="dataset root directory")

    train = sub.add_parser("train", help="run the dual-stage pipeline")
    train.add_argument("--config", default=None, help="YAML config file")
    train.add_argument("--preset", default=None,
                       help=f"one of: {', '.join(sorted(PRESETS))}")
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--data-root", default=None)
    train.add_argument("--classes", type=int, default=None)
    train.add_argument("--kind", default=None,
                       choices=["synthetic", "voc-layout", "cityscapes-layout"])
    train.add_argument("--split", default=None,
                       help="labeled fraction (e.g. 1/8) or path to an id list file")
    train.add_argument("--out", default=None, help="output directory")
    train.add_argument("--gamma", type=float, default=None)
    train.add_argument("--beta", type=float, default=None)
    train.add_argument("--alpha", type=float, default=None)
    train.add_argument("--t0", type=float, default=None)
    train.add_argument("--lambda", dest="lambda_unsup", type=float, default=None)
    train.add_argument("--boundary-coeff", type=float, default=None)
    train.add_argument("--stage1-epochs", type=int, default=None)
    train.add_argument("--stage2-epochs", type=int, default=None)
    train.add_argument("--lr", type=float, default=None)
    train.add_argument("--crop", default=None, help="crop HxW, e.g. 48x48")
    train.add_argument("--checkpoint-every", type=int, default=5,
                       help="epochs between checkpoint writes")
    train.add_argument("--show-config", action="store_true",
                       help="print the resolved config and exit")

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data-root", required=True)
    ev.add_argument("--kind", default="synthetic",
                    choices=["synthetic", "voc-layout", "cityscapes-layout"])
    ev.add_argument("--classes", type=int, required=True)
    ev.add_argument("--out", default=None, help="directory for the report file")
    ev.add_argument("--which", default="student", choices=["student", "teacher"])

    vis = sub.add_parser("visualize", help="emit figures from a run")
    vis.add_argument("--checkpoint", default=None)
    vis.add_argument("--metrics", default=None, help="metrics.ndjson path")
    vis.add_argument("--data-root", default=None)
    vis.add_argument("--kind", default="synthetic",
                     choices=["synthetic", "voc-layout", "cityscapes-layout"])
    vis.add_argument("--classes", type=int, default=None)
    vis.add_argument("--ids", default=None, help="comma-separated sample ids")
    vis.add_argument("--out", required=True, help="figures directory")
    return parser


def _train_overrides(args) -> dict:
    """Nested override dict from flags; only explicitly-set flags appear."""
    over: dict = {"data": {}, "split": {}, "train": {"loss": {}, "threshold": {}, "decay": {}}}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["out_dir"] = args.out
    if args.data_root is not None:
        over["data"]["root"] = args.data_root
    if args.classes is not None:
        over["data"]["num_classes"] = args.classes
    if args.kind is not None:
        over["data"]["kind"] = args.kind
    if args.split is not None:
        if "/" in args.split and Path(args.split).exists():
            over["split"]["explicit_list"] = args.split
        else:
            over["split"]["labeled_fraction"] = args.split
    if args.gamma is not None:
        over["train"]["loss"]["gamma"] = args.gamma
    if args.lambda_unsup is not None:
        over["train"]["loss"]["lambda_unsup"] = args.lambda_unsup
    if args.boundary_coeff is not None:
        over["train"]["loss"]["boundary_coeff"] = args.boundary_coeff
    if args.beta is not None:
        over["train"]["threshold"]["beta"] = args.beta
    if args.t0 is not None:
        over["train"]["threshold"]["t0"] = args.t0
    if args.alpha is not None:
        over["train"]["decay"]["alpha"] = args.alpha
    if args.stage1_epochs is not None:
        over["train"]["stage1_epochs"] = args.stage1_epochs
    if args.stage2_epochs is not None:
        over["train"]["stage2_epochs"] = args.stage2_epochs
    if args.lr is not None:
        over["train"]["lr_initial"] = args.lr
    if args.crop is not None:
        over["train"]["crop_size"] = list(_parse_size(args.crop))
    return over


def cmd_generate_data(args) -> int:
    size = _parse_size(args.size)
    print(f"generating {args.n} images of size {size[0]}x{size[1]}, "
          f"{args.classes} classes, seed {args.seed} -> {args.out}")
    spec = generate_synthetic_dataset(args.n, size, args.classes, args.seed, args.out)
    manifest = Path(args.out) / "manifest"
    print(f"wrote {args.n} image/mask pairs under {spec.root}")
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_train(args) -> int:
    run, resolved = resolve_run_config(args.config, args.preset, _train_overrides(args))
    print("resolved configuration:")
    print(dump_resolved(resolved))
    if args.show_config:
        return EXIT_OK

    dataset = load_segmentation_dataset(run.data)
    labeled_ids, unlabeled_ids = make_splits(dataset, run.split)
    usable_labeled = [sid for sid in labeled_ids if sid not in dataset.unusable_ids]
    if len(usable_labeled) < len(labeled_ids):
        dropped = sorted(set(labeled_ids) - set(usable_labeled))
        print(f"warning: dropping fully-ignored labeled samples: {dropped}", file=sys.stderr)
    labeled = dataset.subset(usable_labeled)
    unlabeled = dataset.subset(unlabeled_ids)
    print(f"dataset: {len(dataset)} samples -> {len(labeled)} labeled, "
          f"{len(unlabeled)} unlabeled")

    out = run.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(dump_resolved(resolved))
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    with MetricsWriter(out / "metrics.ndjson") as writer:
        trainer = Trainer(labeled, unlabeled, run.train, writer=writer)
        print(f"training: {trainer.total_epochs} epochs x {trainer.steps_per_epoch} steps, "
              f"{trainer.pair.student.num_parameters()} parameters per model")
        try:
            for epoch in range(trainer.total_epochs):
                trainer.run(until_step=(epoch + 1) * trainer.steps_per_epoch)
                last = trainer.records[-1]
                print(f"epoch {epoch + 1}/{trainer.total_epochs} stage {last['stage']} "
                      f"loss {last['loss_total']:.4f} threshold {last['threshold']:.4f}")
                if (epoch + 1) % args.checkpoint_every == 0 or epoch == trainer.total_epochs - 1:
                    trainer.save_checkpoint(ckpt_dir / "last.npz")
        except TrainingAbort as abort:
            dump = {"error": str(abort), "batch_ids": abort.batch_ids,
                    "diagnostics": abort.diagnostics}
            (out / "abort_dump.json").write_text(json.dumps(dump, indent=2))
            print(f"training aborted: {abort}; diagnostics in {out / 'abort_dump.json'}",
                  file=sys.stderr)
            return EXIT_RUNTIME

    result = evaluate(trainer.pair.student.predict, labeled, run.train.num_classes,
                      ignore_index=run.data.ignore_index)
    report = format_report(result)
    print("final evaluation on the labeled split:")
    print(report)
    reports = out / "reports"
    reports.mkdir(exist_ok=True)
    (reports / "eval.json").write_text(json.dumps(result.to_dict(), indent=2))
    (reports / "eval.txt").write_text(report + "\n")
    print(f"outputs written under {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        print(f"checkpoint not found: {ckpt}", file=sys.stderr)
        return EXIT_RUNTIME
    model, cfg = load_model_from_checkpoint(ckpt, which=args.which)
    if cfg.num_classes != args.classes:
        raise ConfigError(
            f"checkpoint was trained with {cfg.num_classes} classes, "
            f"--classes says {args.classes}"
        )
    spec = DatasetSpec(kind=args.kind, root=Path(args.data_root), num_classes=args.classes)
    print(f"evaluating {args.which} of {ckpt} on {spec.root} ({spec.kind}, "
          f"{spec.num_classes} classes)")
    dataset = load_segmentation_dataset(spec)
    samples = [s for s in dataset if s.id not in dataset.unusable_ids]
    result = evaluate(model.predict, samples, args.classes, ignore_index=spec.ignore_index)
    report = format_report(result)
    print(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps(result.to_dict(), indent=2))
        (out / "eval.txt").write_text(report + "\n")
        print(f"report written to {out / 'eval.txt'}")
    return EXIT_OK


def cmd_visualize(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    did_something = False

    if args.metrics is not None:
        records = read_metrics(args.metrics)
        if not records:
            print(f"metrics stream {args.metrics} is empty", file=sys.stderr)
            return EXIT_RUNTIME
        path = plot_metric_curves(records, out / "curves.png")
        print(f"wrote {path}")
        did_something = True

    if args.checkpoint is not None:
        if args.data_root is None or args.classes is None:
            raise ConfigError("--checkpoint visualization needs --data-root and --classes")
        model, cfg = load_model_from_checkpoint(args.checkpoint)
        if cfg.num_classes != args.classes:
            raise ConfigError(
                f"checkpoint was trained with {cfg.num_classes} classes, "
                f"--classes says {args.classes}"
            )
        spec = DatasetSpec(kind=args.kind, root=Path(args.data_root), num_classes=args.classes)
        dataset = load_segmentation_dataset(spec)
        ids = (args.ids.split(",") if args.ids
               else [s.id for s in dataset.samples[:4]])
        for sid in ids:
            sample = dataset.by_id(sid.strip())
            logits = model.forward(sample.image[None])
            pred = argmax_labels(logits)[0]
            save_triptych(sample.image, sample.label, pred, out / f"triptych_{sample.id}.png",
                          ignore_index=spec.ignore_index)
            save_boundary_overlay(sample.image, boundary_from_labels(pred),
                                  out / f"boundary_{sample.id}.png")
            print(f"wrote {out / f'triptych_{sample.id}.png'} and "
                  f"{out / f'boundary_{sample.id}.png'}")
        did_something = True

    if not did_something:
        print("nothing to do: pass --metrics and/or --checkpoint", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "visualize": cmd_visualize,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAbort as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # pragma: no cover - last-resort reporting
        traceback.print_exc()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())
